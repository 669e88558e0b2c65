#pragma once

// Equivalent-circuit battery pack simulator.
//
// Each module is `series_per_module` series groups of `parallel_per_series`
// cells, modelled as one first-order Thevenin cell (OCV source, series
// resistance r0, one r1/c1 polarization pair) scaled by the series count.
// Modules carry the same branch current; positive current discharges.

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ksve/telemetry.hpp"
#include "ksve/types.hpp"

namespace ksve {

/// Natural cubic spline through strictly increasing (soc, volts) knots.
class OcvCurve {
 public:
  OcvCurve(std::vector<double> soc, std::vector<double> volts);

  double operator()(double soc) const;
  double derivative(double soc) const;

  const std::vector<double>& soc_knots() const { return soc_; }
  const std::vector<double>& volt_knots() const { return volts_; }
  double front() const { return volts_.front(); }
  double back() const { return volts_.back(); }

 private:
  std::size_t segment(double soc) const;

  std::vector<double> soc_;
  std::vector<double> volts_;
  std::vector<double> second_;  // spline second derivatives at knots
};

/// Voltages of the checked-in NMC-shaped table, uniform SOC spacing on [0, 1].
const std::vector<double>& default_ocv_table_volts();
std::shared_ptr<const OcvCurve> default_ocv_curve();

struct CellParams {
  double capacity_ah = 5.0;
  double v_min = 2.5;
  double v_max = 4.2;
  double r0 = 0.02;
  double r1 = 0.01;
  double c1 = 3000.0;
  std::shared_ptr<const OcvCurve> ocv = default_ocv_curve();

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

struct PackTopology {
  int modules = 1;
  int series_per_module = 1;
  int parallel_per_series = 1;
  std::string label;

  void validate() const;
  long total_cells() const {
    return static_cast<long>(modules) * series_per_module * parallel_per_series;
  }
  double module_capacity_ah(const CellParams& cell) const {
    return cell.capacity_ah * parallel_per_series;
  }

  static PackTopology p5s60();   // 3 modules, 250 V class
  static PackTopology p5s80();   // 5 modules, 335 V class
  static PackTopology p5s100();  // 4 modules, 420 V class
  /// Accepts "5p60s", "5p80s", "5p100s".
  static PackTopology preset(const std::string& name);
};

/// Linear capacity fade and resistance growth.
CellParams apply_aging(const CellParams& cell, int cycles, double fade_per_cycle,
                       double r_growth_per_cycle);

struct Heterogeneity {
  double param_jitter = 0.01;  // relative, uniform in [-j, j]
  double soc_jitter = 0.01;    // absolute initial SOC spread, uniform in [-j, j]
};

/// Per-module cell parameters after seeded jitter.
struct ModuleParams {
  double capacity_ah;  // cell capacity
  double r0;
  double r1;
  double c1;
  double soc_offset;
};

struct Pack {
  PackTopology topology;
  CellParams cell;  // aged cell
  std::vector<ModuleParams> modules;
  double max_c_rate = 3.0;
  int cycle_count = 0;
  /// Cell capacity that C-rates refer to; the unaged value for aged packs.
  double rated_capacity_ah = 0.0;

  /// Draws the per-module perturbations once from `seed`.
  static Pack build(const PackTopology& topology, const CellParams& cell,
                    const Heterogeneity& het, std::uint64_t seed, int cycle_count = 0);

  int size() const { return topology.modules; }
  double module_capacity_ah() const { return topology.module_capacity_ah(cell); }
};

struct PackState {
  VectorXd soc;         // per module
  VectorXd rc_voltage;  // per module, per cell
  int cycle_count = 0;
  double effective_capacity_ah = 0.0;
  double effective_r0 = 0.0;

  double mean_soc() const { return soc.mean(); }
};

/// Rest state at `soc` (plus each module's seeded offset), RC branches relaxed.
PackState initial_state(const Pack& pack, double soc);

/// Terminal module voltages for a state with `current_a` flowing.
VectorXd module_voltages(const Pack& pack, const PackState& state, double current_a);

struct StepResult {
  PackState state;
  VectorXd module_voltages;
  bool cutoff = false;
  std::string cutoff_reason;
};

/// Advances every module by `dt_s` under branch current `current_a`.
/// Throws std::invalid_argument on dt_s <= 0 or a current above max C-rate.
StepResult step_pack(const Pack& pack, const PackState& state, double current_a, double dt_s);

enum class ProtocolMode { charge, discharge, cycle };

struct Protocol {
  ProtocolMode mode = ProtocolMode::charge;
  double c_rate = 1.0;
  double soc_lo = 0.3;
  double soc_hi = 0.7;
  double rest_s = 0.0;
  int cycles = 1;
  double dt_s = 1.0;
  /// Optional cap on stream length in seconds.
  std::optional<double> duration_s;
  /// Added to every frame timestamp.
  double t0_s = 0.0;
  /// Gaussian measurement noise on v_meas, volts.
  double noise_std_v = 0.0;
  std::uint64_t noise_seed = 0;
};

struct ProtocolResult {
  TelemetryStream stream;
  PackState final_state;
  bool completed = true;
  std::string diagnostic;
};

/// Constant-current protocol. Frame k carries the current commanded at t_k
/// (applied over [t_k, t_k + dt)) and the voltages sampled at t_k, before
/// that current is applied.
ProtocolResult run_protocol(const Pack& pack, const PackState& initial, const Protocol& protocol);

/// Sampled OCV-SOC lookup table; `scale` multiplies the cell-level curve.
struct OcvSocMap {
  std::vector<double> soc_grid;
  std::vector<double> ocv_volts;
  int scale = 1;

  /// Linear interpolation, clamped at the grid ends.
  double operator()(double soc) const;
  OcvSocMap scaled(int factor) const;
};

/// Charges a single cell at C/100 from empty to full, logging terminal
/// voltage once per second against Coulomb-counted SOC, then resamples onto
/// `resolution` uniformly spaced SOC points. Throws std::runtime_error if the
/// logged curve is not strictly increasing.
OcvSocMap build_ocv_soc_map(const CellParams& cell, int resolution);

}  // namespace ksve
