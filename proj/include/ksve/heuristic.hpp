#pragma once

// Coulomb counting, the piecewise-constant h(SOC, sgn I) table and the
// OCV-SOC based stage II correction, plus derivation of the SOC regions from
// zero crossings of the second and third OCV derivatives.

#include <string>
#include <vector>

#include "ksve/pack_sim.hpp"
#include "ksve/types.hpp"

namespace ksve {

struct SocTracker {
  double soc = 0.5;
  double capacity_ah = 5.0;
  double dt_s = 1.0;
  long clamp_events = 0;
};

/// soc <- soc - dt * I / (3600 Q), clamped to [0, 1]. Discharge (I > 0) lowers SOC.
SocTracker soc_update(const SocTracker& tracker, double current_a);

/// sgn(I) with I = 0 mapped to the previous nonzero direction.
/// +1 discharging, -1 charging.
class CurrentDirection {
 public:
  explicit CurrentDirection(int initial = 1) : last_(initial >= 0 ? 1 : -1) {}
  int update(double current_a) {
    if (current_a > 0.0) last_ = 1;
    if (current_a < 0.0) last_ = -1;
    return last_;
  }
  int value() const { return last_; }

 private:
  int last_;
};

struct HeuristicRegion {
  int index = 0;  // 1-based
  double lo = 0.0;
  double hi = 1.0;
  double h_discharge = 1.0;
  double h_charge = 1.0;
};

struct HeuristicTable {
  std::vector<HeuristicRegion> regions;
  OcvSocMap ocv_map;  // pack-scaled

  void validate() const;
  double h(double soc, int sign) const;

  /// The 14-region table. Regions 12 and 13 share the breakpoint that the
  /// printed table garbles; 0.792 keeps the intervals increasing.
  static HeuristicTable standard(OcvSocMap ocv_map = {}, double repaired_breakpoint = 0.792);
  /// Same h values on caller-supplied boundaries (13 interior points).
  static HeuristicTable with_boundaries(const std::vector<double>& interior, OcvSocMap ocv_map = {});
};

/// 1-based region index with half-open intervals; soc = 1 maps to the last region.
int region_of(double soc, const HeuristicTable& table);

/// e2 = h(soc, sign) * e1 + (1 - soc) * delta_ocv, per module.
VectorXd heuristic_stage2(const VectorXd& e1, double soc, int current_sign, double delta_ocv,
                          const HeuristicTable& table);

struct RegionDerivation {
  std::vector<double> boundaries;  // merged, sorted
  std::vector<double> d2_zeros;
  std::vector<double> d3_zeros;
  std::string diagnostic;  // non-empty when fewer than two boundaries were found
};

/// Interpolates the map with a not-a-knot cubic spline onto `grid_points`
/// uniform SOC samples, takes central differences of orders 1 to 3, each
/// followed by a moving average of `smoothing` samples, and returns the
/// linearly interpolated sign changes of orders 2 and 3. Values within
/// 1e-3 of the largest magnitude of an order are treated as zero.
RegionDerivation derive_regions(const OcvSocMap& map, int smoothing = 5, int grid_points = 1001);

/// Not-a-knot cubic spline through the given knots, evaluated at `at`.
std::vector<double> not_a_knot_spline(const std::vector<double>& x, const std::vector<double>& y,
                                      const std::vector<double>& at);

}  // namespace ksve
