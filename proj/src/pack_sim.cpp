#include "ksve/pack_sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ksve {

OcvCurve::OcvCurve(std::vector<double> soc, std::vector<double> volts)
    : soc_(std::move(soc)), volts_(std::move(volts)) {
  const std::size_t n = soc_.size();
  if (n < 3 || volts_.size() != n) {
    throw std::invalid_argument("OCV curve needs at least 3 matching knots");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!(soc_[i] > soc_[i - 1])) throw std::invalid_argument("OCV knots must be increasing in SOC");
    if (!(volts_[i] > volts_[i - 1])) throw std::invalid_argument("OCV curve must be strictly increasing");
  }

  // Natural spline: tridiagonal system for interior second derivatives.
  second_.assign(n, 0.0);
  std::vector<double> diag(n, 0.0), upper(n, 0.0), rhs(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = soc_[i] - soc_[i - 1];
    const double h1 = soc_[i + 1] - soc_[i];
    diag[i] = 2.0 * (h0 + h1);
    upper[i] = h1;
    rhs[i] = 6.0 * ((volts_[i + 1] - volts_[i]) / h1 - (volts_[i] - volts_[i - 1]) / h0);
  }
  for (std::size_t i = 2; i + 1 < n; ++i) {
    const double w = (soc_[i] - soc_[i - 1]) / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    second_[i] = (rhs[i] - upper[i] * second_[i + 1]) / diag[i];
  }
}

std::size_t OcvCurve::segment(double soc) const {
  const auto it = std::upper_bound(soc_.begin(), soc_.end(), soc);
  const auto idx = static_cast<std::size_t>(std::distance(soc_.begin(), it));
  return std::clamp<std::size_t>(idx == 0 ? 0 : idx - 1, 0, soc_.size() - 2);
}

double OcvCurve::operator()(double soc) const {
  soc = std::clamp(soc, soc_.front(), soc_.back());
  const std::size_t i = segment(soc);
  const double h = soc_[i + 1] - soc_[i];
  const double a = (soc_[i + 1] - soc) / h;
  const double b = (soc - soc_[i]) / h;
  return a * volts_[i] + b * volts_[i + 1] +
         ((a * a * a - a) * second_[i] + (b * b * b - b) * second_[i + 1]) * h * h / 6.0;
}

double OcvCurve::derivative(double soc) const {
  soc = std::clamp(soc, soc_.front(), soc_.back());
  const std::size_t i = segment(soc);
  const double h = soc_[i + 1] - soc_[i];
  const double a = (soc_[i + 1] - soc) / h;
  const double b = (soc - soc_[i]) / h;
  return (volts_[i + 1] - volts_[i]) / h +
         ((1.0 - 3.0 * a * a) * second_[i] + (3.0 * b * b - 1.0) * second_[i + 1]) * h / 6.0;
}

std::shared_ptr<const OcvCurve> default_ocv_curve() {
  static const auto curve = [] {
    const auto& volts = default_ocv_table_volts();
    std::vector<double> soc(volts.size());
    for (std::size_t i = 0; i < soc.size(); ++i) {
      soc[i] = static_cast<double>(i) / static_cast<double>(soc.size() - 1);
    }
    return std::make_shared<const OcvCurve>(std::move(soc), volts);
  }();
  return curve;
}

void CellParams::validate() const {
  if (!(capacity_ah > 0.0)) throw std::invalid_argument("cell.capacity_ah must be positive");
  if (!(v_min < v_max)) throw std::invalid_argument("cell.v_min must be below cell.v_max");
  if (!(r0 > 0.0) || !(r1 > 0.0) || !(c1 > 0.0)) {
    throw std::invalid_argument("cell.r0, cell.r1 and cell.c1 must be positive");
  }
  if (!ocv) throw std::invalid_argument("cell.ocv is missing");
  if (std::abs(ocv->soc_knots().front()) > 1e-12 || std::abs(ocv->soc_knots().back() - 1.0) > 1e-12) {
    throw std::invalid_argument("cell.ocv must span SOC [0, 1]");
  }
  if (std::abs(ocv->front() - v_min) > 1e-9 || std::abs(ocv->back() - v_max) > 1e-9) {
    throw std::invalid_argument("cell.ocv endpoints must equal v_min and v_max");
  }
}

void PackTopology::validate() const {
  if (modules < 1 || series_per_module < 1 || parallel_per_series < 1) {
    throw std::invalid_argument("pack topology counts must be >= 1");
  }
}

PackTopology PackTopology::p5s60() { return {3, 60, 5, "5p60s"}; }
PackTopology PackTopology::p5s80() { return {5, 80, 5, "5p80s"}; }
PackTopology PackTopology::p5s100() { return {4, 100, 5, "5p100s"}; }

PackTopology PackTopology::preset(const std::string& name) {
  if (name == "5p60s") return p5s60();
  if (name == "5p80s") return p5s80();
  if (name == "5p100s") return p5s100();
  throw std::invalid_argument("unknown pack preset '" + name + "'");
}

CellParams apply_aging(const CellParams& cell, int cycles, double fade_per_cycle,
                       double r_growth_per_cycle) {
  if (cycles < 0) throw std::invalid_argument("aging.cycles must be >= 0");
  if (!(fade_per_cycle >= 0.0 && fade_per_cycle < 0.01)) {
    throw std::invalid_argument("aging.fade_per_cycle must lie in [0, 0.01)");
  }
  if (!(r_growth_per_cycle >= 0.0)) throw std::invalid_argument("aging.r_growth_per_cycle must be >= 0");
  const double fade = 1.0 - fade_per_cycle * cycles;
  if (!(fade > 0.0)) throw std::invalid_argument("aging drives capacity to zero or below");
  CellParams aged = cell;
  aged.capacity_ah = cell.capacity_ah * fade;
  aged.r0 = cell.r0 * (1.0 + r_growth_per_cycle * cycles);
  return aged;
}

Pack Pack::build(const PackTopology& topology, const CellParams& cell, const Heterogeneity& het,
                 std::uint64_t seed, int cycle_count) {
  topology.validate();
  cell.validate();
  if (het.param_jitter < 0.0 || het.param_jitter >= 0.5 || het.soc_jitter < 0.0) {
    throw std::invalid_argument("heterogeneity jitter out of range");
  }
  Pack pack;
  pack.topology = topology;
  pack.cell = cell;
  pack.cycle_count = cycle_count;
  pack.rated_capacity_ah = cell.capacity_ah;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < topology.modules; ++i) {
    ModuleParams p;
    p.capacity_ah = cell.capacity_ah * (1.0 + het.param_jitter * unit(rng));
    p.r0 = cell.r0 * (1.0 + het.param_jitter * unit(rng));
    p.r1 = cell.r1 * (1.0 + het.param_jitter * unit(rng));
    p.c1 = cell.c1 * (1.0 + het.param_jitter * unit(rng));
    p.soc_offset = het.soc_jitter * unit(rng);
    pack.modules.push_back(p);
  }
  return pack;
}

PackState initial_state(const Pack& pack, double soc) {
  PackState s;
  const int m = pack.size();
  s.soc.resize(m);
  s.rc_voltage = VectorXd::Zero(m);
  for (int i = 0; i < m; ++i) s.soc(i) = std::clamp(soc + pack.modules[i].soc_offset, 0.0, 1.0);
  s.cycle_count = pack.cycle_count;
  s.effective_capacity_ah = pack.cell.capacity_ah;
  s.effective_r0 = pack.cell.r0;
  return s;
}

VectorXd module_voltages(const Pack& pack, const PackState& state, double current_a) {
  const int m = pack.size();
  const double i_cell = current_a / pack.topology.parallel_per_series;
  const double series = pack.topology.series_per_module;
  VectorXd v(m);
  for (int i = 0; i < m; ++i) {
    const auto& p = pack.modules[i];
    v(i) = series * ((*pack.cell.ocv)(state.soc(i)) - i_cell * p.r0 - state.rc_voltage(i));
  }
  return v;
}

StepResult step_pack(const Pack& pack, const PackState& state, double current_a, double dt_s) {
  if (!(dt_s > 0.0)) throw std::invalid_argument("dt_s must be positive");
  const double limit = pack.max_c_rate * pack.module_capacity_ah();
  if (std::abs(current_a) > limit * (1.0 + 1e-12)) {
    throw std::invalid_argument("current exceeds the configured maximum C-rate");
  }
  const double i_cell = current_a / pack.topology.parallel_per_series;
  StepResult out;
  out.state = state;
  for (int i = 0; i < pack.size(); ++i) {
    const auto& p = pack.modules[i];
    const double decay = std::exp(-dt_s / (p.r1 * p.c1));
    out.state.rc_voltage(i) = state.rc_voltage(i) * decay + i_cell * p.r1 * (1.0 - decay);
    out.state.soc(i) = state.soc(i) - i_cell * dt_s / (3600.0 * p.capacity_ah);
  }
  out.module_voltages = module_voltages(pack, out.state, current_a);

  const double series = pack.topology.series_per_module;
  for (int i = 0; i < pack.size(); ++i) {
    if (out.state.soc(i) < 0.0 || out.state.soc(i) > 1.0) {
      out.cutoff = true;
      out.cutoff_reason = "module " + std::to_string(i + 1) + " SOC left [0, 1]";
      break;
    }
    const double v = out.module_voltages(i);
    if (v < pack.cell.v_min * series || v > pack.cell.v_max * series) {
      out.cutoff = true;
      out.cutoff_reason = "module " + std::to_string(i + 1) + " voltage " + std::to_string(v) +
                          " V outside cutoff limits";
      break;
    }
  }
  return out;
}

namespace {

struct Phase {
  double current_a;
  enum { to_high, to_low, rest } kind;
};

}  // namespace

ProtocolResult run_protocol(const Pack& pack, const PackState& initial, const Protocol& protocol) {
  if (!(protocol.soc_lo >= 0.0 && protocol.soc_lo < protocol.soc_hi && protocol.soc_hi <= 1.0)) {
    throw std::invalid_argument("protocol requires 0 <= soc_lo < soc_hi <= 1");
  }
  if (!(protocol.dt_s > 0.0)) throw std::invalid_argument("protocol.dt_s must be positive");
  if (!(protocol.c_rate > 0.0)) throw std::invalid_argument("protocol.c_rate must be positive");
  if (protocol.cycles < 1) throw std::invalid_argument("protocol.cycles must be >= 1");

  const double amps = protocol.c_rate * pack.rated_capacity_ah * pack.topology.parallel_per_series;
  std::vector<Phase> phases;
  switch (protocol.mode) {
    case ProtocolMode::charge:
      phases.push_back({-amps, Phase::to_high});
      break;
    case ProtocolMode::discharge:
      phases.push_back({amps, Phase::to_low});
      break;
    case ProtocolMode::cycle: {
      const bool charge_first = initial.mean_soc() < protocol.soc_hi;
      for (int c = 0; c < protocol.cycles; ++c) {
        const Phase first = charge_first ? Phase{-amps, Phase::to_high} : Phase{amps, Phase::to_low};
        const Phase second = charge_first ? Phase{amps, Phase::to_low} : Phase{-amps, Phase::to_high};
        phases.push_back(first);
        if (protocol.rest_s > 0.0) phases.push_back({0.0, Phase::rest});
        phases.push_back(second);
        if (protocol.rest_s > 0.0) phases.push_back({0.0, Phase::rest});
      }
      break;
    }
  }

  ProtocolResult result;
  result.stream.dt_s = protocol.dt_s;
  PackState state = initial;
  VectorXd v_now = module_voltages(pack, state, 0.0);
  std::mt19937_64 noise_rng(protocol.noise_seed);
  std::normal_distribution<double> noise(0.0, protocol.noise_std_v > 0.0 ? protocol.noise_std_v : 1.0);
  const long max_frames = protocol.duration_s
                              ? static_cast<long>(std::floor(*protocol.duration_s / protocol.dt_s + 1e-9))
                              : -1;
  long k = 0;

  for (const Phase& phase : phases) {
    long rest_steps = 0;
    while (true) {
      if (phase.kind == Phase::to_high && state.mean_soc() >= protocol.soc_hi) break;
      if (phase.kind == Phase::to_low && state.mean_soc() <= protocol.soc_lo) break;
      if (phase.kind == Phase::rest && rest_steps * protocol.dt_s >= protocol.rest_s - 1e-9) break;
      if (max_frames >= 0 && k >= max_frames) {
        result.final_state = state;
        return result;
      }
      TelemetryFrame f;
      f.t_s = protocol.t0_s + static_cast<double>(k) * protocol.dt_s;
      f.current_a = phase.current_a;
      f.soc_true = state.mean_soc();
      f.v_true = v_now;
      f.v_meas = v_now;
      if (protocol.noise_std_v > 0.0) {
        for (Eigen::Index i = 0; i < f.v_meas.size(); ++i) f.v_meas(i) += noise(noise_rng);
      }
      result.stream.frames.push_back(std::move(f));

      StepResult next = step_pack(pack, state, phase.current_a, protocol.dt_s);
      if (next.cutoff) {
        result.completed = false;
        result.diagnostic = "cutoff at t = " + std::to_string(protocol.t0_s + (k + 1) * protocol.dt_s) +
                            " s: " + next.cutoff_reason;
        result.final_state = state;
        return result;
      }
      state = std::move(next.state);
      v_now = std::move(next.module_voltages);
      ++k;
      ++rest_steps;
    }
  }
  result.final_state = state;
  return result;
}

double OcvSocMap::operator()(double soc) const {
  if (soc <= soc_grid.front()) return ocv_volts.front();
  if (soc >= soc_grid.back()) return ocv_volts.back();
  const auto it = std::upper_bound(soc_grid.begin(), soc_grid.end(), soc);
  const auto i = static_cast<std::size_t>(std::distance(soc_grid.begin(), it)) - 1;
  const double w = (soc - soc_grid[i]) / (soc_grid[i + 1] - soc_grid[i]);
  return ocv_volts[i] + w * (ocv_volts[i + 1] - ocv_volts[i]);
}

OcvSocMap OcvSocMap::scaled(int factor) const {
  OcvSocMap out = *this;
  for (double& v : out.ocv_volts) v *= factor;
  out.scale = scale * factor;
  return out;
}

OcvSocMap build_ocv_soc_map(const CellParams& cell, int resolution) {
  if (resolution < 50) throw std::invalid_argument("OCV map resolution must be >= 50");
  cell.validate();
  const double current = -cell.capacity_ah / 100.0;  // C/100 charge
  const double dt = 1.0;
  const double decay = std::exp(-dt / (cell.r1 * cell.c1));

  std::vector<double> soc_log;
  std::vector<double> v_log;
  const auto expected = static_cast<std::size_t>(100.0 * 3600.0 / dt) + 2;
  soc_log.reserve(expected);
  v_log.reserve(expected);
  double soc = 0.0;
  double v_rc = 0.0;
  while (true) {
    soc_log.push_back(soc);
    v_log.push_back((*cell.ocv)(soc) - current * cell.r0 - v_rc);
    if (soc >= 1.0) break;
    v_rc = v_rc * decay + current * cell.r1 * (1.0 - decay);
    soc -= current * dt / (3600.0 * cell.capacity_ah);
  }

  OcvSocMap map;
  map.soc_grid.resize(resolution);
  map.ocv_volts.resize(resolution);
  std::size_t j = 0;
  for (int g = 0; g < resolution; ++g) {
    const double s = static_cast<double>(g) / static_cast<double>(resolution - 1);
    while (j + 2 < soc_log.size() && soc_log[j + 1] < s) ++j;
    const double w = std::clamp((s - soc_log[j]) / (soc_log[j + 1] - soc_log[j]), 0.0, 1.0);
    map.soc_grid[g] = s;
    map.ocv_volts[g] = v_log[j] + w * (v_log[j + 1] - v_log[j]);
  }
  for (int g = 1; g < resolution; ++g) {
    if (!(map.ocv_volts[g] > map.ocv_volts[g - 1])) {
      throw std::runtime_error("measured OCV curve is not increasing near SOC " +
                               std::to_string(map.soc_grid[g]) +
                               "; check the simulator configuration");
    }
  }
  return map;
}

}  // namespace ksve
