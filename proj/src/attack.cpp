#include "ksve/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ksve {

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "none") return AttackKind::none;
  if (name == "dos_hold") return AttackKind::dos_hold;
  if (name == "fdi_bias") return AttackKind::fdi_bias;
  if (name == "data_swap") return AttackKind::data_swap;
  throw std::invalid_argument("unknown attack kind '" + name + "'");
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "none";
    case AttackKind::dos_hold: return "dos_hold";
    case AttackKind::fdi_bias: return "fdi_bias";
    case AttackKind::data_swap: return "data_swap";
  }
  return "none";
}

void AttackSpec::validate() const {
  if (!(start_s >= 0.0)) throw std::invalid_argument("attack.start_s must be >= 0");
  if (!(duration_s > 0.0)) throw std::invalid_argument("attack.duration_s must be positive");
  if (!std::isfinite(bias_v)) throw std::invalid_argument("attack.bias_v must be finite");
}

VectorXd reverse_sorted_positions(const VectorXd& v) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v(a) < v(b); });
  VectorXd out(v.size());
  const std::size_t n = order.size();
  for (std::size_t i = 0; i < n; ++i) out(order[i]) = v(order[n - 1 - i]);
  return out;
}

InjectResult inject(const TelemetryFrame& frame, const AttackSpec& spec, const AttackState& state) {
  InjectResult r{frame.v_meas, state};
  if (!spec.covers(frame.t_s)) {
    r.state.active = false;
    r.state.held_frame.reset();
    r.state.last_clean = frame.v_meas;
    return r;
  }
  r.state.active = true;
  switch (spec.kind) {
    case AttackKind::dos_hold:
      // With no earlier frame the first attacked sample is what gets frozen.
      if (!r.state.held_frame) r.state.held_frame = state.last_clean ? *state.last_clean : frame.v_meas;
      r.v_corrupted = *r.state.held_frame;
      break;
    case AttackKind::fdi_bias:
      r.v_corrupted = frame.v_meas.array() + spec.bias_v;
      break;
    case AttackKind::data_swap:
      r.v_corrupted = reverse_sorted_positions(frame.v_meas);
      break;
    case AttackKind::none:
      break;
  }
  return r;
}

TelemetryStream apply_attack(const TelemetryStream& stream, const AttackSpec& spec) {
  TelemetryStream out = stream;
  AttackState state;
  for (auto& f : out.frames) {
    auto r = inject(f, spec, state);
    f.v_meas = std::move(r.v_corrupted);
    state = std::move(r.state);
  }
  return out;
}

}  // namespace ksve
