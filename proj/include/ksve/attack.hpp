#pragma once

// Sensor attacks on the measured module-voltage channel. Current, ground-truth
// voltages and SOC pass through untouched.

#include <limits>
#include <optional>
#include <string>

#include "ksve/telemetry.hpp"

namespace ksve {

enum class AttackKind { none, dos_hold, fdi_bias, data_swap };

AttackKind parse_attack_kind(const std::string& name);
std::string to_string(AttackKind kind);

struct AttackSpec {
  AttackKind kind = AttackKind::none;
  double start_s = 0.0;
  double duration_s = std::numeric_limits<double>::infinity();
  double bias_v = 0.0;

  void validate() const;
  /// Half-open window [start_s, start_s + duration_s).
  bool covers(double t_s) const {
    return kind != AttackKind::none && t_s >= start_s && t_s - start_s < duration_s;
  }
};

struct AttackState {
  std::optional<VectorXd> held_frame;
  bool active = false;
  /// Last measurement seen outside an attack window.
  std::optional<VectorXd> last_clean;
};

struct InjectResult {
  VectorXd v_corrupted;
  AttackState state;
};

InjectResult inject(const TelemetryFrame& frame, const AttackSpec& spec, const AttackState& state);

/// Ascending-to-descending reversal: the smallest value's slot receives the
/// largest value and so on. Ties keep their original order.
VectorXd reverse_sorted_positions(const VectorXd& v);

/// Runs `inject` over a whole stream, replacing v_meas.
TelemetryStream apply_attack(const TelemetryStream& stream, const AttackSpec& spec);

}  // namespace ksve
