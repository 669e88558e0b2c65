#pragma once

// Residual-based attack trigger. RD compares measurements with the Koopman
// prediction; RI tracks how far a freshly fitted operator [A B]
// moves away from the last trusted one.

#include <optional>
#include <stdexcept>
#include <vector>

#include "ksve/types.hpp"

namespace ksve {

struct DetectorConfig {
  double rd_threshold_v = 0.0;
  double ri_threshold = 0.0;
  int confirm_count = 3;

  void validate() const;
};

struct DetectorVerdict {
  bool attacked = false;
  bool sensor_attack = false;
  std::optional<double> trigger_time_s;
  std::optional<double> isolation_time_s;
};

/// Infinity norm of v_meas - v_p.
template <typename A, typename B>
typename A::Scalar detection_residual(const Eigen::MatrixBase<A>& v_meas, const Eigen::MatrixBase<B>& v_p) {
  if (v_meas.size() != v_p.size()) throw std::invalid_argument("residual operands differ in size");
  if (v_meas.size() == 0) return typename A::Scalar(0);
  return (v_meas - v_p).cwiseAbs().maxCoeff();
}

/// ||k_now - k_ref||_F / ||k_ref||_F.
template <typename A, typename B>
typename A::Scalar isolation_residual(const Eigen::MatrixBase<A>& k_ref, const Eigen::MatrixBase<B>& k_now) {
  if (k_ref.rows() != k_now.rows() || k_ref.cols() != k_now.cols()) {
    throw std::invalid_argument("operator matrices differ in shape");
  }
  const auto ref = k_ref.norm();
  const auto diff = (k_now - k_ref).norm();
  return ref > 0 ? diff / ref : diff;
}

class Detector {
 public:
  explicit Detector(DetectorConfig cfg);

  /// Feeds one sample. A NaN ri means no isolation evidence at this sample.
  const DetectorVerdict& update(double t_s, double rd, double ri);

  const DetectorVerdict& verdict() const { return verdict_; }
  const DetectorConfig& config() const { return cfg_; }
  /// Consecutive samples with RD above threshold, up to the current one.
  int streak() const { return streak_; }

 private:
  DetectorConfig cfg_;
  DetectorVerdict verdict_;
  int streak_ = 0;
};

struct ResidualThreshold {
  double mean = 0.0;
  double stddev = 0.0;
  double threshold = 0.0;
  long samples = 0;
};

/// mean + k_sigma * stddev over the finite entries of an attack-free run.
ResidualThreshold calibrate_threshold(const std::vector<double>& residuals, double k_sigma = 5.0);

}  // namespace ksve
