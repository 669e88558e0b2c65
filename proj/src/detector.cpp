#include "ksve/detector.hpp"

#include <cmath>
#include <string>

namespace ksve {

void DetectorConfig::validate() const {
  if (!(rd_threshold_v > 0.0)) throw std::invalid_argument("detector.rd_threshold_v must be positive");
  if (!(ri_threshold > 0.0)) throw std::invalid_argument("detector.ri_threshold must be positive");
  if (confirm_count < 1) throw std::invalid_argument("detector.confirm_count must be >= 1");
}

Detector::Detector(DetectorConfig cfg) : cfg_(cfg) { cfg_.validate(); }

const DetectorVerdict& Detector::update(double t_s, double rd, double ri) {
  // NaN compares false, so a missing residual breaks the streak.
  streak_ = rd > cfg_.rd_threshold_v ? streak_ + 1 : 0;
  if (!verdict_.attacked && streak_ >= cfg_.confirm_count) {
    verdict_.attacked = true;
    verdict_.trigger_time_s = t_s;
  }
  if (verdict_.attacked && !verdict_.sensor_attack && ri > cfg_.ri_threshold) {
    verdict_.sensor_attack = true;
    verdict_.isolation_time_s = t_s;
  }
  return verdict_;
}

ResidualThreshold calibrate_threshold(const std::vector<double>& residuals, double k_sigma) {
  ResidualThreshold out;
  double sum = 0.0;
  for (double r : residuals) {
    if (std::isfinite(r)) {
      sum += r;
      ++out.samples;
    }
  }
  if (out.samples < 2) {
    throw std::invalid_argument("threshold calibration needs at least two finite residuals, got " +
                                std::to_string(out.samples));
  }
  out.mean = sum / static_cast<double>(out.samples);
  double ss = 0.0;
  for (double r : residuals) {
    if (std::isfinite(r)) ss += (r - out.mean) * (r - out.mean);
  }
  out.stddev = std::sqrt(ss / static_cast<double>(out.samples - 1));
  out.threshold = out.mean + k_sigma * out.stddev;
  return out;
}

}  // namespace ksve
