#include "ksve/heuristic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/LU>

namespace ksve {

SocTracker soc_update(const SocTracker& tracker, double current_a) {
  if (!(tracker.capacity_ah > 0.0)) throw std::invalid_argument("SOC tracker capacity must be positive");
  SocTracker next = tracker;
  const double soc = tracker.soc - tracker.dt_s * current_a / (3600.0 * tracker.capacity_ah);
  next.soc = std::clamp(soc, 0.0, 1.0);
  if (next.soc != soc) ++next.clamp_events;
  return next;
}

namespace {

constexpr double kStandardBounds[] = {0.241, 0.284, 0.330, 0.397, 0.456, 0.510, 0.555,
                                      0.591, 0.662, 0.727, 0.752, 0.792, 0.853};
constexpr double kHDischarge[] = {0.989, 0.853, 0.952, 0.989, 0.955, 0.946, 0.883,
                                  0.990, 0.999, 0.963, 0.911, 0.960, 0.967, 0.945};
constexpr double kHCharge[] = {0.960, 0.948, 0.952, 0.968, 0.955, 0.945, 0.960,
                               0.922, 0.990, 0.978, 0.920, 0.860, 0.880, 0.920};

}  // namespace

HeuristicTable HeuristicTable::with_boundaries(const std::vector<double>& interior, OcvSocMap ocv_map) {
  if (interior.size() != 13) throw std::invalid_argument("the h table needs 13 interior boundaries");
  HeuristicTable t;
  t.ocv_map = std::move(ocv_map);
  for (int j = 0; j < 14; ++j) {
    HeuristicRegion r;
    r.index = j + 1;
    r.lo = j == 0 ? 0.0 : interior[j - 1];
    r.hi = j == 13 ? 1.0 : interior[j];
    r.h_discharge = kHDischarge[j];
    r.h_charge = kHCharge[j];
    t.regions.push_back(r);
  }
  t.validate();
  return t;
}

HeuristicTable HeuristicTable::standard(OcvSocMap ocv_map, double repaired_breakpoint) {
  std::vector<double> b(std::begin(kStandardBounds), std::end(kStandardBounds));
  b[11] = repaired_breakpoint;
  return with_boundaries(b, std::move(ocv_map));
}

void HeuristicTable::validate() const {
  if (regions.empty()) throw std::invalid_argument("heuristic table has no regions");
  if (regions.front().lo != 0.0 || regions.back().hi != 1.0) {
    throw std::invalid_argument("heuristic regions must cover [0, 1]");
  }
  for (std::size_t j = 0; j < regions.size(); ++j) {
    const auto& r = regions[j];
    if (!(r.lo < r.hi)) {
      throw std::invalid_argument("heuristic region " + std::to_string(r.index) + " is empty or reversed");
    }
    if (j > 0 && regions[j - 1].hi != r.lo) {
      throw std::invalid_argument("heuristic regions " + std::to_string(j) + " and " +
                                  std::to_string(j + 1) + " leave a gap or overlap");
    }
    for (double h : {r.h_discharge, r.h_charge}) {
      if (!(h > 0.0 && h <= 1.0)) {
        throw std::invalid_argument("h values must lie in (0, 1] (region " + std::to_string(r.index) + ")");
      }
    }
  }
}

int region_of(double soc, const HeuristicTable& table) {
  soc = std::clamp(soc, 0.0, 1.0);
  const auto it = std::upper_bound(table.regions.begin(), table.regions.end(), soc,
                                   [](double s, const HeuristicRegion& r) { return s < r.hi; });
  if (it == table.regions.end()) return table.regions.back().index;
  return it->index;
}

double HeuristicTable::h(double soc, int sign) const {
  const auto& r = regions[static_cast<std::size_t>(region_of(soc, *this) - 1)];
  return sign >= 0 ? r.h_discharge : r.h_charge;
}

VectorXd heuristic_stage2(const VectorXd& e1, double soc, int current_sign, double delta_ocv,
                          const HeuristicTable& table) {
  const double h = table.h(soc, current_sign);
  VectorXd e2(e1.size());
  for (Eigen::Index i = 0; i < e1.size(); ++i) e2(i) = h * e1(i) + (1.0 - soc) * delta_ocv;
  return e2;
}

std::vector<double> not_a_knot_spline(const std::vector<double>& x, const std::vector<double>& y,
                                      const std::vector<double>& at) {
  const auto n = static_cast<Eigen::Index>(x.size());
  if (n < 4 || y.size() != x.size()) throw std::invalid_argument("spline needs at least 4 matching knots");
  // Unknowns are the knot second derivatives M.
  MatrixXd a = MatrixXd::Zero(n, n);
  VectorXd rhs = VectorXd::Zero(n);
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    const double h0 = x[i] - x[i - 1];
    const double h1 = x[i + 1] - x[i];
    a(i, i - 1) = h0;
    a(i, i) = 2.0 * (h0 + h1);
    a(i, i + 1) = h1;
    rhs(i) = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
  }
  // Third derivative continuous across the second and second-to-last knots.
  const double h0 = x[1] - x[0], h1 = x[2] - x[1];
  a(0, 0) = h1;
  a(0, 1) = -(h0 + h1);
  a(0, 2) = h0;
  const double g0 = x[n - 2] - x[n - 3], g1 = x[n - 1] - x[n - 2];
  a(n - 1, n - 3) = g1;
  a(n - 1, n - 2) = -(g0 + g1);
  a(n - 1, n - 1) = g0;
  const VectorXd m = a.partialPivLu().solve(rhs);

  std::vector<double> out(at.size());
  for (std::size_t q = 0; q < at.size(); ++q) {
    const double s = at[q];
    auto it = std::upper_bound(x.begin(), x.end(), s);
    auto i = static_cast<Eigen::Index>(std::distance(x.begin(), it)) - 1;
    i = std::clamp<Eigen::Index>(i, 0, n - 2);
    const double h = x[i + 1] - x[i];
    const double l = (x[i + 1] - s) / h;
    const double r = (s - x[i]) / h;
    out[q] = l * y[i] + r * y[i + 1] + ((l * l * l - l) * m(i) + (r * r * r - r) * m(i + 1)) * h * h / 6.0;
  }
  return out;
}

namespace {

struct Series {
  std::vector<double> s;
  std::vector<double> d;
};

// Central difference then a moving average; both trim the support.
Series differentiate(const Series& in, double h, int width) {
  Series diff;
  for (std::size_t i = 1; i + 1 < in.d.size(); ++i) {
    diff.s.push_back(in.s[i]);
    diff.d.push_back((in.d[i + 1] - in.d[i - 1]) / (2.0 * h));
  }
  Series out;
  const auto w = static_cast<std::size_t>(width);
  const std::size_t half = (w - 1) / 2;
  for (std::size_t i = 0; i + w <= diff.d.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w; ++j) acc += diff.d[i + j];
    out.s.push_back(diff.s[i + half]);
    out.d.push_back(acc / static_cast<double>(w));
  }
  return out;
}

std::vector<double> sign_changes(const Series& x, double floor) {
  double peak = 0.0;
  for (double v : x.d) peak = std::max(peak, std::abs(v));
  const double tol = std::max(1e-3 * peak, floor);
  std::vector<double> out;
  std::ptrdiff_t last = -1;
  for (std::size_t i = 0; i < x.d.size(); ++i) {
    if (std::abs(x.d[i]) <= tol) continue;
    if (last >= 0 && (x.d[i] > 0.0) != (x.d[static_cast<std::size_t>(last)] > 0.0)) {
      const double a = x.d[static_cast<std::size_t>(last)];
      const double t = a / (a - x.d[i]);
      out.push_back(x.s[static_cast<std::size_t>(last)] + t * (x.s[i] - x.s[static_cast<std::size_t>(last)]));
    }
    last = static_cast<std::ptrdiff_t>(i);
  }
  return out;
}

}  // namespace

RegionDerivation derive_regions(const OcvSocMap& map, int smoothing, int grid_points) {
  if (map.soc_grid.size() < 200 || map.ocv_volts.size() != map.soc_grid.size()) {
    throw std::invalid_argument("region derivation needs an OCV map with at least 200 points");
  }
  if (smoothing < 1 || smoothing % 2 == 0) throw std::invalid_argument("smoothing window must be odd and >= 1");
  if (grid_points < 50) throw std::invalid_argument("grid_points must be >= 50");

  const double lo = map.soc_grid.front();
  const double hi = map.soc_grid.back();
  const double h = (hi - lo) / (grid_points - 1);
  Series v;
  for (int g = 0; g < grid_points; ++g) v.s.push_back(lo + g * h);
  v.d = not_a_knot_spline(map.soc_grid, map.ocv_volts, v.s);

  // Scale-aware zero floor so roundoff on featureless curves is not read as sign changes.
  const auto [vmin, vmax] = std::minmax_element(map.ocv_volts.begin(), map.ocv_volts.end());
  const double scale = std::max(*vmax - *vmin, 1e-12);
  const double span = hi - lo;

  const Series d1 = differentiate(v, h, smoothing);
  const Series d2 = differentiate(d1, h, smoothing);
  const Series d3 = differentiate(d2, h, smoothing);

  RegionDerivation out;
  out.d2_zeros = sign_changes(d2, 1e-6 * scale / (span * span));
  out.d3_zeros = sign_changes(d3, 1e-4 * scale / (span * span * span));
  out.boundaries = out.d2_zeros;
  out.boundaries.insert(out.boundaries.end(), out.d3_zeros.begin(), out.d3_zeros.end());
  std::sort(out.boundaries.begin(), out.boundaries.end());
  out.boundaries.erase(std::unique(out.boundaries.begin(), out.boundaries.end(),
                                   [](double a, double b) { return std::abs(a - b) < 1e-9; }),
                       out.boundaries.end());
  if (out.boundaries.size() < 2) {
    out.diagnostic = "only " + std::to_string(out.boundaries.size()) +
                     " derivative zero crossing(s) found; the OCV curve is too featureless to partition";
  }
  return out;
}

}  // namespace ksve
