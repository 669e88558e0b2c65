#include <doctest.h>

#include <cmath>

#include "ksve/heuristic.hpp"

using namespace ksve;

namespace {

OcvSocMap sampled(int n, double (*f)(double)) {
  OcvSocMap m;
  for (int i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / (n - 1);
    m.soc_grid.push_back(s);
    m.ocv_volts.push_back(f(s));
  }
  return m;
}

const double kTable1[] = {0.241, 0.284, 0.330, 0.397, 0.456, 0.510, 0.555,
                          0.591, 0.662, 0.727, 0.752, 0.792, 0.853};

}  // namespace

TEST_CASE("Coulomb counting") {
  SocTracker t{0.4, 5.0, 1.0, 0};
  CHECK(soc_update(t, 0.0).soc == 0.4);
  CHECK(soc_update(t, -5.0).soc - 0.4 == doctest::Approx(1.0 / 3600.0).epsilon(1e-12));
  CHECK(soc_update(t, 5.0).soc < 0.4);

  SocTracker full{0.0, 5.0, 1.0, 0};
  for (int k = 0; k < 3600; ++k) full = soc_update(full, -5.0);
  CHECK(std::abs(full.soc - 1.0) <= 1e-9);

  SocTracker over{0.3, 5.0, 1.0, 0};
  for (int k = 0; k < 3600; ++k) over = soc_update(over, -5.0);
  CHECK(over.soc == 1.0);
  CHECK(over.clamp_events > 0);
}

TEST_CASE("current direction holds through rests") {
  CurrentDirection d;
  CHECK(d.value() == 1);
  CHECK(d.update(-3.0) == -1);
  CHECK(d.update(0.0) == -1);
  CHECK(d.update(2.0) == 1);
  CHECK(d.update(0.0) == 1);
}

TEST_CASE("region_of reproduces the 14 intervals") {
  const auto table = HeuristicTable::standard();
  CHECK(region_of(0.5, table) == 6);
  CHECK(region_of(0.0, table) == 1);
  CHECK(region_of(0.241, table) == 2);
  CHECK(region_of(1.0, table) == 14);
  CHECK(region_of(0.7519999, table) == 11);
  CHECK(region_of(0.752, table) == 12);
  CHECK(region_of(0.791, table) == 12);
  CHECK(region_of(0.792, table) == 13);
  CHECK(region_of(0.853, table) == 14);
  double lo = 0.0;
  for (int j = 0; j < 14; ++j) {
    const double hi = j < 13 ? kTable1[j] : 1.0;
    CHECK(region_of(lo, table) == j + 1);
    CHECK(region_of(0.5 * (lo + hi), table) == j + 1);
    CHECK(region_of(std::nextafter(hi, 0.0), table) == j + 1);
    CHECK(table.regions[static_cast<std::size_t>(j)].lo == lo);
    lo = hi;
  }
}

TEST_CASE("table validation") {
  CHECK_NOTHROW(HeuristicTable::standard());
  CHECK_THROWS(HeuristicTable::standard({}, 0.74));  // breaks monotonicity
  auto t = HeuristicTable::standard();
  t.regions[3].h_charge = 1.2;
  CHECK_THROWS(t.validate());
  t = HeuristicTable::standard();
  t.regions[4].lo = 0.4;
  CHECK_THROWS(t.validate());
}

TEST_CASE("heuristic stage II") {
  const auto table = HeuristicTable::standard();
  VectorXd e1(1);
  e1 << 1.0;
  const VectorXd e2 = heuristic_stage2(e1, 0.5, 1, 0.001, table);
  CHECK(std::abs(e2(0) - 0.9465) <= 1e-12);
  CHECK(e2(0) == 0.946 * 1.0 + (1.0 - 0.5) * 0.001);

  CHECK(heuristic_stage2(VectorXd::Zero(3), 0.3, -1, 0.0, table).isZero(0.0));
  const VectorXd top = heuristic_stage2(e1, 1.0, -1, 0.25, table);
  CHECK(top(0) == 0.920);

  // charging column of region 12
  CHECK(heuristic_stage2(e1, 0.77, -1, 0.0, table)(0) == 0.860);

  // module-wise: identical inputs give identical outputs regardless of count
  VectorXd many = VectorXd::Constant(5, 0.37);
  const VectorXd out = heuristic_stage2(many, 0.62, 1, -0.02, table);
  const VectorXd one = heuristic_stage2(VectorXd::Constant(1, 0.37), 0.62, 1, -0.02, table);
  for (int i = 0; i < 5; ++i) CHECK(out(i) == one(0));
}

TEST_CASE("spline reproduces cubics") {
  std::vector<double> x, y, at;
  for (int i = 0; i <= 20; ++i) {
    x.push_back(i * 0.05 + 0.01 * (i % 3));
    y.push_back(1 - 2 * x.back() + 0.7 * std::pow(x.back(), 3));
  }
  for (int q = 0; q < 50; ++q) at.push_back(x.front() + (x.back() - x.front()) * q / 49.0);
  const auto v = not_a_knot_spline(x, y, at);
  for (std::size_t q = 0; q < at.size(); ++q) {
    CHECK(v[q] == doctest::Approx(1 - 2 * at[q] + 0.7 * std::pow(at[q], 3)).epsilon(1e-12));
  }
}

TEST_CASE("derive_regions on analytic curves") {
  // a + b s + c s^2 + d s^3 has its only inflection at -c / (3 d).
  const auto cubic = sampled(401, [](double s) { return 3.0 + 0.5 * s - 0.8 * s * s + 0.6 * s * s * s; });
  const auto r = derive_regions(cubic);
  REQUIRE(r.d2_zeros.size() == 1);
  CHECK(std::abs(r.d2_zeros[0] - 0.8 / 1.8) < 1e-3);
  CHECK(r.d3_zeros.empty());
  CHECK_FALSE(r.diagnostic.empty());

  const auto linear = sampled(401, [](double s) { return 2.5 + 1.7 * s; });
  const auto l = derive_regions(linear);
  CHECK(l.boundaries.empty());
  CHECK_FALSE(l.diagnostic.empty());

  CHECK_THROWS(derive_regions(sampled(150, [](double s) { return s; })));
}

TEST_CASE("derive_regions on the default table") {
  OcvSocMap table_map;
  const auto& volts = default_ocv_table_volts();
  for (std::size_t i = 0; i < volts.size(); ++i) {
    table_map.soc_grid.push_back(static_cast<double>(i) / (volts.size() - 1));
    table_map.ocv_volts.push_back(volts[i]);
  }
  for (const OcvSocMap& map : {table_map, build_ocv_soc_map(CellParams{}, 401)}) {
    const auto r = derive_regions(map);
    REQUIRE(r.boundaries.size() == 13);
    CHECK(r.diagnostic.empty());
    for (int j = 0; j < 13; ++j) CHECK(std::abs(r.boundaries[j] - kTable1[j]) < 0.02);
    CHECK(r.d2_zeros.size() + r.d3_zeros.size() == 13);
  }
}
