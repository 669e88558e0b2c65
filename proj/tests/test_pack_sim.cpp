#include <doctest.h>

#include <cmath>

#include "ksve/pack_sim.hpp"

using namespace ksve;

namespace {

Pack flat_pack(const PackTopology& topo) {
  return Pack::build(topo, CellParams{}, Heterogeneity{0.0, 0.0}, 1);
}

}  // namespace

TEST_CASE("default OCV curve hits the cutoff voltages and increases") {
  const auto curve = default_ocv_curve();
  CHECK((*curve)(0.0) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK((*curve)(1.0) == doctest::Approx(4.2).epsilon(1e-12));
  double prev = (*curve)(0.0);
  for (int i = 1; i <= 2000; ++i) {
    const double v = (*curve)(i / 2000.0);
    REQUIRE(v > prev);
    prev = v;
  }
}

TEST_CASE("spline derivative matches finite differences") {
  const auto curve = default_ocv_curve();
  for (double s : {0.05, 0.2, 0.5, 0.77, 0.93}) {
    const double h = 1e-6;
    const double fd = ((*curve)(s + h) - (*curve)(s - h)) / (2 * h);
    CHECK(curve->derivative(s) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("rest relaxes to series-scaled OCV") {
  const auto topo = PackTopology::p5s60();
  const Pack pack = flat_pack(topo);
  PackState s = initial_state(pack, 0.6);
  s.rc_voltage.setConstant(0.01);
  for (int k = 0; k < 3000; ++k) s = step_pack(pack, s, 0.0, 1.0).state;
  REQUIRE(s.rc_voltage.cwiseAbs().maxCoeff() < 1e-9);
  const VectorXd v = module_voltages(pack, s, 0.0);
  for (int i = 0; i < pack.size(); ++i) {
    CHECK(v(i) == doctest::Approx(60 * (*pack.cell.ocv)(s.soc(i))).epsilon(1e-12));
  }
}

TEST_CASE("one step ohmic drop is series x i_cell x r0") {
  const auto topo = PackTopology::p5s60();
  const Pack pack = flat_pack(topo);
  const PackState s = initial_state(pack, 0.5);
  // 25 A branch current is 5 A per cell; hand evaluation gives 60 * 0.1 V.
  const VectorXd rest = module_voltages(pack, s, 0.0);
  const VectorXd loaded = module_voltages(pack, s, 25.0);
  for (int i = 0; i < pack.size(); ++i) CHECK(rest(i) - loaded(i) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("exact RC and Coulomb updates") {
  const Pack pack = flat_pack(PackTopology{1, 1, 1, "1"});
  const PackState s0 = initial_state(pack, 0.5);
  const auto r = step_pack(pack, s0, 5.0, 2.0);
  const double tc = pack.cell.r1 * pack.cell.c1;
  CHECK(r.state.rc_voltage(0) == doctest::Approx(5.0 * 0.01 * (1 - std::exp(-2.0 / tc))).epsilon(1e-14));
  CHECK(r.state.soc(0) == doctest::Approx(0.5 - 10.0 / (3600.0 * 5.0)).epsilon(1e-14));
}

TEST_CASE("pack ceilings are within 1% of the nominal pack voltages") {
  const double nominal[] = {250.0, 335.0, 420.0};
  const PackTopology topos[] = {PackTopology::p5s60(), PackTopology::p5s80(), PackTopology::p5s100()};
  for (int t = 0; t < 3; ++t) {
    const Pack pack = flat_pack(topos[t]);
    const VectorXd v = module_voltages(pack, initial_state(pack, 1.0), 0.0);
    CHECK(std::abs(v.maxCoeff() - nominal[t]) / nominal[t] < 0.01);
    CHECK(topos[t].total_cells() == static_cast<long>(topos[t].modules) * topos[t].series_per_module * 5);
  }
}

TEST_CASE("cutoff instead of clamping") {
  const Pack pack = flat_pack(PackTopology::p5s60());
  const auto r = step_pack(pack, initial_state(pack, 0.0005), 75.0, 10.0);
  CHECK(r.cutoff);
  CHECK(r.state.soc.minCoeff() < 0.0);
  CHECK_THROWS_AS(step_pack(pack, initial_state(pack, 0.5), 76.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(step_pack(pack, initial_state(pack, 0.5), 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("aging") {
  const CellParams cell;
  const CellParams same = apply_aging(cell, 0, 0.0005, 0.002);
  CHECK(same.capacity_ah == cell.capacity_ah);
  CHECK(same.r0 == cell.r0);
  const CellParams aged = apply_aging(cell, 100, 0.0005, 0.002);
  CHECK(aged.capacity_ah == doctest::Approx(0.95 * 5.0).epsilon(1e-14));
  CHECK(aged.r0 == doctest::Approx(0.02 * 1.2).epsilon(1e-14));
  CHECK_THROWS(apply_aging(cell, -1, 0.0005, 0.0));
  CHECK_THROWS(apply_aging(cell, 1, 0.01, 0.0));
  CHECK_THROWS(apply_aging(cell, 300, 0.005, 0.0));

  // Same current, aged pack crosses every SOC level first.
  const auto topo = PackTopology::p5s60();
  const Pack fresh = Pack::build(topo, cell, Heterogeneity{0, 0}, 3);
  Pack old = Pack::build(topo, aged, Heterogeneity{0, 0}, 3, 100);
  old.rated_capacity_ah = cell.capacity_ah;
  Protocol p;
  p.mode = ProtocolMode::charge;
  p.soc_hi = 0.9;
  const auto a = run_protocol(fresh, initial_state(fresh, 0.3), p);
  const auto b = run_protocol(old, initial_state(old, 0.3), p);
  auto first_crossing = [](const TelemetryStream& s, double level) {
    for (const auto& f : s.frames) if (f.soc_true >= level) return f.t_s;
    return 1e300;
  };
  for (double level : {0.4, 0.5, 0.6, 0.7, 0.8}) {
    CHECK(first_crossing(b.stream, level) < first_crossing(a.stream, level));
  }
}

TEST_CASE("protocol timing, Coulomb transfer and determinism") {
  const Pack pack = Pack::build(PackTopology::p5s60(), CellParams{}, Heterogeneity{0, 0}, 9);
  Protocol p;
  p.mode = ProtocolMode::charge;
  p.soc_hi = 0.7;
  const auto r = run_protocol(pack, initial_state(pack, 0.3), p);
  REQUIRE(r.completed);
  for (std::size_t k = 1; k < r.stream.size(); ++k) {
    CHECK(r.stream.frames[k].t_s - r.stream.frames[k - 1].t_s == 1.0);
  }
  // 0.4 of capacity at 1C takes 1440 s of Coulomb transfer.
  CHECK(r.stream.size() == 1440);
  CHECK(r.final_state.mean_soc() == doctest::Approx(0.7).epsilon(1e-9));

  const auto again = run_protocol(pack, initial_state(pack, 0.3), p);
  REQUIRE(again.stream.size() == r.stream.size());
  for (std::size_t k = 0; k < r.stream.size(); ++k) {
    CHECK((again.stream.frames[k].v_meas.array() == r.stream.frames[k].v_meas.array()).all());
  }
}

TEST_CASE("charge then discharge returns SOC") {
  const Pack pack = Pack::build(PackTopology::p5s80(), CellParams{}, Heterogeneity{}, 4);
  PackState s = initial_state(pack, 0.5);
  const VectorXd start = s.soc;
  for (int k = 0; k < 700; ++k) s = step_pack(pack, s, -25.0, 1.0).state;
  for (int k = 0; k < 700; ++k) s = step_pack(pack, s, 25.0, 1.0).state;
  CHECK((s.soc - start).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("cycling protocol with rests") {
  const Pack pack = Pack::build(PackTopology::p5s60(), CellParams{}, Heterogeneity{}, 4);
  Protocol p;
  p.mode = ProtocolMode::cycle;
  p.soc_lo = 0.3;
  p.soc_hi = 0.7;
  p.rest_s = 900;
  p.cycles = 2;
  const auto r = run_protocol(pack, initial_state(pack, 0.3), p);
  REQUIRE(r.completed);
  int rest_frames = 0;
  int sign_changes = 0;
  for (std::size_t k = 0; k < r.stream.size(); ++k) {
    if (r.stream.frames[k].current_a == 0.0) ++rest_frames;
    if (k && r.stream.frames[k].current_a != r.stream.frames[k - 1].current_a) ++sign_changes;
  }
  CHECK(rest_frames == 4 * 900);
  CHECK(sign_changes == 7);
}

TEST_CASE("infeasible protocol returns a partial stream") {
  const Pack pack = Pack::build(PackTopology::p5s60(), CellParams{}, Heterogeneity{}, 4);
  Protocol p;
  p.mode = ProtocolMode::charge;
  p.c_rate = 2.0;
  p.soc_hi = 1.0;
  const auto r = run_protocol(pack, initial_state(pack, 0.9), p);
  CHECK_FALSE(r.completed);
  CHECK(!r.diagnostic.empty());
  CHECK(r.stream.size() > 0);
  CHECK_THROWS(run_protocol(pack, initial_state(pack, 0.5), Protocol{ProtocolMode::charge, 1.0, 0.7, 0.3}));
}

TEST_CASE("OCV-SOC map from a slow charge") {
  const CellParams cell;
  const OcvSocMap map = build_ocv_soc_map(cell, 401);
  REQUIRE(map.soc_grid.size() == 401);
  CHECK(map.ocv_volts.front() == doctest::Approx(2.5).epsilon(1e-3));
  CHECK(map.ocv_volts.back() == doctest::Approx(4.2).epsilon(1e-3));
  // Ohmic 0.05 A x 0.02 ohm plus the settled RC term 0.05 A x 0.01 ohm.
  const double bias = 0.05 * (cell.r0 + cell.r1);
  for (std::size_t g = 10; g < map.soc_grid.size(); ++g) {
    CHECK(std::abs(map.ocv_volts[g] - (*cell.ocv)(map.soc_grid[g])) <= bias + 2e-4);
  }
  CellParams thin = cell;
  thin.r1 = 1e-6;
  const OcvSocMap ohmic = build_ocv_soc_map(thin, 200);
  for (std::size_t g = 5; g < ohmic.soc_grid.size(); ++g) {
    CHECK(std::abs(ohmic.ocv_volts[g] - (*cell.ocv)(ohmic.soc_grid[g])) <= 1e-3 + 2e-4);
  }
  const OcvSocMap pack_map = map.scaled(60);
  CHECK(pack_map.scale == 60);
  for (std::size_t g = 0; g < map.soc_grid.size(); ++g) CHECK(pack_map.ocv_volts[g] == map.ocv_volts[g] * 60);
  CHECK_THROWS(build_ocv_soc_map(cell, 49));
}
