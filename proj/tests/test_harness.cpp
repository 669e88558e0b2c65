#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "ksve/harness.hpp"

using namespace ksve;
namespace fs = std::filesystem;

namespace {

std::string field_of(const std::string& json) {
  try {
    parse_scenario(json);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}

const char* kSmall = R"({
  "id": "small", "seed": 5,
  "pack": {"preset": "5p60s"},
  "protocol": {"mode": "discharge", "initial_soc": 0.8, "duration_s": 600, "noise_std_v": 0.01},
  "estimator": {"mode": "stage1"},
  "attack": {"kind": "fdi_bias", "start_s": 300, "duration_s": 300, "bias_v": -3.0}
})";

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ksve_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SampleRecord row(double v_true, double v_hat, bool attacked, double step_ms, EstimatorMode mode) {
  SampleRecord s;
  s.v_true = VectorXd::Constant(2, v_true);
  s.v_hat = VectorXd::Constant(2, v_hat);
  s.v_hat(1) = v_true;  // second module always exact
  s.attack_active = attacked;
  s.step_ms = step_ms;
  s.mode = mode;
  return s;
}

TrainConfig small_train() {
  return parse_train(R"({
    "id": "t", "seed": 3,
    "pack": {"preset": "5p60s"},
    "runs": [{"mode": "charge", "initial_soc": 0.2, "duration_s": 1200}],
    "noise_std_v": 0.005,
    "shadow": {"every_s": 60, "length_s": 300},
    "bank": {"max_rows": 30, "min_rows": 5, "threads": 1}
  })");
}

}  // namespace

TEST_CASE("config errors name the offending field") {
  CHECK(field_of(R"({"id": "x"})") == "seed");
  CHECK(field_of(R"({"seed": 1, "attack": {"kind": "jam"}})") == "attack.kind");
  CHECK(field_of(R"({"seed": 1, "protocol": {"duration": 5}})") == "protocol.duration");
  CHECK(field_of(R"({"seed": 1, "protocol": {"duration_s": "long"}})") == "protocol.duration_s");
  CHECK(field_of(R"({"seed": 1, "pack": {"preset": "7p7s"}})") == "pack.preset");
  CHECK(field_of(R"({"seed": 1, "estimator": {"mode": "gpr"}})") == "gpr_bank");
  CHECK(field_of(R"({"seed": 1, "estimator": {"mode": "gpr"}, "gpr_bank": "/nonexistent/bank.json"})") ==
        "gpr_bank");
  CHECK(field_of(R"({"seed": -4})") == "seed");
  CHECK(field_of(R"({"seed": 1, "detector": {"confirm_count": 0}})") == "detector.confirm_count");
  CHECK(field_of(kSmall) == "<none>");
  CHECK_THROWS_AS(parse_scenario("{not json"), ConfigError);

  try {
    parse_train(R"({"seed": 1, "runs": [{"mode": "charge"}, {"mode": "sideways"}]})");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "runs[1].mode");
    CHECK(std::string(e.what()).find("runs[1].mode") != std::string::npos);
  }
  try {
    parse_sweep(R"({"seed": 1, "onset_s": [600, 240]})");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "onset_s");
  }
}

TEST_CASE("derived seeds are distinct and stable") {
  CHECK(derive_seed(1, 1) == derive_seed(1, 1));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (std::uint64_t k = 0; k < 20; ++k) seen.insert(derive_seed(s, k));
  }
  CHECK(seen.size() == 400);
}

TEST_CASE("scenario starts so that the attack finds the requested SOC") {
  ScenarioConfig c = parse_scenario(kSmall);
  c.protocol.soc_at_attack = 0.55;
  c.protocol.history_s = 100;
  c.pack.heterogeneity = {0.0, 0.0};
  const ScenarioData d = simulate_scenario(c);
  CHECK(d.clean.frames.front().t_s == -100.0);
  for (const auto& f : d.clean.frames) {
    if (f.t_s == c.attack.start_s) CHECK(f.soc_true == doctest::Approx(0.55).epsilon(1e-9));
  }
  c.protocol.soc_at_attack = 0.99;  // would need a start above full
  CHECK_THROWS_AS(scenario_initial_soc(c), ConfigError);
}

TEST_CASE("metrics on handcrafted rows") {
  std::vector<SampleRecord> rows;
  rows.push_back(row(10.0, 99.0, false, 5.0, EstimatorMode::nominal));  // ignored everywhere
  rows.push_back(row(10.0, 11.0, true, 1.0, EstimatorMode::secure_heuristic));
  rows.push_back(row(10.0, 7.0, true, 3.0, EstimatorMode::secure_heuristic));
  rows.push_back(row(10.0, 10.0, true, 2.0, EstimatorMode::secure_heuristic));
  const RunReport r = summarize(rows, {});
  CHECK(r.samples == 4);
  CHECK(r.attacked_samples == 3);
  REQUIRE(r.rmse_v.size() == 2);
  CHECK(r.rmse_v[0] == doctest::Approx(std::sqrt(10.0 / 3.0)));
  CHECK(r.rmse_v[1] == 0.0);
  CHECK(r.rmse_all_v == doctest::Approx(std::sqrt(10.0 / 6.0)));
  CHECK(r.max_overestimation_v == doctest::Approx(1.0));
  CHECK(r.max_underestimation_v == doctest::Approx(3.0));
  CHECK(r.mean_step_ms == doctest::Approx(2.0));
  CHECK(r.median_step_ms == doctest::Approx(2.0));
  CHECK(r.max_step_ms == 3.0);
}

TEST_CASE("report metrics can be recomputed from the sample CSV") {
  const ScenarioConfig c = parse_scenario(kSmall);
  const ScenarioRun run = run_scenario(c);
  REQUIRE(run.report.trigger_time_s.has_value());
  CHECK(*run.report.trigger_time_s >= c.attack.start_s);
  CHECK(*run.report.trigger_time_s <= c.attack.start_s + c.detector.confirm_count + 2);
  CHECK(run.report.mode == "stage1");

  const fs::path dir = scratch("csv");
  write_samples_csv(run.samples, dir / "samples.csv");
  const auto back = read_samples_csv(dir / "samples.csv");
  REQUIRE(back.size() == run.samples.size());
  RunReport base;
  base.id = run.report.id;
  const RunReport r = summarize(back, base);
  CHECK(r.attacked_samples == run.report.attacked_samples);
  CHECK(r.attacked_samples == 300);
  CHECK(same(r.rmse_all_v, run.report.rmse_all_v));
  CHECK(same(r.max_overestimation_v, run.report.max_overestimation_v));
  CHECK(same(r.max_underestimation_v, run.report.max_underestimation_v));
  CHECK(same(r.mean_step_ms, run.report.mean_step_ms));
  CHECK(same(r.median_step_ms, run.report.median_step_ms));
  for (std::size_t i = 0; i < r.rmse_v.size(); ++i) CHECK(same(r.rmse_v[i], run.report.rmse_v[i]));
  CHECK(report_json(run.report).find("\"rmse_all_v\"") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("monte carlo is seed deterministic and covers every age") {
  SweepConfig s = parse_sweep(R"({
    "seed": 17, "runs": 2, "workers": 2,
    "packs": ["5p60s", "5p80s"],
    "methods": ["stage1", "heuristic"],
    "attack_duration_s": 200
  })");
  const SweepResult a = monte_carlo(s);
  s.workers = 1;
  const SweepResult b = monte_carlo(s);
  REQUIRE(a.rows.size() == 4);
  REQUIRE(b.rows.size() == 4);
  std::set<int> ages;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto& x = a.rows[i];
    const auto& y = b.rows[i];
    CHECK(x.run == y.run);
    CHECK(x.pack == y.pack);
    CHECK(x.age == y.age);
    CHECK(x.attack == y.attack);
    CHECK(x.onset_s == y.onset_s);
    CHECK(x.soc_at_attack == y.soc_at_attack);
    CHECK(x.onset_s >= 240.0);
    CHECK(x.onset_s <= 600.0);
    for (const auto& [m, rep] : x.reports) {
      REQUIRE(y.reports.count(m));
      CHECK(same(rep.rmse_all_v, y.reports.at(m).rmse_all_v));
      CHECK(rep.trigger_time_s == y.reports.at(m).trigger_time_s);
    }
    ages.insert(x.age);
  }
  std::set<int> agg_ages;
  for (const auto& r : a.aggregate) {
    CHECK(r.runs > 0);
    agg_ages.insert(r.age);
  }
  CHECK(agg_ages == ages);
  CHECK(agg_ages == std::set<int>{1, 50, 100});
  CHECK(a.aggregate.size() == 6);
  CHECK(sweep_scenario(s, 1, 0).attack.start_s == a.rows[2].onset_s);

  const fs::path dir = scratch("mc");
  write_sweep_outputs(a, dir);
  for (const char* f : {"runs.csv", "violin.csv", "aggregate.csv", "aggregate.json"}) CHECK(fs::exists(dir / f));
  fs::remove_all(dir);
}

TEST_CASE("stage II rows come from stage I shadows over nominal data") {
  const TrainConfig cfg = small_train();
  const auto rows = harvest_stage2_rows(cfg);
  REQUIRE(!rows.empty());
  std::set<std::pair<int, int>> seen;
  bool exact = true;
  for (const auto& h : rows) {
    exact = exact && h.row.target == h.v_nom - h.row.theta(1);
    seen.insert({h.row.module, region_of(h.row.soc, HeuristicTable::standard())});
  }
  CHECK(exact);
  // a 1200 s charge from 0.2 crosses several regions on every module
  for (int m = 0; m < 3; ++m) {
    int regions = 0;
    for (const auto& [mod, reg] : seen) regions += mod == m;
    CHECK(regions >= 3);
  }

  const GprBank first = train_gpr(cfg);
  const GprBank second = train_gpr(cfg);
  std::ostringstream s1, s2;
  save_bank(first, s1);
  save_bank(second, s2);
  CHECK(s1.str() == s2.str());
  CHECK(first.modules().size() == 3);

  TrainConfig starved = cfg;
  starved.bank.min_rows = 100000;
  starved.bank.max_rows = 100000;
  CHECK_THROWS_AS(train_gpr(starved), InsufficientData);
}
