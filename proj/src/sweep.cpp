// Monte Carlo sweeps and the stage II training pipeline.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ksve/harness.hpp"

namespace ksve {

namespace {

std::string direction_name(ProtocolMode m) { return m == ProtocolMode::charge ? "charge" : "discharge"; }

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
void parallel_for(std::size_t count, int workers, F&& body) {
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) body(i);
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(count)));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
}

}  // namespace

ScenarioConfig sweep_scenario(const SweepConfig& sweep, int run, std::size_t pack_index) {
  std::mt19937_64 rng(derive_seed(derive_seed(sweep.seed, static_cast<std::uint64_t>(run)), pack_index + 1));
  ScenarioConfig c;
  c.pack.preset = sweep.packs.at(pack_index);
  // Latin square over (run, pack): every run spans the age levels and every
  // pack meets each of them across runs.
  c.pack.aging_cycles = sweep.ages[(static_cast<std::size_t>(run) + pack_index) % sweep.ages.size()];
  c.attack.kind = pick(sweep.attacks, rng);
  c.protocol.mode = std::bernoulli_distribution(0.5)(rng) ? ProtocolMode::charge : ProtocolMode::discharge;
  c.attack.start_s = std::round(std::uniform_real_distribution<double>(sweep.onset_lo_s, sweep.onset_hi_s)(rng));
  c.protocol.soc_at_attack = std::uniform_real_distribution<double>(sweep.soc_lo, sweep.soc_hi)(rng);
  c.seed = rng();
  c.id = "run" + std::to_string(run) + "-" + c.pack.preset;
  c.attack.duration_s = sweep.attack_duration_s;
  c.attack.bias_v = sweep.bias_v;
  c.protocol.duration_s = c.attack.start_s + sweep.attack_duration_s;
  c.protocol.noise_std_v = sweep.noise_std_v;
  c.protocol.dt_s = sweep.window.dt_s;
  c.window = sweep.window;
  c.rank_tol = sweep.rank_tol;
  c.handoff_margin = sweep.handoff_margin;
  c.detector = sweep.detector;
  c.mode = sweep.methods.front();
  if (auto it = sweep.gpr_banks.find(c.pack.preset); it != sweep.gpr_banks.end()) c.gpr_bank = it->second;
  return c;
}

SweepResult monte_carlo(const SweepConfig& sweep) {
  sweep.validate();
  std::map<std::string, GprBank> banks;
  for (const auto& [pack, path] : sweep.gpr_banks) banks.emplace(pack, load_bank(path.string()));

  const std::size_t jobs = static_cast<std::size_t>(sweep.runs) * sweep.packs.size();
  SweepResult result;
  result.rows.resize(jobs);
  parallel_for(jobs, sweep.workers, [&](std::size_t job) {
    const int run = static_cast<int>(job / sweep.packs.size());
    const std::size_t pack_index = job % sweep.packs.size();
    const ScenarioConfig cfg = sweep_scenario(sweep, run, pack_index);
    SweepRow& row = result.rows[job];
    row.run = run;
    row.pack = cfg.pack.preset;
    row.age = cfg.pack.aging_cycles;
    row.attack = to_string(cfg.attack.kind);
    row.direction = direction_name(cfg.protocol.mode);
    row.onset_s = cfg.attack.start_s;
    row.soc_at_attack = *cfg.protocol.soc_at_attack;

    std::optional<Calibration> cal;
    std::string cal_error;
    try {
      cal = calibrate_detector(cfg);
    } catch (const std::exception& e) {
      cal_error = std::string("calibration: ") + e.what();
    }
    for (EstimatorMode method : sweep.methods) {
      const std::string name = to_string(method);
      if (!cal) {
        row.errors[name] = cal_error;
        continue;
      }
      RunOptions opt;
      opt.calibration = cal;
      opt.mode = method;
      opt.keep_samples = false;
      if (method == EstimatorMode::secure_gpr) {
        auto it = banks.find(cfg.pack.preset);
        if (it == banks.end()) {
          row.errors[name] = "no GPR bank for pack " + cfg.pack.preset;
          continue;
        }
        opt.stage2 = &it->second;
      }
      try {
        ScenarioConfig c = cfg;
        c.mode = method;
        row.reports[name] = run_scenario(c, opt).report;
      } catch (const std::exception& e) {
        row.errors[name] = e.what();
      }
    }
  });

  // Deterministic fold in (run, pack) order.
  for (EstimatorMode method : sweep.methods) {
    const std::string name = to_string(method);
    std::vector<int> ages = sweep.ages;
    std::sort(ages.begin(), ages.end());
    ages.erase(std::unique(ages.begin(), ages.end()), ages.end());
    for (int age : ages) {
      AggregateRow a;
      a.method = name;
      a.age = age;
      std::vector<double> rmse;
      double step = 0.0;
      a.max_overestimation_v = 0.0;
      a.max_underestimation_v = 0.0;
      for (const auto& row : result.rows) {
        if (row.age != age) continue;
        ++a.runs;
        auto it = row.reports.find(name);
        if (it == row.reports.end() || !std::isfinite(it->second.rmse_all_v)) {
          ++a.failures;
          continue;
        }
        const auto& r = it->second;
        rmse.push_back(r.rmse_all_v);
        step += r.mean_step_ms;
        a.max_overestimation_v = std::max(a.max_overestimation_v, r.max_overestimation_v);
        a.max_underestimation_v = std::max(a.max_underestimation_v, r.max_underestimation_v);
      }
      if (!rmse.empty()) {
        double sum = 0.0;
        for (double v : rmse) sum += v;
        a.mean_rmse_v = sum / static_cast<double>(rmse.size());
        a.median_rmse_v = median_of(rmse);
        a.mean_step_ms = step / static_cast<double>(rmse.size());
      } else {
        a.mean_rmse_v = a.median_rmse_v = std::nan("");
      }
      result.aggregate.push_back(a);
    }
  }
  return result;
}

void write_sweep_outputs(const SweepResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> methods;
  for (const auto& a : result.aggregate) {
    if (std::find(methods.begin(), methods.end(), a.method) == methods.end()) methods.push_back(a.method);
  }
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out.precision(10);
    return out;
  };

  auto runs = open("runs.csv");
  runs << "run,pack,age,attack,direction,onset_s,soc_at_attack";
  for (const auto& m : methods) {
    runs << ",rmse_" << m << ",over_" << m << ",under_" << m << ",step_ms_" << m << ",trigger_s_" << m << ",error_" << m;
  }
  runs << '\n';
  for (const auto& r : result.rows) {
    runs << r.run << ',' << r.pack << ',' << r.age << ',' << r.attack << ',' << r.direction << ',' << r.onset_s << ','
         << r.soc_at_attack;
    for (const auto& m : methods) {
      auto it = r.reports.find(m);
      if (it != r.reports.end()) {
        const auto& rep = it->second;
        runs << ',' << rep.rmse_all_v << ',' << rep.max_overestimation_v << ',' << rep.max_underestimation_v << ','
             << rep.mean_step_ms << ',';
        if (rep.trigger_time_s) runs << *rep.trigger_time_s;
        runs << ',';
      } else {
        std::string err = r.errors.count(m) ? r.errors.at(m) : "missing";
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        runs << ",,,,,," << err;
      }
    }
    runs << '\n';
  }

  auto violin = open("violin.csv");
  violin << "run,pack,age,attack,method,module,rmse_v\n";
  for (const auto& r : result.rows) {
    for (const auto& m : methods) {
      auto it = r.reports.find(m);
      if (it == r.reports.end()) continue;
      for (std::size_t i = 0; i < it->second.rmse_v.size(); ++i) {
        violin << r.run << ',' << r.pack << ',' << r.age << ',' << r.attack << ',' << m << ',' << i + 1 << ','
               << it->second.rmse_v[i] << '\n';
      }
    }
  }

  auto agg = open("aggregate.csv");
  agg << "method,age,runs,failures,mean_rmse_v,median_rmse_v,max_overestimation_v,max_underestimation_v,mean_step_ms\n";
  nlohmann::json j = nlohmann::json::array();
  for (const auto& a : result.aggregate) {
    agg << a.method << ',' << a.age << ',' << a.runs << ',' << a.failures << ',' << a.mean_rmse_v << ','
        << a.median_rmse_v << ',' << a.max_overestimation_v << ',' << a.max_underestimation_v << ',' << a.mean_step_ms
        << '\n';
    j.push_back({{"method", a.method},
                 {"age", a.age},
                 {"runs", a.runs},
                 {"failures", a.failures},
                 {"mean_rmse_v", a.mean_rmse_v},
                 {"median_rmse_v", a.median_rmse_v},
                 {"max_overestimation_v", a.max_overestimation_v},
                 {"max_underestimation_v", a.max_underestimation_v},
                 {"mean_step_ms", a.mean_step_ms}});
  }
  open("aggregate.json") << j.dump(2) << '\n';
}

// ---- stage II training ----

std::vector<HarvestedRow> harvest_stage2_rows(const TrainConfig& cfg) {
  cfg.validate();
  const Pack pack = cfg.pack.build(derive_seed(cfg.seed, 1));
  std::vector<HarvestedRow> rows;
  for (std::size_t r = 0; r < cfg.runs.size(); ++r) {
    const TrainRun& tr = cfg.runs[r];
    ScenarioConfig sc;
    sc.seed = cfg.seed;
    sc.pack = cfg.pack;
    sc.window = cfg.window;
    sc.rank_tol = cfg.rank_tol;
    sc.handoff_margin = cfg.handoff_margin;
    Protocol p;
    p.mode = tr.mode;
    p.soc_lo = 0.02;
    p.soc_hi = 0.98;
    p.duration_s = tr.duration_s;
    p.dt_s = cfg.window.dt_s;
    p.noise_std_v = cfg.noise_std_v;
    p.noise_seed = derive_seed(cfg.seed, 100 + r);
    const auto run = run_protocol(pack, initial_state(pack, tr.initial_soc), p);
    if (run.stream.frames.empty()) continue;
    const auto ctx = make_context(sc, pack, run.stream.frames.front().soc_true);

    struct Shadow {
      SecureEstimator est;
      double end_s;
    };
    std::vector<Shadow> shadows;
    SecureEstimator est(ctx, pack.size());
    double next_fork = run.stream.frames.front().t_s;
    auto harvest = [&](const CorrectionOutputs& o, const TelemetryFrame& f) {
      for (Eigen::Index i = 0; i < o.v_bar.size(); ++i) {
        Stage2Row row;
        row.module = static_cast<int>(i);
        row.soc = o.soc;
        row.theta = Eigen::Vector4d(o.e1(i), o.v_bar(i), f.current_a, o.soc);
        row.target = f.v_meas(i) - o.v_bar(i);
        if (row.theta.allFinite() && std::isfinite(row.target)) rows.push_back({r, f.t_s, f.v_meas(i), row});
      }
    };
    for (const auto& f : run.stream.frames) {
      est.step(f.t_s, f.current_a, &f.v_meas);
      for (auto& s : shadows) harvest(s.est.step(f.t_s, f.current_a, nullptr), f);
      shadows.erase(std::remove_if(shadows.begin(), shadows.end(), [&](const Shadow& s) { return f.t_s >= s.end_s; }),
                    shadows.end());
      if (f.t_s >= next_fork && est.state().voltage_model) {
        Shadow s{est, f.t_s + cfg.shadow_length_s};
        if (auto o = s.est.engage(EstimatorMode::secure_stage1)) {
          harvest(*o, f);
          shadows.push_back(std::move(s));
        }
        next_fork = f.t_s + cfg.shadow_every_s;
      }
    }
  }
  return rows;
}

GprBank train_gpr(const TrainConfig& cfg) {
  std::vector<Stage2Row> rows;
  for (const auto& h : harvest_stage2_rows(cfg)) rows.push_back(h.row);
  const int modules = PackTopology::preset(cfg.pack.preset).modules;
  ScenarioConfig sc;
  sc.pack = cfg.pack;
  const Pack pack = cfg.pack.build(derive_seed(cfg.seed, 1));
  const HeuristicTable table = make_context(sc, pack, 0.5).table;
  const int regions = static_cast<int>(table.regions.size());

  std::vector<std::vector<std::size_t>> counts(static_cast<std::size_t>(modules),
                                               std::vector<std::size_t>(static_cast<std::size_t>(regions), 0));
  for (const auto& r : rows) ++counts[static_cast<std::size_t>(r.module)][static_cast<std::size_t>(region_of(r.soc, table) - 1)];
  std::ostringstream missing;
  for (int m = 0; m < modules; ++m) {
    const auto& c = counts[static_cast<std::size_t>(m)];
    if (std::any_of(c.begin(), c.end(), [&](std::size_t n) { return n >= cfg.bank.min_rows; })) continue;
    missing << " module " << m + 1 << ":";
    for (int g = 0; g < regions; ++g) missing << " r" << g + 1 << "=" << c[static_cast<std::size_t>(g)];
  }
  if (!missing.str().empty()) {
    throw InsufficientData("not enough stage II rows (need " + std::to_string(cfg.bank.min_rows) +
                           " in some region);" + missing.str());
  }

  BankTrainOptions opt = cfg.bank;
  opt.seed = derive_seed(cfg.seed, 7);
  GprBank bank = train_bank(rows, table, opt);
  for (std::size_t r = 0; r < cfg.runs.size(); ++r) bank.scenario_ids.push_back(cfg.id + "/run" + std::to_string(r));
  return bank;
}

}  // namespace ksve
