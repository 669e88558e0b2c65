#include "ksve/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ksve {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Sub-seed streams.
constexpr std::uint64_t kPackStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kCalibrationStream = 3;

Protocol make_protocol(const ScenarioConfig& cfg, std::uint64_t noise_seed) {
  Protocol p;
  p.mode = cfg.protocol.mode;
  p.c_rate = cfg.protocol.c_rate;
  p.soc_lo = cfg.protocol.soc_lo;
  p.soc_hi = cfg.protocol.soc_hi;
  p.dt_s = cfg.protocol.dt_s;
  p.duration_s = cfg.protocol.history_s + cfg.protocol.duration_s;
  p.t0_s = -cfg.protocol.history_s;
  p.noise_std_v = cfg.protocol.noise_std_v;
  p.noise_seed = noise_seed;
  return p;
}

// Measured (v, I) of the last S_tilde samples; refitted every sample for the
// isolation residual.
class IsolationMonitor {
 public:
  IsolationMonitor(const WindowConfig& w, double rank_tol) : w_(w), rank_tol_(rank_tol) {}

  void push(const VectorXd& v, double current_a) {
    buf_.push_back({v, current_a});
    if (static_cast<int>(buf_.size()) > w_.S_tilde) buf_.pop_front();
  }

  double residual(const MatrixXd& k_ref) const {
    if (k_ref.size() == 0 || static_cast<int>(buf_.size()) < w_.S_tilde) return kNaN;
    const auto m = buf_.front().first.size();
    MatrixXd z(m, w_.S_tilde);
    RowVectorXd u(w_.S_tilde);
    for (int i = 0; i < w_.S_tilde; ++i) {
      z.col(i) = buf_[static_cast<std::size_t>(i)].first;
      u(i) = buf_[static_cast<std::size_t>(i)].second;
    }
    try {
      const auto now = fit(delay_embed<double>(z, u, w_.tau), rank_tol_);
      return isolation_residual(k_ref, operator_matrix(now));
    } catch (const std::exception&) {
      return kNaN;
    }
  }

 private:
  WindowConfig w_;
  double rank_tol_;
  std::deque<std::pair<VectorXd, double>> buf_;
};

struct LoopResult {
  std::vector<SampleRecord> samples;
  std::vector<double> rd;
  std::vector<double> ri;
  DetectorVerdict verdict;
  std::optional<double> rollback_t;
  long faults = 0;
  long fit_failures = 0;
  long variance_clamps = 0;
  long soc_clamps = 0;
};

// One pass over a stream. `mode` nominal never engages.
LoopResult drive(const ScenarioConfig& cfg, const TelemetryStream& stream, const EstimatorContext& ctx,
                 EstimatorMode mode, const DetectorConfig& dcfg, bool keep) {
  const int m = stream.modules();
  SecureEstimator est(ctx, m);
  Detector det(dcfg);
  IsolationMonitor iso(cfg.window, cfg.rank_tol);
  MatrixXd k_ref;
  bool engaged = false;
  int refits = 0;
  LoopResult r;
  r.rd.reserve(stream.size());
  r.ri.reserve(stream.size());
  if (keep) r.samples.reserve(stream.size());

  for (const auto& f : stream.frames) {
    const auto t0 = std::chrono::steady_clock::now();
    CorrectionOutputs out = est.step(f.t_s, f.current_a, &f.v_meas);
    auto t1 = std::chrono::steady_clock::now();
    double elapsed_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    if (out.refit && !engaged) ++refits;
    const bool armed = refits > cfg.detector.warmup_refits;
    const double rd = armed && out.has_prediction ? detection_residual(f.v_meas, out.v_p) : kNaN;
    double ri = kNaN;
    if (!engaged || !det.verdict().sensor_attack) {
      iso.push(f.v_meas, f.current_a);
      // The reference operator is frozen while RD is above threshold.
      if (!engaged && out.refit && det.streak() == 0 && est.state().voltage_model) {
        k_ref = operator_matrix(*est.state().voltage_model);
      }
      if (armed) ri = iso.residual(k_ref);
    }
    const DetectorVerdict& v = det.update(f.t_s, rd, ri);

    if (v.attacked && !engaged && mode != EstimatorMode::nominal) {
      const auto t2 = std::chrono::steady_clock::now();
      if (auto o = est.engage(mode)) {
        out = *o;
        engaged = true;
        r.rollback_t = est.rollback_time();
      }
      elapsed_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t2).count();
    }

    r.rd.push_back(rd);
    r.ri.push_back(ri);
    r.variance_clamps += out.variance_clamps;
    if (keep) {
      SampleRecord s;
      s.t_s = f.t_s;
      s.current_a = f.current_a;
      s.soc_true = f.soc_true;
      s.soc_est = out.soc;
      s.region = out.region;
      s.mode = out.mode;
      s.attack_active = cfg.attack.covers(f.t_s);
      s.rd = rd;
      s.ri = ri;
      s.step_ms = elapsed_ms;
      s.v_true = f.v_true;
      s.v_meas = f.v_meas;
      s.v_p = out.v_p;
      s.e1 = out.e1;
      s.e2 = out.e2;
      s.v_hat = out.v_hat;
      r.samples.push_back(std::move(s));
    }
  }
  r.verdict = det.verdict();
  r.faults = est.state().faults;
  r.fit_failures = est.state().fit_failures;
  r.soc_clamps = est.state().soc.clamp_events;
  return r;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<long>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Pack PackSpec::build(std::uint64_t seed) const {
  const CellParams aged = apply_aging(cell, aging_cycles, fade_per_cycle, r_growth_per_cycle);
  Pack pack = Pack::build(PackTopology::preset(preset), aged, heterogeneity, seed, aging_cycles);
  pack.rated_capacity_ah = cell.capacity_ah;
  return pack;
}

double PackSpec::nominal_module_capacity_ah() const {
  return PackTopology::preset(preset).module_capacity_ah(cell);
}

double scenario_initial_soc(const ScenarioConfig& cfg) {
  if (!cfg.protocol.soc_at_attack) return cfg.protocol.initial_soc;
  const CellParams aged = apply_aging(cfg.pack.cell, cfg.pack.aging_cycles, cfg.pack.fade_per_cycle,
                                      cfg.pack.r_growth_per_cycle);
  const double rate = cfg.protocol.c_rate * cfg.pack.cell.capacity_ah / aged.capacity_ah / 3600.0;
  const double onset = cfg.attack.kind == AttackKind::none ? 0.0 : cfg.attack.start_s;
  const double elapsed = onset + cfg.protocol.history_s;
  const double sign = cfg.protocol.mode == ProtocolMode::discharge ? 1.0 : -1.0;
  const double soc = *cfg.protocol.soc_at_attack + sign * rate * elapsed;
  if (soc < 0.0 || soc > 1.0) {
    throw ConfigError("protocol.soc_at_attack", "not reachable from a valid initial SOC before the onset");
  }
  return soc;
}

ScenarioData simulate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  ScenarioData d{cfg.pack.build(derive_seed(cfg.seed, kPackStream)), {}, {}};
  const auto run = run_protocol(d.pack, initial_state(d.pack, scenario_initial_soc(cfg)),
                                make_protocol(cfg, derive_seed(cfg.seed, kNoiseStream)));
  d.clean = run.stream;
  d.attacked = apply_attack(d.clean, cfg.attack);
  return d;
}

EstimatorContext make_context(const ScenarioConfig& cfg, const Pack& pack, double initial_soc,
                              const Stage2Regressor* stage2) {
  static std::mutex mu;
  static std::vector<std::pair<std::pair<double, double>, OcvSocMap>> cache;
  OcvSocMap cell_map;
  {
    // The map is a slow C/100 charge; cache by cell capacity and r0.
    std::lock_guard<std::mutex> lock(mu);
    const auto key = std::make_pair(cfg.pack.cell.capacity_ah, cfg.pack.cell.r0);
    auto it = std::find_if(cache.begin(), cache.end(), [&](const auto& e) { return e.first == key; });
    if (it == cache.end()) {
      cache.emplace_back(key, build_ocv_soc_map(cfg.pack.cell, 401));
      it = cache.end() - 1;
    }
    cell_map = it->second;
  }
  EstimatorContext ctx;
  ctx.config.window = cfg.window;
  ctx.config.rank_tol = cfg.rank_tol;
  ctx.config.capacity_ah = cfg.pack.nominal_module_capacity_ah();
  ctx.config.initial_soc = initial_soc;
  ctx.config.handoff_margin = cfg.handoff_margin;
  ctx.table = HeuristicTable::standard(cell_map.scaled(pack.topology.series_per_module));
  ctx.stage2 = stage2;
  return ctx;
}

MatrixXd operator_matrix(const KoopmanModel<double>& model) {
  MatrixXd k(model.A.rows(), model.A.cols() + model.B.cols());
  k << model.A, model.B;
  return k;
}

Calibration calibrate_detector(const ScenarioConfig& cfg) {
  ScenarioConfig nominal = cfg;
  nominal.attack = AttackSpec{};
  const Pack pack = cfg.pack.build(derive_seed(cfg.seed, kPackStream));
  const auto run = run_protocol(pack, initial_state(pack, scenario_initial_soc(cfg)),
                                make_protocol(cfg, derive_seed(cfg.seed, kCalibrationStream)));
  const auto ctx = make_context(cfg, pack, run.stream.frames.front().soc_true);
  const double inf = std::numeric_limits<double>::infinity();
  const auto r = drive(nominal, run.stream, ctx, EstimatorMode::nominal, DetectorConfig{inf, inf, 1}, false);
  Calibration c;
  c.rd = calibrate_threshold(r.rd, cfg.detector.k_sigma);
  c.ri = calibrate_threshold(r.ri, cfg.detector.k_sigma);
  c.detector.rd_threshold_v = cfg.detector.rd_threshold_v.value_or(c.rd.threshold);
  c.detector.ri_threshold = cfg.detector.ri_threshold.value_or(c.ri.threshold);
  c.detector.confirm_count = cfg.detector.confirm_count;
  c.detector.validate();
  return c;
}

ScenarioRun run_scenario(const ScenarioConfig& cfg, const RunOptions& options) {
  const EstimatorMode mode = options.mode.value_or(cfg.mode);
  std::optional<GprBank> bank;
  const Stage2Regressor* stage2 = options.stage2;
  if (mode == EstimatorMode::secure_gpr && !stage2) {
    if (cfg.gpr_bank.empty()) throw ConfigError("gpr_bank", "required in gpr mode");
    bank = load_bank(cfg.gpr_bank.string());
    stage2 = &*bank;
  }
  const ScenarioData data = simulate_scenario(cfg);
  if (data.attacked.frames.empty()) throw std::runtime_error("simulation produced no samples");

  Calibration cal;
  if (options.calibration) {
    cal = *options.calibration;
  } else if (cfg.detector.rd_threshold_v && cfg.detector.ri_threshold) {
    cal.detector = {*cfg.detector.rd_threshold_v, *cfg.detector.ri_threshold, cfg.detector.confirm_count};
  } else {
    cal = calibrate_detector(cfg);
  }

  const auto ctx = make_context(cfg, data.pack, data.attacked.frames.front().soc_true, stage2);
  LoopResult r = drive(cfg, data.attacked, ctx, mode, cal.detector, true);

  RunReport base;
  base.id = cfg.id;
  base.mode = to_string(mode);
  base.attack = to_string(cfg.attack.kind);
  base.trigger_time_s = r.verdict.trigger_time_s;
  base.isolation_time_s = r.verdict.isolation_time_s;
  base.rollback_time_s = r.rollback_t;
  base.rd_threshold_v = cal.detector.rd_threshold_v;
  base.ri_threshold = cal.detector.ri_threshold;
  base.faults = r.faults;
  base.fit_failures = r.fit_failures;
  base.variance_clamps = r.variance_clamps;
  base.soc_clamps = r.soc_clamps;
  ScenarioRun out;
  out.report = summarize(r.samples, base);
  if (options.keep_samples) out.samples = std::move(r.samples);
  return out;
}

RunReport summarize(const std::vector<SampleRecord>& samples, RunReport base) {
  RunReport rep = std::move(base);
  rep.samples = static_cast<long>(samples.size());
  rep.modules = samples.empty() ? 0 : static_cast<int>(samples.front().v_true.size());
  std::vector<double> sq(static_cast<std::size_t>(rep.modules), 0.0);
  double over = -std::numeric_limits<double>::infinity();
  double under = -std::numeric_limits<double>::infinity();
  rep.attacked_samples = 0;
  bool any_secure = false;
  for (const auto& s : samples) any_secure = any_secure || s.mode != EstimatorMode::nominal;
  std::vector<double> times;
  for (const auto& s : samples) {
    if (!any_secure || s.mode != EstimatorMode::nominal) times.push_back(s.step_ms);
    if (!s.attack_active) continue;
    ++rep.attacked_samples;
    const VectorXd err = s.v_hat - s.v_true;
    for (int i = 0; i < rep.modules; ++i) sq[static_cast<std::size_t>(i)] += err(i) * err(i);
    over = std::max(over, err.maxCoeff());
    under = std::max(under, (-err).maxCoeff());
  }
  rep.rmse_v.assign(static_cast<std::size_t>(rep.modules), 0.0);
  double total = 0.0;
  if (rep.attacked_samples > 0) {
    for (int i = 0; i < rep.modules; ++i) {
      rep.rmse_v[static_cast<std::size_t>(i)] = std::sqrt(sq[static_cast<std::size_t>(i)] / rep.attacked_samples);
      total += sq[static_cast<std::size_t>(i)];
    }
    rep.rmse_all_v = std::sqrt(total / (static_cast<double>(rep.attacked_samples) * rep.modules));
    rep.max_overestimation_v = over;
    rep.max_underestimation_v = under;
  } else {
    rep.rmse_all_v = 0.0;
    rep.max_overestimation_v = 0.0;
    rep.max_underestimation_v = 0.0;
  }
  if (!times.empty()) {
    double sum = 0.0;
    for (double t : times) sum += t;
    rep.mean_step_ms = sum / static_cast<double>(times.size());
    rep.median_step_ms = median(times);
    rep.max_step_ms = *std::max_element(times.begin(), times.end());
  }
  return rep;
}

void write_samples_csv(const std::vector<SampleRecord>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  const int m = samples.empty() ? 0 : static_cast<int>(samples.front().v_true.size());
  out << "t_s,current_a,soc_true,soc_est,region,mode,attack_active,rd,ri,step_ms";
  for (const char* name : {"v_true", "v_meas", "v_p", "e1", "e2", "v_hat"}) {
    for (int i = 1; i <= m; ++i) out << ',' << name << '_' << i;
  }
  out << '\n';
  for (const auto& s : samples) {
    out << s.t_s << ',' << s.current_a << ',' << s.soc_true << ',' << s.soc_est << ',' << s.region << ','
        << to_string(s.mode) << ',' << (s.attack_active ? 1 : 0) << ',' << s.rd << ',' << s.ri << ',' << s.step_ms;
    for (const VectorXd* v : {&s.v_true, &s.v_meas, &s.v_p, &s.e1, &s.e2, &s.v_hat}) {
      for (int i = 0; i < m; ++i) out << ',' << (*v)(i);
    }
    out << '\n';
  }
}

std::vector<SampleRecord> read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  const long cols = std::count(line.begin(), line.end(), ',') + 1;
  if (cols < 10 || (cols - 10) % 6 != 0) throw std::runtime_error(path.string() + ": unexpected header");
  const int m = static_cast<int>((cols - 10) / 6);
  std::vector<SampleRecord> rows;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<long>(cells.size()) != cols) {
      throw std::runtime_error(path.string() + ": row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " fields");
    }
    auto num = [&](std::size_t i) { return std::stod(cells[i]); };
    SampleRecord s;
    s.t_s = num(0);
    s.current_a = num(1);
    s.soc_true = num(2);
    s.soc_est = num(3);
    s.region = std::stoi(cells[4]);
    s.mode = parse_estimator_mode(cells[5]);
    s.attack_active = cells[6] == "1";
    s.rd = num(7);
    s.ri = num(8);
    s.step_ms = num(9);
    std::size_t c = 10;
    for (VectorXd* v : {&s.v_true, &s.v_meas, &s.v_p, &s.e1, &s.e2, &s.v_hat}) {
      v->resize(m);
      for (int i = 0; i < m; ++i) (*v)(i) = num(c++);
    }
    rows.push_back(std::move(s));
  }
  return rows;
}

std::string report_json(const RunReport& r) {
  nlohmann::json j;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["id"] = r.id;
  j["mode"] = r.mode;
  j["attack"] = r.attack;
  j["modules"] = r.modules;
  j["samples"] = r.samples;
  j["attacked_samples"] = r.attacked_samples;
  j["rmse_v"] = r.rmse_v;
  j["rmse_all_v"] = r.rmse_all_v;
  j["max_overestimation_v"] = r.max_overestimation_v;
  j["max_underestimation_v"] = r.max_underestimation_v;
  j["mean_step_ms"] = r.mean_step_ms;
  j["median_step_ms"] = r.median_step_ms;
  j["max_step_ms"] = r.max_step_ms;
  j["trigger_time_s"] = opt(r.trigger_time_s);
  j["isolation_time_s"] = opt(r.isolation_time_s);
  j["rollback_time_s"] = opt(r.rollback_time_s);
  j["rd_threshold_v"] = r.rd_threshold_v;
  j["ri_threshold"] = r.ri_threshold;
  j["faults"] = r.faults;
  j["fit_failures"] = r.fit_failures;
  j["variance_clamps"] = r.variance_clamps;
  j["soc_clamps"] = r.soc_clamps;
  return j.dump(2);
}

}  // namespace ksve
