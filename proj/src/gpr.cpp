#include "ksve/gpr.hpp"

#include <atomic>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

namespace ksve {

namespace {

constexpr const char* kBankFormat = "ksve-gpr-bank";
constexpr int kBankVersion = 1;

struct Bucket {
  int module = 0;
  int region = 0;
  std::vector<std::size_t> rows;
};

BankModel fit_bucket(const std::vector<Stage2Row>& rows, const Bucket& b, const BankTrainOptions& opt) {
  std::vector<std::size_t> idx = b.rows;
  if (idx.size() > opt.max_rows) {
    std::mt19937_64 rng(opt.seed * 1000003ULL + static_cast<unsigned long long>(b.module) * 131ULL +
                        static_cast<unsigned long long>(b.region));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(opt.max_rows);
    std::sort(idx.begin(), idx.end());
  }
  const auto n = static_cast<Eigen::Index>(idx.size());
  MatrixXd x(n, 4);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = rows[idx[static_cast<std::size_t>(i)]].theta.transpose();
    y(i) = rows[idx[static_cast<std::size_t>(i)]].target;
  }
  BankModel bm;
  bm.module = b.module;
  bm.region = b.region;
  bm.input_mean = x.colwise().mean().transpose();
  for (int c = 0; c < 4; ++c) {
    const double sd = std::sqrt((x.col(c).array() - bm.input_mean(c)).square().mean());
    bm.input_scale(c) = sd > 1e-12 * (1.0 + std::abs(bm.input_mean(c))) ? sd : 1.0;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = ((x.row(i).transpose() - bm.input_mean).array() / bm.input_scale.array()).matrix().transpose();
  }

  const double ymean = y.mean();
  const double ysd = std::sqrt((y.array() - ymean).square().mean());
  const double scale = ysd > 0 ? ysd : std::max(1e-6, 1e-3 * std::abs(ymean));
  // a few length-scale starts, keep the best likelihood
  bool have = false;
  double best_lml = -std::numeric_limits<double>::infinity();
  std::string last_error;
  for (double l0 : {0.5, 1.0, 2.0}) {
    GprHyper<double> init{ymean, scale, l0, 0.1 * scale};
    try {
      auto gp = fit_gpr<double>(x, y, init, opt.fit);
      const double lml = gp.objective_history.back();
      if (!have || lml > best_lml) {
        best_lml = lml;
        bm.gp = std::move(gp);
        have = true;
      }
    } catch (const GprFitError& e) {
      last_error = e.what();
    }
  }
  if (!have) {
    throw GprFitError("module " + std::to_string(b.module) + " region " + std::to_string(b.region) + ": " +
                      last_error);
  }
  return bm;
}

}  // namespace

Stage2Prediction GprBank::predict_e2(int module, int region, const Eigen::Vector4d& theta) const {
  const BankModel& bm = model_for(module, region);
  const VectorXd z = ((theta - bm.input_mean).array() / bm.input_scale.array()).matrix();
  const auto p = predict<double>(bm.gp, z);
  return {p.mean, p.variance, p.clamped};
}

const BankModel& GprBank::model_for(int module, int region) const {
  const auto it = lookup_.find({module, region});
  if (it == lookup_.end()) {
    throw std::out_of_range("GPR bank has no model for module " + std::to_string(module) + " region " +
                            std::to_string(region));
  }
  return models_[it->second];
}

int GprBank::source_region(int module, int region) const { return model_for(module, region).region; }

bool GprBank::has_module(int module) const { return lookup_.count({module, 1}) > 0; }

std::vector<int> GprBank::modules() const {
  std::set<int> s;
  for (const auto& m : models_) s.insert(m.module);
  return {s.begin(), s.end()};
}

GprBank train_bank(const std::vector<Stage2Row>& rows, const HeuristicTable& table, const BankTrainOptions& opt) {
  if (rows.empty()) throw std::invalid_argument("stage II training set is empty");
  if (opt.min_rows < 5) throw std::invalid_argument("GPR buckets need at least 5 rows");
  if (opt.max_rows < opt.min_rows) throw std::invalid_argument("max_rows below min_rows");
  table.validate();
  const int regions = static_cast<int>(table.regions.size());

  std::map<std::pair<int, int>, Bucket> buckets;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.module < 0) throw std::invalid_argument("stage II row " + std::to_string(i) + " has a negative module");
    if (!r.theta.allFinite() || !std::isfinite(r.target) || !std::isfinite(r.soc)) {
      throw std::invalid_argument("stage II row " + std::to_string(i) + " is not finite");
    }
    const int j = region_of(std::clamp(r.soc, 0.0, 1.0), table);
    auto& b = buckets[{r.module, j}];
    b.module = r.module;
    b.region = j;
    b.rows.push_back(i);
  }

  GprBank bank;
  bank.regions_ = regions;
  std::vector<const Bucket*> todo;
  std::set<int> modules;
  for (const auto& [key, b] : buckets) {
    bank.bucket_rows[key] = b.rows.size();
    modules.insert(key.first);
    if (b.rows.size() >= opt.min_rows) todo.push_back(&b);
  }
  for (int module : modules) {
    const bool any = std::any_of(todo.begin(), todo.end(), [&](const Bucket* b) { return b->module == module; });
    if (!any) {
      throw std::invalid_argument("module " + std::to_string(module) + " has fewer than " +
                                  std::to_string(opt.min_rows) + " rows in every region");
    }
  }

  // Buckets are independent; results land in fixed slots so the bank does not
  // depend on scheduling.
  std::vector<BankModel> fitted(todo.size());
  std::vector<std::string> errors(todo.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      try {
        fitted[i] = fit_bucket(rows, *todo[i], opt);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  unsigned threads = opt.threads > 0 ? static_cast<unsigned>(opt.threads) : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(todo.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) throw GprFitError(e);
  }

  bank.models_ = std::move(fitted);
  for (int module : modules) {
    for (int j = 1; j <= regions; ++j) {
      std::size_t best = 0;
      int best_dist = std::numeric_limits<int>::max();
      for (std::size_t i = 0; i < bank.models_.size(); ++i) {
        const auto& m = bank.models_[i];
        if (m.module != module) continue;
        const int d = std::abs(m.region - j);
        if (d < best_dist) {  // ties keep the lower region (models are sorted)
          best_dist = d;
          best = i;
        }
      }
      bank.lookup_[{module, j}] = best;
    }
  }
  return bank;
}

// ---- persistence ----

namespace {

nlohmann::json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

[[noreturn]] void bad(const std::string& field, const std::string& why) {
  throw BankFormatError("bank field '" + field + "': " + why);
}

const nlohmann::json& need(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) bad(path + key, "missing");
  return j.at(key);
}

double number(const nlohmann::json& j, const std::string& field) {
  if (!j.is_number()) bad(field, "not a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) bad(field, "not finite");
  return v;
}

int integer(const nlohmann::json& j, const std::string& field) {
  if (!j.is_number_integer()) bad(field, "not an integer");
  return j.get<int>();
}

VectorXd vector_field(const nlohmann::json& j, const std::string& field, Eigen::Index expect = -1) {
  if (!j.is_array()) bad(field, "not an array");
  if (expect >= 0 && static_cast<Eigen::Index>(j.size()) != expect) {
    bad(field, "expected " + std::to_string(expect) + " entries, found " + std::to_string(j.size()));
  }
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], field);
  return v;
}

}  // namespace

void save_bank(const GprBank& bank, std::ostream& out) {
  nlohmann::json j;
  j["format"] = kBankFormat;
  j["version"] = kBankVersion;
  j["regions"] = bank.regions();
  j["scenario_ids"] = bank.scenario_ids;
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [key, n] : bank.bucket_rows) counts.push_back({key.first, key.second, n});
  j["bucket_rows"] = counts;
  nlohmann::json lookup = nlohmann::json::array();
  for (int module : bank.modules()) {
    for (int r = 1; r <= bank.regions(); ++r) lookup.push_back({module, r, bank.source_region(module, r)});
  }
  j["lookup"] = lookup;
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : bank.models()) {
    nlohmann::json e;
    e["module"] = m.module;
    e["region"] = m.region;
    e["input_mean"] = vec_json(m.input_mean);
    e["input_scale"] = vec_json(m.input_scale);
    e["hyper"] = {{"beta", m.gp.hyper.beta},
                  {"sigma_g", m.gp.hyper.sigma_g},
                  {"length_scale", m.gp.hyper.length_scale},
                  {"sigma_eta", m.gp.hyper.sigma_eta}};
    e["jitter"] = m.gp.jitter;
    nlohmann::json x = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.gp.x.rows(); ++i) x.push_back(vec_json(m.gp.x.row(i).transpose()));
    e["x"] = x;
    e["y"] = vec_json(m.gp.y);
    models.push_back(std::move(e));
  }
  j["models"] = models;
  out << j.dump() << '\n';
}

GprBank load_bank(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw BankFormatError("bank file is truncated or malformed at byte " + std::to_string(e.byte) + ": " +
                          e.what());
  }
  if (need(j, "format", "") != kBankFormat) bad("format", "not a ksve GPR bank");
  const int version = integer(need(j, "version", ""), "version");
  if (version != kBankVersion) bad("version", "unsupported version " + std::to_string(version));

  GprBank bank;
  bank.regions_ = integer(need(j, "regions", ""), "regions");
  if (bank.regions_ < 1) bad("regions", "must be positive");
  const auto& ids = need(j, "scenario_ids", "");
  if (!ids.is_array()) bad("scenario_ids", "not an array");
  for (const auto& s : ids) {
    if (!s.is_string()) bad("scenario_ids", "entries must be strings");
    bank.scenario_ids.push_back(s.get<std::string>());
  }
  const auto& counts = need(j, "bucket_rows", "");
  if (!counts.is_array()) bad("bucket_rows", "not an array");
  for (const auto& c : counts) {
    if (!c.is_array() || c.size() != 3) bad("bucket_rows", "entries must be [module, region, rows]");
    bank.bucket_rows[{integer(c[0], "bucket_rows"), integer(c[1], "bucket_rows")}] =
        static_cast<std::size_t>(integer(c[2], "bucket_rows"));
  }

  const auto& models = need(j, "models", "");
  if (!models.is_array() || models.empty()) bad("models", "must be a non-empty array");
  std::map<std::pair<int, int>, std::size_t> by_key;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const std::string p = "models[" + std::to_string(i) + "].";
    const auto& e = models[i];
    BankModel bm;
    bm.module = integer(need(e, "module", p), p + "module");
    bm.region = integer(need(e, "region", p), p + "region");
    if (bm.module < 0) bad(p + "module", "negative");
    if (bm.region < 1 || bm.region > bank.regions_) bad(p + "region", "out of range");
    bm.input_mean = vector_field(need(e, "input_mean", p), p + "input_mean", 4);
    bm.input_scale = vector_field(need(e, "input_scale", p), p + "input_scale", 4);
    if ((bm.input_scale.array() <= 0).any()) bad(p + "input_scale", "entries must be positive");
    const auto& h = need(e, "hyper", p);
    GprHyper<double> hyper;
    hyper.beta = number(need(h, "beta", p + "hyper."), p + "hyper.beta");
    hyper.sigma_g = number(need(h, "sigma_g", p + "hyper."), p + "hyper.sigma_g");
    hyper.length_scale = number(need(h, "length_scale", p + "hyper."), p + "hyper.length_scale");
    hyper.sigma_eta = number(need(h, "sigma_eta", p + "hyper."), p + "hyper.sigma_eta");
    try {
      hyper.validate();
    } catch (const std::invalid_argument& ex) {
      bad(p + "hyper", ex.what());
    }
    const double jitter = number(need(e, "jitter", p), p + "jitter");
    if (jitter < 0) bad(p + "jitter", "negative");
    const auto& xj = need(e, "x", p);
    if (!xj.is_array() || xj.size() < 5) bad(p + "x", "needs at least 5 rows");
    MatrixXd x(static_cast<Eigen::Index>(xj.size()), 4);
    for (std::size_t r = 0; r < xj.size(); ++r) {
      x.row(static_cast<Eigen::Index>(r)) = vector_field(xj[r], p + "x", 4).transpose();
    }
    VectorXd y = vector_field(need(e, "y", p), p + "y", x.rows());
    try {
      bm.gp = condition<double>(std::move(x), std::move(y), hyper, jitter);
    } catch (const GprFitError& ex) {
      bad(p + "x", ex.what());
    }
    if (by_key.count({bm.module, bm.region})) bad(p + "region", "duplicate model");
    by_key[{bm.module, bm.region}] = bank.models_.size();
    bank.models_.push_back(std::move(bm));
  }

  const auto& lookup = need(j, "lookup", "");
  if (!lookup.is_array()) bad("lookup", "not an array");
  for (const auto& l : lookup) {
    if (!l.is_array() || l.size() != 3) bad("lookup", "entries must be [module, region, source_region]");
    const int module = integer(l[0], "lookup");
    const int region = integer(l[1], "lookup");
    const int source = integer(l[2], "lookup");
    const auto it = by_key.find({module, source});
    if (it == by_key.end()) {
      bad("lookup", "module " + std::to_string(module) + " region " + std::to_string(region) +
                        " points at missing model region " + std::to_string(source));
    }
    bank.lookup_[{module, region}] = it->second;
  }
  for (int module : bank.modules()) {
    for (int r = 1; r <= bank.regions_; ++r) {
      if (!bank.lookup_.count({module, r})) {
        bad("lookup", "no entry for module " + std::to_string(module) + " region " + std::to_string(r));
      }
    }
  }
  return bank;
}

void save_bank(const GprBank& bank, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write GPR bank to " + path);
  save_bank(bank, out);
  if (!out) throw std::runtime_error("failed writing GPR bank to " + path);
}

GprBank load_bank(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open GPR bank " + path);
  return load_bank(in);
}

}  // namespace ksve
