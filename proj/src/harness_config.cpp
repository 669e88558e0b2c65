// JSON config parsing. Errors carry the dotted path of the offending field;
// unknown keys are rejected so that typos do not silently fall back to
// defaults.

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ksve/harness.hpp"

namespace ksve {

namespace {

using nlohmann::json;

class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  void only(std::initializer_list<const char*> keys) const {
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!allowed.count(k)) throw ConfigError(field(k), "unknown key");
    }
  }

  Node child(const char* key) const {
    if (!has(key)) throw ConfigError(field(key), "missing");
    return Node(j_.at(key), field(key));
  }

  const json& raw(const char* key) const {
    if (!has(key)) throw ConfigError(field(key), "missing");
    return j_.at(key);
  }

  double number(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    return v.get<double>();
  }
  double number(const char* key, double def) const { return has(key) ? number(key) : def; }
  std::optional<double> maybe_number(const char* key) const {
    return has(key) ? std::optional<double>(number(key)) : std::nullopt;
  }

  long integer(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
    return v.get<long>();
  }
  long integer(const char* key, long def) const { return has(key) ? integer(key) : def; }

  std::uint64_t seed(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(field(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string text(const char* key) const {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    return v.get<std::string>();
  }
  std::string text(const char* key, const std::string& def) const { return has(key) ? text(key) : def; }

  std::vector<Node> array_of_objects(const char* key) const {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(field(key), "expected an array");
    std::vector<Node> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(v[i], field(key) + "[" + std::to_string(i) + "]");
    return out;
  }

  std::vector<std::string> strings(const char* key) const {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(field(key), "expected an array");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected a string");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  std::vector<int> integers(const char* key) const {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(field(key), "expected an array");
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer()) throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected an integer");
      out.push_back(v[i].get<int>());
    }
    return out;
  }

 private:
  const json& j_;
  std::string path_;
};

json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("config is not valid JSON: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename F>
auto wrap(const std::string& field, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

ProtocolMode parse_direction(const Node& n, const char* key) {
  const std::string s = n.text(key);
  if (s == "charge") return ProtocolMode::charge;
  if (s == "discharge") return ProtocolMode::discharge;
  throw ConfigError(n.field(key), "expected 'charge' or 'discharge', got '" + s + "'");
}

PackSpec parse_pack(const Node& n) {
  n.only({"preset", "aging_cycles", "fade_per_cycle", "r_growth_per_cycle", "cell", "heterogeneity"});
  PackSpec p;
  p.preset = n.text("preset", p.preset);
  wrap(n.field("preset"), [&] { return PackTopology::preset(p.preset); });
  p.aging_cycles = static_cast<int>(n.integer("aging_cycles", 0));
  if (p.aging_cycles < 0) throw ConfigError(n.field("aging_cycles"), "must be >= 0");
  p.fade_per_cycle = n.number("fade_per_cycle", p.fade_per_cycle);
  p.r_growth_per_cycle = n.number("r_growth_per_cycle", p.r_growth_per_cycle);
  if (n.has("cell")) {
    const Node c = n.child("cell");
    c.only({"capacity_ah", "v_min", "v_max", "r0", "r1", "c1"});
    p.cell.capacity_ah = c.number("capacity_ah", p.cell.capacity_ah);
    p.cell.v_min = c.number("v_min", p.cell.v_min);
    p.cell.v_max = c.number("v_max", p.cell.v_max);
    p.cell.r0 = c.number("r0", p.cell.r0);
    p.cell.r1 = c.number("r1", p.cell.r1);
    p.cell.c1 = c.number("c1", p.cell.c1);
    wrap(n.field("cell"), [&] { p.cell.validate(); });
  }
  if (n.has("heterogeneity")) {
    const Node h = n.child("heterogeneity");
    h.only({"param_jitter", "soc_jitter"});
    p.heterogeneity.param_jitter = h.number("param_jitter", p.heterogeneity.param_jitter);
    p.heterogeneity.soc_jitter = h.number("soc_jitter", p.heterogeneity.soc_jitter);
  }
  wrap(n.field("aging_cycles"),
       [&] { apply_aging(p.cell, p.aging_cycles, p.fade_per_cycle, p.r_growth_per_cycle); });
  return p;
}

WindowConfig parse_window(const Node& n) {
  n.only({"S", "S_tilde", "tau", "dt_s"});
  WindowConfig w;
  w.S = static_cast<int>(n.integer("S", w.S));
  w.S_tilde = static_cast<int>(n.integer("S_tilde", w.S_tilde));
  w.tau = static_cast<int>(n.integer("tau", w.tau));
  w.dt_s = n.number("dt_s", w.dt_s);
  wrap(n.field(""), [&] { w.validate(); });
  return w;
}

DetectorSpec parse_detector(const Node& n) {
  n.only({"confirm_count", "k_sigma", "warmup_refits", "rd_threshold_v", "ri_threshold"});
  DetectorSpec d;
  d.confirm_count = static_cast<int>(n.integer("confirm_count", d.confirm_count));
  d.k_sigma = n.number("k_sigma", d.k_sigma);
  d.warmup_refits = static_cast<int>(n.integer("warmup_refits", d.warmup_refits));
  if (d.warmup_refits < 0) throw ConfigError(n.field("warmup_refits"), "must be >= 0");
  d.rd_threshold_v = n.maybe_number("rd_threshold_v");
  d.ri_threshold = n.maybe_number("ri_threshold");
  if (d.confirm_count < 1) throw ConfigError(n.field("confirm_count"), "must be >= 1");
  if (!(d.k_sigma > 0)) throw ConfigError(n.field("k_sigma"), "must be positive");
  if (d.rd_threshold_v && !(*d.rd_threshold_v > 0)) throw ConfigError(n.field("rd_threshold_v"), "must be positive");
  if (d.ri_threshold && !(*d.ri_threshold > 0)) throw ConfigError(n.field("ri_threshold"), "must be positive");
  return d;
}

void parse_estimator_block(const Node& n, EstimatorMode* mode, double& rank_tol, int& handoff) {
  if (mode) {
    n.only({"mode", "rank_tol", "handoff_margin"});
    *mode = wrap(n.field("mode"), [&] { return parse_estimator_mode(n.text("mode", to_string(*mode))); });
  } else {
    n.only({"rank_tol", "handoff_margin"});
  }
  rank_tol = n.number("rank_tol", rank_tol);
  handoff = static_cast<int>(n.integer("handoff_margin", handoff));
  if (!(rank_tol > 0 && rank_tol < 1)) throw ConfigError(n.field("rank_tol"), "must lie in (0, 1)");
  if (handoff < 0) throw ConfigError(n.field("handoff_margin"), "must be >= 0");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

void ScenarioConfig::validate() const {
  wrap("pack.preset", [&] { PackTopology::preset(pack.preset); });
  wrap("pack.cell", [&] { pack.cell.validate(); });
  wrap("window", [&] { window.validate(); });
  wrap("attack", [&] { attack.validate(); });
  if (!(protocol.c_rate > 0)) throw ConfigError("protocol.c_rate", "must be positive");
  if (!(protocol.duration_s > 0)) throw ConfigError("protocol.duration_s", "must be positive");
  if (!(protocol.history_s >= 0)) throw ConfigError("protocol.history_s", "must be >= 0");
  if (!(protocol.noise_std_v >= 0)) throw ConfigError("protocol.noise_std_v", "must be >= 0");
  if (!(protocol.dt_s > 0)) throw ConfigError("protocol.dt_s", "must be positive");
  if (!(protocol.soc_lo >= 0 && protocol.soc_lo < protocol.soc_hi && protocol.soc_hi <= 1)) {
    throw ConfigError("protocol.soc_lo", "need 0 <= soc_lo < soc_hi <= 1");
  }
  if (!(protocol.initial_soc >= 0 && protocol.initial_soc <= 1)) throw ConfigError("protocol.initial_soc", "must lie in [0, 1]");
  if (protocol.soc_at_attack && !(*protocol.soc_at_attack >= 0 && *protocol.soc_at_attack <= 1)) {
    throw ConfigError("protocol.soc_at_attack", "must lie in [0, 1]");
  }
  if (protocol.dt_s != window.dt_s) throw ConfigError("window.dt_s", "must equal protocol.dt_s");
  if (detector.confirm_count < 1) throw ConfigError("detector.confirm_count", "must be >= 1");
  if (mode == EstimatorMode::secure_gpr) {
    if (gpr_bank.empty()) throw ConfigError("gpr_bank", "required in gpr mode");
    if (!std::filesystem::exists(gpr_bank)) throw ConfigError("gpr_bank", "file not found: " + gpr_bank.string());
  }
}

ScenarioConfig parse_scenario(const std::string& json_text, const std::filesystem::path& base_dir) {
  const json j = parse_text(json_text);
  const Node root(j, "");
  root.only({"id", "seed", "pack", "protocol", "window", "estimator", "attack", "detector", "gpr_bank"});
  ScenarioConfig c;
  c.id = root.text("id", c.id);
  c.seed = root.seed("seed");
  if (root.has("pack")) c.pack = parse_pack(root.child("pack"));
  if (root.has("protocol")) {
    const Node p = root.child("protocol");
    p.only({"mode", "c_rate", "soc_lo", "soc_hi", "initial_soc", "soc_at_attack", "duration_s", "history_s",
            "noise_std_v", "dt_s"});
    auto& q = c.protocol;
    if (p.has("mode")) q.mode = parse_direction(p, "mode");
    q.c_rate = p.number("c_rate", q.c_rate);
    q.soc_lo = p.number("soc_lo", q.soc_lo);
    q.soc_hi = p.number("soc_hi", q.soc_hi);
    q.initial_soc = p.number("initial_soc", q.initial_soc);
    q.soc_at_attack = p.maybe_number("soc_at_attack");
    q.duration_s = p.number("duration_s", q.duration_s);
    q.history_s = p.number("history_s", q.history_s);
    q.noise_std_v = p.number("noise_std_v", q.noise_std_v);
    q.dt_s = p.number("dt_s", q.dt_s);
  }
  if (root.has("window")) c.window = parse_window(root.child("window"));
  if (root.has("estimator")) parse_estimator_block(root.child("estimator"), &c.mode, c.rank_tol, c.handoff_margin);
  if (root.has("attack")) {
    const Node a = root.child("attack");
    a.only({"kind", "start_s", "duration_s", "bias_v"});
    c.attack.kind = wrap(a.field("kind"), [&] { return parse_attack_kind(a.text("kind")); });
    c.attack.start_s = a.number("start_s", c.attack.start_s);
    c.attack.duration_s = a.number("duration_s", c.attack.duration_s);
    c.attack.bias_v = a.number("bias_v", c.attack.bias_v);
  }
  if (root.has("detector")) c.detector = parse_detector(root.child("detector"));
  if (root.has("gpr_bank")) c.gpr_bank = resolve(base_dir, root.text("gpr_bank"));
  c.validate();
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  return parse_scenario(read_file(path), path.parent_path());
}

void SweepConfig::validate() const {
  if (runs < 1) throw ConfigError("runs", "must be >= 1");
  if (workers < 1) throw ConfigError("workers", "must be >= 1");
  if (packs.empty()) throw ConfigError("packs", "must not be empty");
  for (std::size_t i = 0; i < packs.size(); ++i) {
    wrap("packs[" + std::to_string(i) + "]", [&] { PackTopology::preset(packs[i]); });
  }
  if (ages.empty()) throw ConfigError("ages", "must not be empty");
  for (std::size_t i = 0; i < ages.size(); ++i) {
    if (ages[i] < 0) throw ConfigError("ages[" + std::to_string(i) + "]", "must be >= 0");
  }
  if (methods.empty()) throw ConfigError("methods", "must not be empty");
  if (attacks.empty()) throw ConfigError("attacks", "must not be empty");
  if (!(onset_lo_s >= 0 && onset_lo_s <= onset_hi_s)) throw ConfigError("onset_s", "need 0 <= lo <= hi");
  if (!(soc_lo > 0 && soc_lo <= soc_hi && soc_hi < 1)) throw ConfigError("soc_at_attack", "need 0 < lo <= hi < 1");
  if (!(attack_duration_s > 0)) throw ConfigError("attack_duration_s", "must be positive");
  if (!(noise_std_v >= 0)) throw ConfigError("noise_std_v", "must be >= 0");
  wrap("window", [&] { window.validate(); });
  for (const auto& [pack, path] : gpr_banks) {
    if (!std::filesystem::exists(path)) throw ConfigError("gpr_banks." + pack, "file not found: " + path.string());
  }
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (methods[i] == EstimatorMode::nominal) throw ConfigError("methods[" + std::to_string(i) + "]", "must be a secure mode");
  }
}

SweepConfig parse_sweep(const std::string& json_text, const std::filesystem::path& base_dir) {
  const json j = parse_text(json_text);
  const Node root(j, "");
  root.only({"seed", "runs", "workers", "packs", "ages", "methods", "attacks", "onset_s", "soc_at_attack",
             "attack_duration_s", "bias_v", "noise_std_v", "window", "estimator", "detector", "gpr_banks"});
  SweepConfig s;
  s.seed = root.seed("seed");
  s.runs = static_cast<int>(root.integer("runs", s.runs));
  s.workers = static_cast<int>(root.integer("workers", s.workers));
  if (root.has("packs")) s.packs = root.strings("packs");
  if (root.has("ages")) s.ages = root.integers("ages");
  if (root.has("methods")) {
    s.methods.clear();
    const auto names = root.strings("methods");
    for (std::size_t i = 0; i < names.size(); ++i) {
      s.methods.push_back(
          wrap("methods[" + std::to_string(i) + "]", [&] { return parse_estimator_mode(names[i]); }));
    }
  }
  if (root.has("attacks")) {
    s.attacks.clear();
    const auto names = root.strings("attacks");
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto k = wrap("attacks[" + std::to_string(i) + "]", [&] { return parse_attack_kind(names[i]); });
      if (k == AttackKind::none) throw ConfigError("attacks[" + std::to_string(i) + "]", "'none' is not an attack");
      s.attacks.push_back(k);
    }
  }
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!root.has(key)) return;
    const json& v = root.raw(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError(key, "expected [lo, hi]");
    }
    lo = v[0].get<double>();
    hi = v[1].get<double>();
  };
  range("onset_s", s.onset_lo_s, s.onset_hi_s);
  range("soc_at_attack", s.soc_lo, s.soc_hi);
  s.attack_duration_s = root.number("attack_duration_s", s.attack_duration_s);
  s.bias_v = root.number("bias_v", s.bias_v);
  s.noise_std_v = root.number("noise_std_v", s.noise_std_v);
  if (root.has("window")) s.window = parse_window(root.child("window"));
  if (root.has("estimator")) parse_estimator_block(root.child("estimator"), nullptr, s.rank_tol, s.handoff_margin);
  if (root.has("detector")) s.detector = parse_detector(root.child("detector"));
  if (root.has("gpr_banks")) {
    const json& b = root.raw("gpr_banks");
    if (!b.is_object()) throw ConfigError("gpr_banks", "expected an object");
    for (const auto& [k, v] : b.items()) {
      if (!v.is_string()) throw ConfigError("gpr_banks." + k, "expected a path");
      s.gpr_banks[k] = resolve(base_dir, v.get<std::string>());
    }
  }
  s.validate();
  return s;
}

SweepConfig load_sweep(const std::filesystem::path& path) { return parse_sweep(read_file(path), path.parent_path()); }

void TrainConfig::validate() const {
  wrap("pack.preset", [&] { PackTopology::preset(pack.preset); });
  wrap("window", [&] { window.validate(); });
  if (runs.empty()) throw ConfigError("runs", "need at least one nominal run");
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string f = "runs[" + std::to_string(i) + "]";
    if (!(runs[i].initial_soc >= 0 && runs[i].initial_soc <= 1)) throw ConfigError(f + ".initial_soc", "must lie in [0, 1]");
    if (!(runs[i].duration_s > 0)) throw ConfigError(f + ".duration_s", "must be positive");
  }
  if (!(noise_std_v >= 0)) throw ConfigError("noise_std_v", "must be >= 0");
  if (!(shadow_every_s > 0)) throw ConfigError("shadow.every_s", "must be positive");
  if (!(shadow_length_s > 0)) throw ConfigError("shadow.length_s", "must be positive");
  if (bank.max_rows < bank.min_rows || bank.min_rows < 1) throw ConfigError("bank.max_rows", "need 1 <= min_rows <= max_rows");
}

TrainConfig parse_train(const std::string& json_text, const std::filesystem::path&) {
  const json j = parse_text(json_text);
  const Node root(j, "");
  root.only({"id", "seed", "pack", "runs", "noise_std_v", "window", "estimator", "shadow", "bank"});
  TrainConfig t;
  t.id = root.text("id", t.id);
  t.seed = root.seed("seed");
  if (root.has("pack")) t.pack = parse_pack(root.child("pack"));
  for (const Node& r : root.array_of_objects("runs")) {
    r.only({"mode", "initial_soc", "duration_s"});
    TrainRun run;
    run.mode = parse_direction(r, "mode");
    run.initial_soc = r.number("initial_soc", run.initial_soc);
    run.duration_s = r.number("duration_s", run.duration_s);
    t.runs.push_back(run);
  }
  t.noise_std_v = root.number("noise_std_v", t.noise_std_v);
  if (root.has("window")) t.window = parse_window(root.child("window"));
  if (root.has("estimator")) parse_estimator_block(root.child("estimator"), nullptr, t.rank_tol, t.handoff_margin);
  if (root.has("shadow")) {
    const Node s = root.child("shadow");
    s.only({"every_s", "length_s"});
    t.shadow_every_s = s.number("every_s", t.shadow_every_s);
    t.shadow_length_s = s.number("length_s", t.shadow_length_s);
  }
  if (root.has("bank")) {
    const Node b = root.child("bank");
    b.only({"max_rows", "min_rows", "threads", "max_iters"});
    const long max_rows = b.integer("max_rows", static_cast<long>(t.bank.max_rows));
    const long min_rows = b.integer("min_rows", static_cast<long>(t.bank.min_rows));
    if (max_rows < 1 || min_rows < 1) throw ConfigError("bank.max_rows", "row limits must be positive");
    t.bank.max_rows = static_cast<std::size_t>(max_rows);
    t.bank.min_rows = static_cast<std::size_t>(min_rows);
    t.bank.threads = static_cast<int>(b.integer("threads", t.bank.threads));
    t.bank.fit.max_iters = static_cast<int>(b.integer("max_iters", t.bank.fit.max_iters));
  }
  t.validate();
  return t;
}

TrainConfig load_train(const std::filesystem::path& path) { return parse_train(read_file(path), path.parent_path()); }

}  // namespace ksve
