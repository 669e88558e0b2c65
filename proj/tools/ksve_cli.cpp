// ksve: simulate / train-gpr / run / montecarlo / derive-regions.
//
// Exit codes: 0 ok, 2 usage or config error, 3 input file error,
// 4 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ksve/harness.hpp"

namespace fs = std::filesystem;
using namespace ksve;

namespace {

enum Exit { ok = 0, usage = 2, input = 3, runtime = 4 };

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int cmd_simulate(const fs::path& config, const fs::path& out) {
  const ScenarioConfig cfg = load_scenario(config);
  const ScenarioData d = simulate_scenario(cfg);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_stream(d.attacked, out);
  std::cout << "wrote " << d.attacked.size() << " samples of " << d.attacked.modules() << " modules to " << out << '\n';
  return ok;
}

int cmd_run(const fs::path& config, const fs::path& out) {
  const ScenarioConfig cfg = load_scenario(config);
  const ScenarioRun run = run_scenario(cfg);
  fs::create_directories(out);
  write_samples_csv(run.samples, out / "samples.csv");
  write_text(out / "report.json", report_json(run.report) + "\n");
  const auto& r = run.report;
  std::cout << cfg.id << " [" << r.mode << ", " << r.attack << "] rmse " << r.rmse_all_v << " V, over "
            << r.max_overestimation_v << " V, under " << r.max_underestimation_v << " V, step " << r.mean_step_ms
            << " ms (median " << r.median_step_ms << "), trigger ";
  if (r.trigger_time_s) {
    std::cout << *r.trigger_time_s << " s\n";
  } else {
    std::cout << "none\n";
  }
  return ok;
}

int cmd_montecarlo(const fs::path& config, const fs::path& out) {
  const SweepConfig cfg = load_sweep(config);
  const SweepResult res = monte_carlo(cfg);
  write_sweep_outputs(res, out);
  for (const auto& a : res.aggregate) {
    std::cout << a.method << " age " << a.age << ": " << a.runs - a.failures << "/" << a.runs << " runs, mean rmse "
              << a.mean_rmse_v << " V, over " << a.max_overestimation_v << " V, under " << a.max_underestimation_v
              << " V\n";
  }
  return ok;
}

int cmd_train(const fs::path& config, const fs::path& out) {
  const TrainConfig cfg = load_train(config);
  const GprBank bank = train_gpr(cfg);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_bank(bank, out.string());
  std::cout << "trained " << bank.models().size() << " region models for " << bank.modules().size()
            << " modules -> " << out << '\n';
  return ok;
}

// Config: {"cell": {...}, "resolution": 401, "smoothing": 5, "grid_points": 1001}
int cmd_regions(const fs::path& config, const fs::path& out) {
  std::ifstream in(config);
  if (!in) throw ConfigError("", "cannot open config file " + config.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("", "expected an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "resolution" && k != "smoothing" && k != "grid_points") throw ConfigError(k, "unknown key");
    if (!v.is_number_integer() || v.get<int>() < 1) throw ConfigError(k, "expected a positive integer");
  }
  const int resolution = j.value("resolution", 401);
  const int smoothing = j.value("smoothing", 5);
  const int grid = j.value("grid_points", 1001);
  const auto map = build_ocv_soc_map(CellParams{}, resolution);
  const auto d = derive_regions(map, smoothing, grid);
  const auto table = HeuristicTable::standard();
  std::vector<double> reference;
  for (std::size_t i = 1; i < table.regions.size(); ++i) reference.push_back(table.regions[i].lo);
  nlohmann::json r;
  r["boundaries"] = d.boundaries;
  r["second_derivative_zeros"] = d.d2_zeros;
  r["third_derivative_zeros"] = d.d3_zeros;
  r["reference_boundaries"] = reference;
  r["diagnostic"] = d.diagnostic;
  write_text(out, r.dump(2) + "\n");
  std::cout << d.boundaries.size() << " boundaries (reference table has " << reference.size() << ")\n";
  if (!d.diagnostic.empty()) std::cout << d.diagnostic << '\n';
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Secure Koopman voltage estimation for battery packs"};
  app.require_subcommand(1);
  fs::path config, out;
  auto add = [&](const char* name, const char* help) {
    auto* sc = app.add_subcommand(name, help);
    sc->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
    sc->add_option("--out", out, "output path")->required();
    return sc;
  };
  auto* sim = add("simulate", "simulate a scenario and write the attacked telemetry CSV");
  auto* train = add("train-gpr", "harvest stage II rows from nominal runs and write a GPR bank");
  auto* run = add("run", "run one scenario; writes report.json and samples.csv into --out");
  auto* mc = add("montecarlo", "run a seeded sweep; writes runs/aggregate/violin tables into --out");
  auto* reg = add("derive-regions", "derive SOC region boundaries from the OCV curve");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(config, out);
    if (train->parsed()) return cmd_train(config, out);
    if (run->parsed()) return cmd_run(config, out);
    if (mc->parsed()) return cmd_montecarlo(config, out);
    if (reg->parsed()) return cmd_regions(config, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return usage;
  } catch (const BankFormatError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return input;
  } catch (const TelemetryParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return input;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime;
  }
  return usage;
}
