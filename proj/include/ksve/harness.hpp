#pragma once

// Scenario runs, detector calibration, Monte Carlo sweeps and the stage II
// training pipeline. Configs are JSON files; every random draw is derived
// from the config seed.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ksve/attack.hpp"
#include "ksve/detector.hpp"
#include "ksve/estimator.hpp"
#include "ksve/gpr.hpp"
#include "ksve/heuristic.hpp"
#include "ksve/pack_sim.hpp"

namespace ksve {

/// Bad or missing config value. `field()` is a dotted path such as
/// "attack.start_s" or "runs[1].mode".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : "config field '" + field + "': " + message),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Independent sub-seed for stream `stream` of a config seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct PackSpec {
  std::string preset = "5p80s";
  int aging_cycles = 0;
  double fade_per_cycle = 0.0005;
  double r_growth_per_cycle = 0.002;
  CellParams cell;  // unaged
  Heterogeneity heterogeneity;

  Pack build(std::uint64_t seed) const;
  /// Module capacity the estimator assumes: unaged cell times parallel count.
  double nominal_module_capacity_ah() const;
};

struct ScenarioProtocol {
  ProtocolMode mode = ProtocolMode::discharge;
  double c_rate = 1.0;
  double soc_lo = 0.02;
  double soc_hi = 0.98;
  /// Exactly one of initial_soc / soc_at_attack is used; soc_at_attack wins.
  double initial_soc = 0.5;
  std::optional<double> soc_at_attack;
  /// Stream covers [-history_s, duration_s).
  double duration_s = 1200.0;
  double history_s = 0.0;
  double noise_std_v = 0.01;
  double dt_s = 1.0;
};

struct DetectorSpec {
  int confirm_count = 3;
  double k_sigma = 5.0;
  /// The detector stays disarmed (and calibration ignores residuals) until
  /// this many refits have passed; the first windows after a start from
  /// rest carry the polarization transient.
  int warmup_refits = 4;
  /// Fixed thresholds skip calibration.
  std::optional<double> rd_threshold_v;
  std::optional<double> ri_threshold;
};

struct ScenarioConfig {
  std::string id = "scenario";
  std::uint64_t seed = 0;
  PackSpec pack;
  ScenarioProtocol protocol;
  WindowConfig window;
  EstimatorMode mode = EstimatorMode::secure_heuristic;
  double rank_tol = 1e-10;
  int handoff_margin = 10;
  AttackSpec attack;
  DetectorSpec detector;
  std::filesystem::path gpr_bank;  // required in gpr mode

  void validate() const;
};

ScenarioConfig parse_scenario(const std::string& json_text, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// SOC the simulation starts from so that the pack reaches soc_at_attack at
/// the attack onset (constant current, aged capacity).
double scenario_initial_soc(const ScenarioConfig& cfg);

struct ScenarioData {
  Pack pack;
  TelemetryStream clean;
  TelemetryStream attacked;
};

ScenarioData simulate_scenario(const ScenarioConfig& cfg);

EstimatorContext make_context(const ScenarioConfig& cfg, const Pack& pack, double initial_soc,
                              const Stage2Regressor* stage2 = nullptr);

/// Flattened [A B] of a voltage model; the isolation residual compares these.
MatrixXd operator_matrix(const KoopmanModel<double>& model);

struct Calibration {
  DetectorConfig detector;
  ResidualThreshold rd;
  ResidualThreshold ri;
};

/// Runs the nominal pipeline over an attack-free realisation of the scenario
/// with its own noise draw and sets thresholds at mean + k_sigma * std.
Calibration calibrate_detector(const ScenarioConfig& cfg);

struct SampleRecord {
  double t_s = 0.0;
  double current_a = 0.0;
  double soc_true = 0.0;
  double soc_est = 0.0;
  int region = 0;
  EstimatorMode mode = EstimatorMode::nominal;
  bool attack_active = false;
  double rd = 0.0;
  double ri = 0.0;
  double step_ms = 0.0;
  VectorXd v_true;
  VectorXd v_meas;
  VectorXd v_p;
  VectorXd e1;
  VectorXd e2;
  VectorXd v_hat;
};

struct RunReport {
  std::string id;
  std::string mode;
  std::string attack;
  int modules = 0;
  long samples = 0;
  long attacked_samples = 0;
  std::vector<double> rmse_v;  // per module over attacked samples
  double rmse_all_v = 0.0;
  double max_overestimation_v = 0.0;
  double max_underestimation_v = 0.0;
  double mean_step_ms = 0.0;
  double median_step_ms = 0.0;
  double max_step_ms = 0.0;
  std::optional<double> trigger_time_s;
  std::optional<double> isolation_time_s;
  std::optional<double> rollback_time_s;
  double rd_threshold_v = 0.0;
  double ri_threshold = 0.0;
  long faults = 0;
  long fit_failures = 0;
  long variance_clamps = 0;
  long soc_clamps = 0;
};

struct ScenarioRun {
  RunReport report;
  std::vector<SampleRecord> samples;
};

struct RunOptions {
  const Stage2Regressor* stage2 = nullptr;  // overrides cfg.gpr_bank
  std::optional<Calibration> calibration;
  /// Replaces cfg.mode when set.
  std::optional<EstimatorMode> mode;
  bool keep_samples = true;
};

/// simulate -> inject -> detect -> estimate. In a secure mode the estimator
/// is engaged on the first confirmed trigger.
ScenarioRun run_scenario(const ScenarioConfig& cfg, const RunOptions& options = {});

/// Metrics over the rows flagged attack_active; the CSV carries everything
/// this needs.
RunReport summarize(const std::vector<SampleRecord>& samples, RunReport base);

void write_samples_csv(const std::vector<SampleRecord>& samples, const std::filesystem::path& path);
std::vector<SampleRecord> read_samples_csv(const std::filesystem::path& path);
std::string report_json(const RunReport& report);

// ---- Monte Carlo ----

struct SweepConfig {
  std::uint64_t seed = 0;
  int runs = 1;
  int workers = 1;
  std::vector<std::string> packs{"5p60s", "5p80s", "5p100s"};
  std::vector<int> ages{1, 50, 100};
  std::vector<EstimatorMode> methods{EstimatorMode::secure_stage1, EstimatorMode::secure_heuristic};
  std::vector<AttackKind> attacks{AttackKind::dos_hold, AttackKind::fdi_bias, AttackKind::data_swap};
  double onset_lo_s = 240.0;
  double onset_hi_s = 600.0;
  double soc_lo = 0.3;  // SOC at onset
  double soc_hi = 0.8;
  double attack_duration_s = 900.0;
  double bias_v = -3.0;
  double noise_std_v = 0.01;
  WindowConfig window;
  double rank_tol = 1e-10;
  int handoff_margin = 10;
  DetectorSpec detector;
  std::map<std::string, std::filesystem::path> gpr_banks;  // by pack preset

  void validate() const;
};

SweepConfig parse_sweep(const std::string& json_text, const std::filesystem::path& base_dir = {});
SweepConfig load_sweep(const std::filesystem::path& path);

/// The scenario drawn for (run, pack index); depends only on the sweep seed.
ScenarioConfig sweep_scenario(const SweepConfig& sweep, int run, std::size_t pack_index);

struct SweepRow {
  int run = 0;
  std::string pack;
  int age = 0;
  std::string attack;
  std::string direction;
  double onset_s = 0.0;
  double soc_at_attack = 0.0;
  std::map<std::string, RunReport> reports;   // by method name
  std::map<std::string, std::string> errors;  // by method name
};

struct AggregateRow {
  std::string method;
  int age = 0;
  long runs = 0;
  long failures = 0;
  double mean_rmse_v = 0.0;
  double median_rmse_v = 0.0;
  double max_overestimation_v = 0.0;
  double max_underestimation_v = 0.0;
  double mean_step_ms = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // runs x packs, ordered by (run, pack)
  std::vector<AggregateRow> aggregate;
};

SweepResult monte_carlo(const SweepConfig& sweep);
void write_sweep_outputs(const SweepResult& result, const std::filesystem::path& dir);

// ---- stage II training ----

struct TrainRun {
  ProtocolMode mode = ProtocolMode::charge;
  double initial_soc = 0.2;
  double duration_s = 2400.0;
};

struct TrainConfig {
  std::string id = "train";
  std::uint64_t seed = 0;
  PackSpec pack;
  std::vector<TrainRun> runs;
  double noise_std_v = 0.01;
  WindowConfig window;
  double rank_tol = 1e-10;
  int handoff_margin = 10;
  /// A stage I shadow chain is forked every shadow_every_s and followed for
  /// shadow_length_s.
  double shadow_every_s = 60.0;
  double shadow_length_s = 600.0;
  BankTrainOptions bank;

  void validate() const;
};

TrainConfig parse_train(const std::string& json_text, const std::filesystem::path& base_dir = {});
TrainConfig load_train(const std::filesystem::path& path);

/// Rows (theta, E2 = V_nom - V_bar) from stage I shadow chains over nominal
/// data. Thrown when some module has no region with enough rows.
class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HarvestedRow {
  std::size_t run = 0;
  double t_s = 0.0;
  double v_nom = 0.0;  // nominal measurement the target was formed from
  Stage2Row row;
};

std::vector<HarvestedRow> harvest_stage2_rows(const TrainConfig& cfg);
GprBank train_gpr(const TrainConfig& cfg);

}  // namespace ksve
