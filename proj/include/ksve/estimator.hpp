#pragma once

// Self-learning Koopman secure voltage estimator.
//
// A voltage predictor and a parallel error predictor are refitted every
// S - S_tilde samples on the last S_tilde stack columns. Between refits both
// models roll forward one step per sample. In nominal mode the stacks hold
// measurements and measured prediction errors; once engaged in a secure mode
// they only ever receive the estimator's own outputs.

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "ksve/heuristic.hpp"
#include "ksve/koopman.hpp"
#include "ksve/telemetry.hpp"

namespace ksve {

enum class EstimatorMode { nominal, secure_stage1, secure_heuristic, secure_gpr };

EstimatorMode parse_estimator_mode(const std::string& name);
std::string to_string(EstimatorMode mode);

struct Stage2Prediction {
  double mean = 0.0;
  double variance = 0.0;
  bool clamped = false;  // negative posterior variance reset to zero
};

/// Stage II regressor used in secure_gpr mode. theta = [e1_i, v_bar_i, I, SOC],
/// module 0-based, region 1-based.
class Stage2Regressor {
 public:
  virtual ~Stage2Regressor() = default;
  virtual Stage2Prediction predict_e2(int module, int region, const Eigen::Vector4d& theta) const = 0;
};

enum class EntrySource : std::uint8_t { measurement, prediction };

/// Ring buffer of the last `capacity` stack columns: voltage chain, error
/// chain and current, each column tagged with its time and origin.
class FeedbackStacks {
 public:
  FeedbackStacks() = default;
  FeedbackStacks(int modules, int capacity);

  void push(double t_s, const VectorXd& v, const std::optional<VectorXd>& e, double current_a,
            EntrySource source);

  int size() const { return count_; }
  int modules() const { return static_cast<int>(v_.rows()); }
  int capacity() const { return capacity_; }
  bool full() const { return count_ == capacity_; }
  bool errors_complete() const;

  // Oldest to newest.
  MatrixXd values() const;
  MatrixXd errors() const;
  RowVectorXd currents() const;
  double time_at(int i) const { return t_[slot(i)]; }
  EntrySource source_at(int i) const { return src_[slot(i)]; }
  VectorXd value_at(int i) const { return v_.col(slot(i)); }
  VectorXd error_at(int i) const { return e_.col(slot(i)); }

 private:
  int slot(int i) const { return (head_ + i) % capacity_; }

  int capacity_ = 0;
  int head_ = 0;  // oldest
  int count_ = 0;
  MatrixXd v_;
  MatrixXd e_;
  RowVectorXd u_;
  std::vector<double> t_;
  std::vector<EntrySource> src_;
  std::vector<char> e_valid_;
};

struct EstimatorConfig {
  WindowConfig window;
  double rank_tol = 1e-10;
  /// Nominal module (branch) capacity used for Coulomb counting.
  double capacity_ah = 25.0;
  double initial_soc = 0.5;
  /// Rollback distance at engagement: the first secure window starts from the
  /// latest refit at least this many samples before the trigger.
  int handoff_margin = 10;
  /// Refit snapshots kept for rollback.
  int snapshots_kept = 4;
};

struct EstimatorState {
  EstimatorMode mode = EstimatorMode::nominal;
  FeedbackStacks stacks;
  std::optional<KoopmanModel<double>> voltage_model;
  std::optional<KoopmanModel<double>> error_model;
  VectorXd z_v;
  VectorXd z_e;
  SocTracker soc;
  CurrentDirection direction;
  double last_current = 0.0;
  long samples = 0;
  int since_fit = 0;
  long fit_failures = 0;
  long faults = 0;
  /// Time of the first secure sample, if engaged.
  std::optional<double> engaged_at;
};

struct CorrectionOutputs {
  double t_s = 0.0;
  VectorXd v_p;
  VectorXd e1;
  VectorXd e2;
  VectorXd v_bar;
  VectorXd v_hat;
  double soc = 0.0;
  int region = 0;
  int current_sign = 1;
  double delta_ocv = 0.0;
  EstimatorMode mode = EstimatorMode::nominal;
  bool has_prediction = false;
  bool fault = false;
  bool refit = false;
  double e2_variance = 0.0;  // mean over modules, GPR mode only
  int variance_clamps = 0;
};

struct EstimatorContext {
  EstimatorConfig config;
  HeuristicTable table;  // table.ocv_map must be pack-scaled
  const Stage2Regressor* stage2 = nullptr;
};

/// True when the next call to `advance` refits the models.
bool refit_due(const EstimatorState& state, const EstimatorContext& ctx);

EstimatorState initial_estimator_state(const EstimatorContext& ctx, int modules);

/// Processes one sample in place. `measurement` is read only in nominal mode.
CorrectionOutputs advance(EstimatorState& state, const EstimatorContext& ctx, double t_s, double current_a,
                          const VectorXd* measurement);

/// Value form of `advance`.
std::pair<EstimatorState, CorrectionOutputs> step(const EstimatorState& state, const EstimatorContext& ctx,
                                                  double t_s, double current_a, const VectorXd* measurement);

/// Streaming wrapper: keeps refit snapshots and the current log so a
/// detector trigger can hand over to a secure mode from the last clean window.
class SecureEstimator {
 public:
  SecureEstimator(EstimatorContext ctx, int modules);

  CorrectionOutputs step(double t_s, double current_a, const VectorXd* measurement);

  /// Switches to `mode` after the sample just processed was flagged. Restores
  /// the latest refit snapshot taken at least handoff_margin samples before
  /// it, replays the logged currents in `mode` and returns the output for the
  /// flagged sample. Returns nullopt (and stays nominal) if no model exists.
  std::optional<CorrectionOutputs> engage(EstimatorMode mode);

  const EstimatorState& state() const { return state_; }
  const EstimatorContext& context() const { return ctx_; }
  EstimatorMode mode() const { return state_.mode; }
  /// Time of the snapshot the last engagement rolled back to.
  std::optional<double> rollback_time() const { return rollback_t_; }

 private:
  struct Logged {
    double t_s;
    double current_a;
  };
  struct Snapshot {
    long sample;
    double t_s;
    EstimatorState state;
  };

  EstimatorContext ctx_;
  EstimatorState state_;
  std::deque<Snapshot> snapshots_;
  std::deque<Logged> log_;
  std::optional<double> rollback_t_;
};

}  // namespace ksve
