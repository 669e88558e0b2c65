#include "ksve/estimator.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ksve {

EstimatorMode parse_estimator_mode(const std::string& name) {
  if (name == "nominal") return EstimatorMode::nominal;
  if (name == "stage1" || name == "secure_stage1") return EstimatorMode::secure_stage1;
  if (name == "heuristic" || name == "secure_heuristic") return EstimatorMode::secure_heuristic;
  if (name == "gpr" || name == "secure_gpr") return EstimatorMode::secure_gpr;
  throw std::invalid_argument("unknown estimator mode '" + name + "'");
}

std::string to_string(EstimatorMode mode) {
  switch (mode) {
    case EstimatorMode::nominal: return "nominal";
    case EstimatorMode::secure_stage1: return "stage1";
    case EstimatorMode::secure_heuristic: return "heuristic";
    case EstimatorMode::secure_gpr: return "gpr";
  }
  return "nominal";
}

FeedbackStacks::FeedbackStacks(int modules, int capacity)
    : capacity_(capacity),
      v_(MatrixXd::Zero(modules, capacity)),
      e_(MatrixXd::Zero(modules, capacity)),
      u_(RowVectorXd::Zero(capacity)),
      t_(static_cast<std::size_t>(capacity), 0.0),
      src_(static_cast<std::size_t>(capacity), EntrySource::measurement),
      e_valid_(static_cast<std::size_t>(capacity), 0) {
  if (modules < 1 || capacity < 1) throw std::invalid_argument("stack dimensions must be positive");
}

void FeedbackStacks::push(double t_s, const VectorXd& v, const std::optional<VectorXd>& e, double current_a,
                          EntrySource source) {
  int s;
  if (count_ < capacity_) {
    s = slot(count_);
    ++count_;
  } else {
    s = head_;
    head_ = (head_ + 1) % capacity_;
  }
  v_.col(s) = v;
  if (e) {
    e_.col(s) = *e;
  } else {
    e_.col(s).setZero();
  }
  e_valid_[static_cast<std::size_t>(s)] = e.has_value();
  u_(s) = current_a;
  t_[static_cast<std::size_t>(s)] = t_s;
  src_[static_cast<std::size_t>(s)] = source;
}

bool FeedbackStacks::errors_complete() const {
  if (!full()) return false;
  for (char ok : e_valid_) {
    if (!ok) return false;
  }
  return true;
}

namespace {

template <typename Src>
Src ordered(const Src& ring, int head, int count, int capacity) {
  Src out(ring.rows(), count);
  const int first = std::min(count, capacity - head);
  out.leftCols(first) = ring.middleCols(head, first);
  if (count > first) out.rightCols(count - first) = ring.leftCols(count - first);
  return out;
}

VectorXd nan_vector(int m) { return VectorXd::Constant(m, std::numeric_limits<double>::quiet_NaN()); }

}  // namespace

MatrixXd FeedbackStacks::values() const { return ordered(v_, head_, count_, capacity_); }
MatrixXd FeedbackStacks::errors() const { return ordered(e_, head_, count_, capacity_); }
RowVectorXd FeedbackStacks::currents() const { return ordered(u_, head_, count_, capacity_); }

bool refit_due(const EstimatorState& state, const EstimatorContext& ctx) {
  return state.stacks.full() && (!state.voltage_model || state.since_fit >= ctx.config.window.horizon());
}

EstimatorState initial_estimator_state(const EstimatorContext& ctx, int modules) {
  ctx.config.window.validate();
  ctx.table.validate();
  if (!(ctx.config.capacity_ah > 0.0)) throw std::invalid_argument("estimator.capacity_ah must be positive");
  if (ctx.config.handoff_margin < 0) throw std::invalid_argument("estimator.handoff_margin must be >= 0");
  EstimatorState s;
  s.stacks = FeedbackStacks(modules, ctx.config.window.S_tilde);
  s.soc = SocTracker{ctx.config.initial_soc, ctx.config.capacity_ah, ctx.config.window.dt_s, 0};
  return s;
}

CorrectionOutputs advance(EstimatorState& state, const EstimatorContext& ctx, double t_s, double current_a,
                          const VectorXd* measurement) {
  const int m = state.stacks.modules();
  const int tau = ctx.config.window.tau;
  CorrectionOutputs out;
  out.t_s = t_s;
  out.mode = state.mode;

  // Coulomb counting over the interval that just ended.
  const double prev_soc = state.soc.soc;
  if (state.samples > 0) {
    state.soc = soc_update(state.soc, state.last_current);
    out.current_sign = state.direction.update(state.last_current);
  } else {
    out.current_sign = state.direction.update(current_a);
  }
  out.soc = state.soc.soc;
  out.region = region_of(out.soc, ctx.table);
  const auto& map = ctx.table.ocv_map;
  out.delta_ocv = (state.samples > 0 && !map.soc_grid.empty()) ? map(out.soc) - map(prev_soc) : 0.0;

  if (refit_due(state, ctx)) {
    const RowVectorXd u = state.stacks.currents();
    const auto vb = delay_embed<double>(state.stacks.values(), u, tau);
    try {
      state.voltage_model = fit(vb, ctx.config.rank_tol);
    } catch (const std::exception&) {
      ++state.fit_failures;
    }
    state.z_v = vb.xi_plus.col(vb.xi_plus.cols() - 1);
    if (state.stacks.errors_complete()) {
      const auto eb = delay_embed<double>(state.stacks.errors(), u, tau);
      try {
        state.error_model = fit(eb, ctx.config.rank_tol);
      } catch (const std::exception&) {
        // All-zero error history: no stage I correction this window.
        state.error_model.reset();
      }
      state.z_e = eb.xi_plus.col(eb.xi_plus.cols() - 1);

    }
    state.since_fit = 0;
    out.refit = true;
  }

  out.has_prediction = state.voltage_model.has_value() && state.samples > 0;
  if (out.has_prediction) {
    const auto& vm = *state.voltage_model;
    state.z_v = vm.A * state.z_v + vm.B.col(0) * state.last_current;
    out.v_p = state.z_v.tail(m);
  } else {
    out.v_p = nan_vector(m);
  }
  if (state.error_model && state.samples > 0) {
    const auto& em = *state.error_model;
    state.z_e = em.A * state.z_e + em.B.col(0) * state.last_current;
    out.e1 = state.z_e.tail(m);
  } else {
    out.e1 = VectorXd::Zero(m);
  }
  out.e2 = VectorXd::Zero(m);
  out.v_bar = out.v_p + out.e1;
  out.v_hat = out.v_bar;

  std::optional<VectorXd> push_v;
  std::optional<VectorXd> push_e;
  EntrySource source = EntrySource::prediction;

  switch (state.mode) {
    case EstimatorMode::nominal:
      if (!measurement) throw std::invalid_argument("nominal estimation needs a measurement");
      if (measurement->size() != m) throw std::invalid_argument("measurement has the wrong module count");
      push_v = *measurement;
      if (out.has_prediction) push_e = *measurement - out.v_p;
      source = EntrySource::measurement;
      break;
    case EstimatorMode::secure_stage1:
      push_v = out.v_bar;
      push_e = out.e1;
      break;
    case EstimatorMode::secure_heuristic:
      out.e2 = heuristic_stage2(out.e1, out.soc, out.current_sign, out.delta_ocv, ctx.table);
      out.v_hat = out.v_p + out.e2;
      push_v = out.v_hat;
      push_e = out.e2;
      break;
    case EstimatorMode::secure_gpr: {
      if (!ctx.stage2) throw std::logic_error("GPR mode requires a stage II regressor");
      double var = 0.0;
      for (int i = 0; i < m; ++i) {
        const Eigen::Vector4d theta(out.e1(i), out.v_bar(i), current_a, out.soc);
        const auto p = ctx.stage2->predict_e2(i, out.region, theta);
        out.e2(i) = p.mean;
        var += p.variance;
        out.variance_clamps += p.clamped ? 1 : 0;
      }
      out.e2_variance = var / m;
      out.v_hat = out.v_bar + out.e2;
      push_v = out.v_bar;
      push_e = out.e1;
      break;
    }
  }

  if (state.mode != EstimatorMode::nominal) {
    out.fault = !out.has_prediction || !out.v_hat.allFinite() || !push_e->allFinite();
  } else {
    out.fault = out.has_prediction && !out.v_p.allFinite();
  }
  if (out.fault) {
    ++state.faults;
    if (state.mode != EstimatorMode::nominal) push_v.reset();
    push_e.reset();
  }
  if (push_v) state.stacks.push(t_s, *push_v, push_e, current_a, source);

  state.last_current = current_a;
  ++state.samples;
  ++state.since_fit;
  return out;
}

std::pair<EstimatorState, CorrectionOutputs> step(const EstimatorState& state, const EstimatorContext& ctx,
                                                  double t_s, double current_a, const VectorXd* measurement) {
  EstimatorState next = state;
  CorrectionOutputs out = advance(next, ctx, t_s, current_a, measurement);
  return {std::move(next), std::move(out)};
}

SecureEstimator::SecureEstimator(EstimatorContext ctx, int modules)
    : ctx_(std::move(ctx)), state_(initial_estimator_state(ctx_, modules)) {}

CorrectionOutputs SecureEstimator::step(double t_s, double current_a, const VectorXd* measurement) {
  if (state_.mode == EstimatorMode::nominal && refit_due(state_, ctx_)) {
    snapshots_.push_back({state_.samples, t_s, state_});
    while (static_cast<int>(snapshots_.size()) > std::max(1, ctx_.config.snapshots_kept)) snapshots_.pop_front();
    while (!log_.empty() && log_.size() > static_cast<std::size_t>(state_.samples - snapshots_.front().sample)) {
      log_.pop_front();
    }
  }
  log_.push_back({t_s, current_a});
  return advance(state_, ctx_, t_s, current_a, state_.mode == EstimatorMode::nominal ? measurement : nullptr);
}

std::optional<CorrectionOutputs> SecureEstimator::engage(EstimatorMode mode) {
  if (mode == EstimatorMode::nominal) throw std::invalid_argument("engage needs a secure mode");
  if (state_.mode != EstimatorMode::nominal) throw std::logic_error("estimator is already engaged");
  if (snapshots_.empty() || state_.samples == 0) return std::nullopt;
  const long flagged = state_.samples - 1;
  const Snapshot* chosen = &snapshots_.front();
  for (const auto& s : snapshots_) {
    if (s.sample <= flagged - ctx_.config.handoff_margin) chosen = &s;
  }
  // Log entry i belongs to sample (samples - log.size() + i).
  const long log_first = state_.samples - static_cast<long>(log_.size());
  if (chosen->sample < log_first) throw std::logic_error("current log does not reach the rollback snapshot");

  state_ = chosen->state;
  state_.mode = mode;
  state_.engaged_at = chosen->t_s;
  rollback_t_ = chosen->t_s;
  CorrectionOutputs last;
  for (long k = chosen->sample; k <= flagged; ++k) {
    const auto& entry = log_[static_cast<std::size_t>(k - log_first)];
    last = advance(state_, ctx_, entry.t_s, entry.current_a, nullptr);
  }
  snapshots_.clear();
  return last;
}

}  // namespace ksve
