#pragma once

// Exact Gaussian process regression with a squared-exponential kernel and a
// constant mean, plus the (module, SOC region) bank used for stage II.

#include <algorithm>
#include <cmath>
#include <iosfwd>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>

#include "ksve/estimator.hpp"
#include "ksve/heuristic.hpp"
#include "ksve/types.hpp"

namespace ksve {

class GprFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct GprHyper {
  Scalar beta = 0;
  Scalar sigma_g = 1;
  Scalar length_scale = 1;
  Scalar sigma_eta = Scalar(0.1);

  void validate() const {
    if (!(sigma_g > 0) || !(length_scale > 0) || !(sigma_eta > 0) || !std::isfinite(double(beta))) {
      throw std::invalid_argument("GPR hyperparameters must be finite with positive scales");
    }
  }
};

/// sigma_g^2 exp(-|a - b|^2 / (2 L^2))
template <typename Scalar, typename A, typename B>
Scalar kernel(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const GprHyper<Scalar>& h) {
  if (a.size() != b.size()) throw std::invalid_argument("kernel inputs differ in dimension");
  const Scalar d2 = (a - b).squaredNorm();
  return h.sigma_g * h.sigma_g * std::exp(-d2 / (Scalar(2) * h.length_scale * h.length_scale));
}

/// Pairwise squared distances between the rows of x.
template <typename Scalar>
Mat<Scalar> squared_distances(const Mat<Scalar>& x) {
  const Eigen::Index n = x.rows();
  Mat<Scalar> d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d2(i, i) = 0;
    for (Eigen::Index j = 0; j < i; ++j) d2(i, j) = d2(j, i) = (x.row(i) - x.row(j)).squaredNorm();
  }
  return d2;
}

template <typename Scalar>
struct JitteredCholesky {
  Eigen::LLT<Mat<Scalar>> llt;
  Scalar jitter = 0;
};

/// Factorizes k + jitter I. Jitter starts at 1e-10 trace/N and grows tenfold
/// up to 1e-4 trace/N; a fixed_jitter >= 0 skips the search.
template <typename Scalar>
JitteredCholesky<Scalar> factorize(const Mat<Scalar>& k, Scalar fixed_jitter = Scalar(-1)) {
  const Eigen::Index n = k.rows();
  JitteredCholesky<Scalar> out;
  if (fixed_jitter >= 0) {
    out.jitter = fixed_jitter;
    out.llt.compute(k + fixed_jitter * Mat<Scalar>::Identity(n, n));
    if (out.llt.info() != Eigen::Success) throw GprFitError("kernel matrix is not positive definite");
    return out;
  }
  const Scalar scale = k.trace() / Scalar(n);
  if (!(scale > 0) || !std::isfinite(double(scale))) throw GprFitError("kernel matrix has a non-positive trace");
  for (Scalar rel = Scalar(1e-10); rel <= Scalar(1.0001e-4); rel *= 10) {
    out.jitter = rel * scale;
    out.llt.compute(k + out.jitter * Mat<Scalar>::Identity(n, n));
    if (out.llt.info() == Eigen::Success) return out;
  }
  throw GprFitError("kernel matrix is not positive definite even with jitter 1e-4 trace/N");
}

/// Log marginal likelihood and its gradient with respect to
/// p = [beta, log sigma_g, log L, log sigma_eta].
template <typename Scalar>
struct Likelihood {
  Scalar value = 0;
  Vec<Scalar> gradient;
  Scalar jitter = 0;
};

template <typename Scalar>
Likelihood<Scalar> log_marginal_likelihood(const Mat<Scalar>& d2, const Vec<Scalar>& y, const GprHyper<Scalar>& h,
                                           Scalar fixed_jitter = Scalar(-1)) {
  const Eigen::Index n = y.size();
  const Scalar sg2 = h.sigma_g * h.sigma_g;
  const Scalar l2 = h.length_scale * h.length_scale;
  const Scalar se2 = h.sigma_eta * h.sigma_eta;
  const Mat<Scalar> r = (-d2.array() / (Scalar(2) * l2)).exp().matrix();
  Mat<Scalar> k = sg2 * r;
  k.diagonal().array() += se2;
  const auto chol = factorize<Scalar>(k, fixed_jitter);
  const Vec<Scalar> resid = y.array() - h.beta;
  const Vec<Scalar> alpha = chol.llt.solve(resid);
  const Mat<Scalar> kinv = chol.llt.solve(Mat<Scalar>::Identity(n, n));
  const auto& lmat = chol.llt.matrixL();
  Scalar logdet = 0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += Scalar(2) * std::log(lmat(i, i));

  Likelihood<Scalar> out;
  out.jitter = chol.jitter;
  out.value = Scalar(-0.5) * resid.dot(alpha) - Scalar(0.5) * logdet -
              Scalar(0.5) * Scalar(n) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
  // d/dtheta = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta)
  const Mat<Scalar> w = alpha * alpha.transpose() - kinv;
  out.gradient.resize(4);
  out.gradient(0) = alpha.sum();
  out.gradient(1) = (w.array() * (Scalar(2) * sg2 * r).array()).sum() * Scalar(0.5);
  out.gradient(2) = (w.array() * (sg2 * r.array() * d2.array() / l2)).sum() * Scalar(0.5);
  out.gradient(3) = w.trace() * se2;
  return out;
}

template <typename Scalar>
struct GprFitOptions {
  int max_iters = 200;
  Scalar gradient_tol = Scalar(1e-7);
  /// Box on the log scales, keeps degenerate targets from running off.
  Scalar log_bound = Scalar(25);
};

template <typename Scalar>
struct GprModel {
  GprHyper<Scalar> hyper;
  Mat<Scalar> x;  // N x d, already standardized
  Vec<Scalar> y;
  Scalar jitter = 0;
  Vec<Scalar> alpha;
  Eigen::LLT<Mat<Scalar>> llt;
  // optimizer trace
  std::vector<Scalar> objective_history;
  int iterations = 0;

  Eigen::Index size() const { return y.size(); }
};

template <typename Scalar>
struct GprPrediction {
  Scalar mean = 0;
  Scalar variance = 0;
  bool clamped = false;
};

/// Covariance matrix, factorization and alpha for fixed hyperparameters.
/// fixed_jitter < 0 runs the adaptive jitter search.
template <typename Scalar>
GprModel<Scalar> condition(Mat<Scalar> x, Vec<Scalar> y, const GprHyper<Scalar>& h,
                           Scalar fixed_jitter = Scalar(-1)) {
  h.validate();
  if (x.rows() != y.size()) throw std::invalid_argument("GPR inputs and targets differ in length");
  GprModel<Scalar> m;
  m.hyper = h;
  const Mat<Scalar> d2 = squared_distances<Scalar>(x);
  Mat<Scalar> k = h.sigma_g * h.sigma_g * (-d2.array() / (Scalar(2) * h.length_scale * h.length_scale)).exp().matrix();
  k.diagonal().array() += h.sigma_eta * h.sigma_eta;
  auto chol = factorize<Scalar>(k, fixed_jitter);
  m.jitter = chol.jitter;
  m.llt = std::move(chol.llt);
  m.alpha = m.llt.solve(Vec<Scalar>(y.array() - h.beta));
  m.x = std::move(x);
  m.y = std::move(y);
  return m;
}

template <typename Scalar>
GprPrediction<Scalar> predict(const GprModel<Scalar>& m, const Eigen::Ref<const Vec<Scalar>>& theta) {
  if (theta.size() != m.x.cols()) throw std::invalid_argument("GPR query has the wrong dimension");
  const Eigen::Index n = m.size();
  Vec<Scalar> ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks(i) = kernel<Scalar>(m.x.row(i).transpose(), theta, m.hyper);
  GprPrediction<Scalar> out;
  out.mean = m.hyper.beta + ks.dot(m.alpha);
  const Vec<Scalar> v = m.llt.matrixL().solve(ks);
  out.variance = m.hyper.sigma_g * m.hyper.sigma_g - v.squaredNorm() + m.hyper.sigma_eta * m.hyper.sigma_eta;
  if (out.variance < 0) {
    out.variance = 0;
    out.clamped = true;
  }
  return out;
}

/// Maximizes the log marginal likelihood by BFGS on
/// [beta, log sigma_g, log L, log sigma_eta] with Armijo backtracking.
template <typename Scalar>
GprModel<Scalar> fit_gpr(const Mat<Scalar>& x, const Vec<Scalar>& y, const GprHyper<Scalar>& init,
                         const GprFitOptions<Scalar>& opt = {}) {
  const Eigen::Index n = y.size();
  if (n < 5) throw std::invalid_argument("GPR fit needs at least 5 rows, got " + std::to_string(n));
  if (x.rows() != n) throw std::invalid_argument("GPR inputs and targets differ in length");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("GPR training data must be finite");
  init.validate();

  const Mat<Scalar> d2 = squared_distances<Scalar>(x);
  auto unpack = [](const Vec<Scalar>& p) {
    GprHyper<Scalar> h;
    h.beta = p(0);
    h.sigma_g = std::exp(p(1));
    h.length_scale = std::exp(p(2));
    h.sigma_eta = std::exp(p(3));
    return h;
  };
  auto clip = [&](Vec<Scalar> p) {
    for (int i = 1; i < 4; ++i) p(i) = std::clamp(p(i), -opt.log_bound, opt.log_bound);
    return p;
  };
  // Objective is the negative log likelihood; gradient follows.
  auto evaluate = [&](const Vec<Scalar>& p, Scalar& f, Vec<Scalar>& g) {
    const auto lml = log_marginal_likelihood<Scalar>(d2, y, unpack(p));
    f = -lml.value;
    g = -lml.gradient;
    if (!std::isfinite(double(f)) || !g.allFinite()) {
      std::string dump = "non-finite GPR objective or gradient at [beta, log sg, log L, log se] = [";
      for (int i = 0; i < 4; ++i) dump += (i ? ", " : "") + std::to_string(double(p(i)));
      throw GprFitError(dump + "]");
    }
  };

  Vec<Scalar> p(4);
  p << init.beta, std::log(init.sigma_g), std::log(init.length_scale), std::log(init.sigma_eta);
  p = clip(p);
  Scalar f;
  Vec<Scalar> g;
  evaluate(p, f, g);
  std::vector<Scalar> history{-f};
  Mat<Scalar> hinv = Mat<Scalar>::Identity(4, 4);
  int it = 0;
  for (; it < opt.max_iters; ++it) {
    if (g.template lpNorm<Eigen::Infinity>() < opt.gradient_tol) break;
    Vec<Scalar> dir = -hinv * g;
    if (!(dir.dot(g) < 0)) {
      hinv.setIdentity();
      dir = -g;
    }
    // keep a single step from moving any log scale by more than ~e^3
    const Scalar big = dir.template lpNorm<Eigen::Infinity>();
    Scalar step = big > Scalar(3) ? Scalar(3) / big : Scalar(1);
    Vec<Scalar> pn;
    Scalar fn = 0;
    Vec<Scalar> gn;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, step *= Scalar(0.5)) {
      pn = clip(p + step * dir);
      try {
        evaluate(pn, fn, gn);
      } catch (const GprFitError&) {
        continue;  // factorization trouble in the trial point: shrink
      }
      if (fn <= f + Scalar(1e-4) * g.dot(pn - p)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const Vec<Scalar> s = pn - p;
    const Vec<Scalar> yk = gn - g;
    const Scalar sy = s.dot(yk);
    const Scalar df = f - fn;
    p = pn;
    f = fn;
    g = gn;
    history.push_back(-f);
    if (sy > Scalar(1e-12) * s.norm() * yk.norm()) {
      const Scalar rho = Scalar(1) / sy;
      const Mat<Scalar> i4 = Mat<Scalar>::Identity(4, 4);
      hinv = (i4 - rho * s * yk.transpose()) * hinv * (i4 - rho * yk * s.transpose()) + rho * s * s.transpose();
    }
    if (df <= Scalar(1e-12) * (std::abs(f) + Scalar(1))) break;
  }
  GprModel<Scalar> m = condition<Scalar>(x, y, unpack(p));
  m.objective_history = std::move(history);
  m.iterations = it;
  return m;
}

// ---- region bank (double precision) ----

/// One supervised stage II record: theta = [e1, v_bar, I, SOC] for one module.
struct Stage2Row {
  int module = 0;
  double soc = 0.0;
  Eigen::Vector4d theta = Eigen::Vector4d::Zero();
  double target = 0.0;
};

struct BankModel {
  int module = 0;
  int region = 0;
  Eigen::Vector4d input_mean = Eigen::Vector4d::Zero();
  Eigen::Vector4d input_scale = Eigen::Vector4d::Ones();
  GprModel<double> gp;
};

struct BankTrainOptions {
  std::size_t max_rows = 500;
  std::size_t min_rows = 5;
  unsigned long long seed = 1;
  GprFitOptions<double> fit;
  int threads = 0;  // 0: hardware concurrency
};

class GprBank : public Stage2Regressor {
 public:
  Stage2Prediction predict_e2(int module, int region, const Eigen::Vector4d& theta) const override;

  /// Model serving (module, region) after fallback.
  const BankModel& model_for(int module, int region) const;
  /// Region whose model serves (module, region); differs from region on fallback.
  int source_region(int module, int region) const;
  bool has_module(int module) const;
  std::vector<int> modules() const;
  int regions() const { return regions_; }
  const std::vector<BankModel>& models() const { return models_; }

  std::vector<std::string> scenario_ids;
  std::map<std::pair<int, int>, std::size_t> bucket_rows;  // rows seen per (module, region)

  friend GprBank train_bank(const std::vector<Stage2Row>&, const HeuristicTable&, const BankTrainOptions&);
  friend GprBank load_bank(std::istream&);

 private:
  int regions_ = 0;
  std::vector<BankModel> models_;
  std::map<std::pair<int, int>, std::size_t> lookup_;  // (module, region) -> models_ index
};

GprBank train_bank(const std::vector<Stage2Row>& rows, const HeuristicTable& table,
                   const BankTrainOptions& options = {});

class BankFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_bank(const GprBank& bank, std::ostream& out);
GprBank load_bank(std::istream& in);
void save_bank(const GprBank& bank, const std::string& path);
GprBank load_bank(const std::string& path);

}  // namespace ksve
