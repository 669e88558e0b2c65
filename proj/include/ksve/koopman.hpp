#pragma once

// Finite Koopman linear model fitted by dynamic mode decomposition with
// control on delay-embedded data:
//
//   z(k+1) = A z(k) + B i(k),   v(k) ~ C z(k)
//
// [A B] = xi_plus * pinv([xi; u]) and C = y * pinv(xi), both pseudo-inverses
// taken through a truncated SVD.

#include <algorithm>
#include <cmath>
#include <complex>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "ksve/telemetry.hpp"
#include "ksve/types.hpp"

namespace ksve {

class KoopmanFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct KoopmanModel {
  Mat<Scalar> A;  // n x n
  Mat<Scalar> B;  // n x 1
  Mat<Scalar> C;  // m x n
  int tau = 0;
  int m = 0;
  struct {
    Scalar state_fro = 0;   // ||xi_plus - [A B][xi; u]||_F / ||xi_plus||_F
    Scalar output_fro = 0;  // ||y - C xi||_F / ||y||_F
  } fit_residuals;
  int svd_rank_used = 0;

  Eigen::Index state_dim() const { return A.rows(); }
};

template <typename Scalar>
struct PseudoInverse {
  Mat<Scalar> matrix;
  int rank = 0;
};

/// Moore-Penrose inverse discarding singular values below rank_tol * sigma_max.
template <typename Scalar>
PseudoInverse<Scalar> pseudo_inverse(const Eigen::Ref<const Mat<Scalar>>& a, Scalar rank_tol) {
  Eigen::JacobiSVD<Mat<Scalar>> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sigma = svd.singularValues();
  PseudoInverse<Scalar> out;
  out.matrix = Mat<Scalar>::Zero(a.cols(), a.rows());
  if (sigma.size() == 0 || !(sigma(0) > Scalar(0))) return out;
  const Scalar cutoff = rank_tol * sigma(0);
  Vec<Scalar> inv = Vec<Scalar>::Zero(sigma.size());
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) > cutoff) {
      inv(i) = Scalar(1) / sigma(i);
      ++out.rank;
    }
  }
  out.matrix = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return out;
}

namespace detail {

template <typename Derived>
typename Derived::Scalar relative_fro(const Eigen::MatrixBase<Derived>& residual,
                                      typename Derived::Scalar reference) {
  using Scalar = typename Derived::Scalar;
  const Scalar r = residual.norm();
  return reference > Scalar(0) ? r / reference : r;
}

}  // namespace detail

/// Output matrix alone, C = y * pinv(xi).
template <typename Scalar>
Mat<Scalar> fit_output_matrix(const Eigen::Ref<const Mat<Scalar>>& xi,
                              const Eigen::Ref<const Mat<Scalar>>& y, Scalar rank_tol) {
  const auto pinv = pseudo_inverse<Scalar>(xi, rank_tol);
  if (pinv.rank == 0) throw KoopmanFitError("embedded data matrix is numerically zero");
  return y * pinv.matrix;
}

template <typename Scalar>
KoopmanModel<Scalar> fit(const EmbeddedBatch<Scalar>& batch, Scalar rank_tol = Scalar(1e-10)) {
  const Eigen::Index n = batch.xi.rows();
  const Eigen::Index nc = batch.xi.cols();
  const Eigen::Index m = batch.y.rows();
  if (batch.xi_plus.rows() != n || batch.xi_plus.cols() != nc || batch.u_row.cols() != nc ||
      batch.y.cols() != nc) {
    throw std::invalid_argument("embedded batch has inconsistent dimensions");
  }
  if (nc < n + 1) {
    throw std::invalid_argument("under-determined fit: " + std::to_string(nc) + " columns for a " +
                                std::to_string(n) + "-dimensional state");
  }
  if (!batch.xi.allFinite() || !batch.xi_plus.allFinite() || !batch.u_row.allFinite() ||
      !batch.y.allFinite()) {
    throw KoopmanFitError("non-finite values in embedded batch");
  }

  Mat<Scalar> stacked(n + 1, nc);
  stacked.topRows(n) = batch.xi;
  stacked.bottomRows(1) = batch.u_row;
  const auto pinv = pseudo_inverse<Scalar>(stacked, rank_tol);
  if (pinv.rank == 0) throw KoopmanFitError("all singular values fall below the rank cutoff");
  const Mat<Scalar> lambda = batch.xi_plus * pinv.matrix;

  KoopmanModel<Scalar> model;
  model.A = lambda.leftCols(n);
  model.B = lambda.rightCols(1);
  model.C = fit_output_matrix<Scalar>(batch.xi, batch.y, rank_tol);
  model.m = static_cast<int>(m);
  model.tau = static_cast<int>((n - m) / (m + 1));
  model.svd_rank_used = pinv.rank;
  model.fit_residuals.state_fro =
      detail::relative_fro(batch.xi_plus - lambda * stacked, batch.xi_plus.norm());
  model.fit_residuals.output_fro = detail::relative_fro(batch.y - model.C * batch.xi, batch.y.norm());
  if (!model.A.allFinite() || !model.B.allFinite() || !model.C.allFinite()) {
    throw KoopmanFitError("fit produced non-finite matrices");
  }
  return model;
}

template <typename Scalar>
struct HorizonPrediction {
  Mat<Scalar> values;  // m x H
  bool finite = true;
};

/// Iterates z <- A z + B i and emits C z after every step.
template <typename Scalar, typename StateT, typename CurrentsT>
HorizonPrediction<Scalar> predict_horizon(const KoopmanModel<Scalar>& model,
                                          const Eigen::MatrixBase<StateT>& z0,
                                          const Eigen::MatrixBase<CurrentsT>& currents) {
  const Eigen::Index h = currents.size();
  if (h < 1) throw std::invalid_argument("prediction horizon must be at least one step");
  if (z0.size() != model.state_dim()) throw std::invalid_argument("initial state has wrong dimension");
  HorizonPrediction<Scalar> out;
  out.values.resize(model.C.rows(), h);
  Vec<Scalar> z = z0;
  for (Eigen::Index k = 0; k < h; ++k) {
    z = model.A * z + model.B.col(0) * static_cast<Scalar>(currents(k));
    out.values.col(k) = model.C * z;
  }
  out.finite = out.values.allFinite();
  return out;
}

/// Eigenvalues of A sorted by magnitude, largest first.
template <typename Scalar>
std::vector<std::complex<Scalar>> spectrum(const KoopmanModel<Scalar>& model) {
  Eigen::EigenSolver<Mat<Scalar>> solver(model.A, false);
  const auto& ev = solver.eigenvalues();
  std::vector<std::complex<Scalar>> out(ev.data(), ev.data() + ev.size());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::abs(a) > std::abs(b);
  });
  return out;
}

template <typename Scalar>
Scalar spectral_radius(const KoopmanModel<Scalar>& model) {
  const auto ev = spectrum(model);
  return ev.empty() ? Scalar(0) : std::abs(ev.front());
}

/// Plain-text dump (JSON) of A, B, C and fit metadata for debugging.
void save_model(const KoopmanModel<double>& model, std::ostream& out);
KoopmanModel<double> load_model(std::istream& in);

}  // namespace ksve
