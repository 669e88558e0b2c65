#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ksve/types.hpp"

namespace ksve {

/// One sample. Positive current discharges the pack.
struct TelemetryFrame {
  double t_s = 0.0;
  double current_a = 0.0;
  double soc_true = 0.0;
  VectorXd v_true;
  VectorXd v_meas;
};

struct TelemetryStream {
  double dt_s = 1.0;
  std::vector<TelemetryFrame> frames;

  int modules() const { return frames.empty() ? 0 : static_cast<int>(frames.front().v_meas.size()); }
  std::size_t size() const { return frames.size(); }
};

/// Sliding window of S samples split into a learning part of S_tilde samples
/// and a prediction part of S - S_tilde samples.
struct WindowConfig {
  int S = 120;
  int S_tilde = 90;
  int tau = 2;
  double dt_s = 1.0;

  void validate() const;
  int horizon() const { return S - S_tilde; }
  /// Embedded state dimension for m modules: m (tau + 1) + tau.
  int state_dim(int m) const { return m * (tau + 1) + tau; }
};

/// Next learning-window start after one prediction cycle.
inline long advance_window(long cursor, const WindowConfig& cfg) {
  return cursor + cfg.horizon();
}

class WindowTooShort : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
struct EmbeddedBatch {
  Mat<Scalar> xi;
  Mat<Scalar> xi_plus;
  RowVec<Scalar> u_row;
  Mat<Scalar> y;
};

/// Writes D_j = [v(j); i(j); v(j+1); i(j+1); ...; i(j+tau-1); v(j+tau)] built
/// from columns j..j+tau of (values, currents) into `out`.
template <typename Scalar, typename ValuesT, typename CurrentsT, typename OutT>
void embed_column(const Eigen::MatrixBase<ValuesT>& values,
                  const Eigen::MatrixBase<CurrentsT>& currents, Eigen::Index j, int tau,
                  Eigen::MatrixBase<OutT>& out) {
  const Eigen::Index m = values.rows();
  Eigen::Index row = 0;
  for (int d = 0; d <= tau; ++d) {
    out.segment(row, m) = values.col(j + d).template cast<Scalar>();
    row += m;
    if (d < tau) {
      out(row++) = static_cast<Scalar>(currents(j + d));
    }
  }
}

/// Delay-embeds a data stack (m x S_tilde values, 1 x S_tilde currents).
/// xi holds D_{k+1} .. D_{k+S_tilde-tau-1}, xi_plus the same shifted by one,
/// u_row the currents i(k+1+tau) .. i(k+S_tilde-1), y the oldest voltage
/// block of every xi column.
template <typename Scalar>
EmbeddedBatch<Scalar> delay_embed(const Eigen::Ref<const Mat<Scalar>>& zeta,
                                  const Eigen::Ref<const RowVec<Scalar>>& zeta_u, int tau) {
  if (tau < 0) throw std::invalid_argument("tau must be non-negative");
  if (zeta.cols() != zeta_u.cols()) {
    throw std::invalid_argument("value and current stacks differ in length");
  }
  const Eigen::Index m = zeta.rows();
  const Eigen::Index s_tilde = zeta.cols();
  if (s_tilde < tau + 3) {
    throw WindowTooShort("learning window of " + std::to_string(s_tilde) +
                         " samples is too short for tau = " + std::to_string(tau));
  }
  const Eigen::Index n = m * (tau + 1) + tau;
  const Eigen::Index nc = s_tilde - tau - 1;

  EmbeddedBatch<Scalar> batch;
  batch.xi.resize(n, nc);
  batch.xi_plus.resize(n, nc);
  batch.u_row.resize(nc);
  Vec<Scalar> column(n);
  for (Eigen::Index c = 0; c < nc; ++c) {
    embed_column<Scalar>(zeta, zeta_u, c, tau, column);
    batch.xi.col(c) = column;
    embed_column<Scalar>(zeta, zeta_u, c + 1, tau, column);
    batch.xi_plus.col(c) = column;
    batch.u_row(c) = zeta_u(c + tau);
  }
  batch.y = batch.xi.topRows(m);
  return batch;
}

class TelemetryParseError : public std::runtime_error {
 public:
  TelemetryParseError(const std::string& what, long row)
      : std::runtime_error(what), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

/// CSV header `t_s,current_a,soc_true,v_true_1..m,v_meas_1..m`.
void write_stream(const TelemetryStream& stream, const std::filesystem::path& path);
TelemetryStream read_stream(const std::filesystem::path& path);
void write_stream(const TelemetryStream& stream, std::ostream& out);
TelemetryStream read_stream(std::istream& in);

}  // namespace ksve
