#include <doctest.h>

#include <sstream>

#include "ksve/telemetry.hpp"

using namespace ksve;

namespace {

TelemetryStream toy(int m, int n) {
  TelemetryStream s;
  for (int k = 0; k < n; ++k) {
    TelemetryFrame f;
    f.t_s = k;
    f.current_a = 0.1 * k - 1.0 / 3.0;
    f.soc_true = 0.5 + 1e-4 * k;
    f.v_true = VectorXd::LinSpaced(m, 200.0 + k / 7.0, 201.0 + k / 7.0);
    f.v_meas = f.v_true.array() + 0.123456789;
    s.frames.push_back(f);
  }
  return s;
}

std::string to_csv(const TelemetryStream& s) {
  std::ostringstream out;
  write_stream(s, out);
  return out.str();
}

}  // namespace

TEST_CASE("window arithmetic") {
  WindowConfig cfg;
  CHECK(advance_window(0, cfg) == 30);
  CHECK(advance_window(advance_window(17, cfg), cfg) == 17 + 60);
  WindowConfig sliding{91, 90, 2, 1.0};
  CHECK(advance_window(5, sliding) == 6);
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS(WindowConfig{90, 90, 2, 1.0}.validate());
  CHECK_THROWS(WindowConfig{120, 4, 2, 1.0}.validate());
}

TEST_CASE("zero delay embedding is the raw row") {
  MatrixXd z(1, 6);
  z << 1, 2, 3, 4, 5, 6;
  RowVectorXd u = RowVectorXd::Zero(6);
  const auto b = delay_embed<double>(z, u, 0);
  REQUIRE(b.xi.rows() == 1);
  REQUIRE(b.xi.cols() == 5);
  for (int c = 0; c < 5; ++c) {
    CHECK(b.xi(0, c) == c + 1);
    CHECK(b.xi_plus(0, c) == c + 2);
  }
}

TEST_CASE("embedding indices for m=2, tau=1, S_tilde=6") {
  // Stack columns are samples k+1 .. k+6; voltages 10j, 10j+1 and current 100+j.
  MatrixXd z(2, 6);
  RowVectorXd u(6);
  for (int j = 0; j < 6; ++j) {
    z(0, j) = 10 * (j + 1);
    z(1, j) = 10 * (j + 1) + 1;
    u(j) = 100 + j + 1;
  }
  const auto b = delay_embed<double>(z, u, 1);
  REQUIRE(b.xi.rows() == 5);
  REQUIRE(b.xi.cols() == 4);
  VectorXd expect(5);
  expect << 10, 11, 101, 20, 21;  // [V(k+1); I(k+1); V(k+2)]
  CHECK(b.xi.col(0) == expect);
  for (int j = 0; j + 1 < 4; ++j) CHECK(b.xi_plus.col(j) == b.xi.col(j + 1));
  CHECK(b.xi_plus(3, 3) == 60);  // reaches the last stack column
  for (int j = 0; j < 4; ++j) {
    CHECK(b.u_row(j) == 100 + j + 2);  // I(k+1+tau+j)
    CHECK(b.y.col(j) == b.xi.col(j).head(2));
  }
  CHECK_THROWS_AS(delay_embed<double>(z.leftCols(3), u.leftCols(3), 1), WindowTooShort);
}

TEST_CASE("voltages are recoverable from the embedding") {
  const auto s = toy(3, 40);
  MatrixXd z(3, 40);
  RowVectorXd u(40);
  for (int k = 0; k < 40; ++k) {
    z.col(k) = s.frames[k].v_meas;
    u(k) = s.frames[k].current_a;
  }
  const int tau = 3;
  const auto b = delay_embed<double>(z, u, tau);
  for (int c = 0; c < b.xi.cols(); ++c) {
    for (int d = 0; d <= tau; ++d) CHECK(b.xi.col(c).segment(d * 4, 3) == z.col(c + d));
  }
}

TEST_CASE("CSV round trip") {
  const auto s = toy(4, 25);
  std::istringstream in(to_csv(s));
  const auto r = read_stream(in);
  REQUIRE(r.size() == s.size());
  CHECK(r.modules() == 4);
  CHECK(r.dt_s == 1.0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    CHECK(r.frames[k].t_s == s.frames[k].t_s);
    CHECK(r.frames[k].current_a == s.frames[k].current_a);
    CHECK((r.frames[k].v_meas - s.frames[k].v_meas).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((r.frames[k].v_true - s.frames[k].v_true).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("CSV errors") {
  const std::string good = to_csv(toy(2, 5));
  SUBCASE("missing column is named") {
    std::string bad = good;
    bad.replace(bad.find("v_meas_2"), 8, "v_mess_2");
    std::istringstream in(bad);
    try {
      read_stream(in);
      FAIL("expected an error");
    } catch (const TelemetryParseError& e) {
      CHECK(std::string(e.what()).find("v_meas_2") != std::string::npos);
    }
  }
  SUBCASE("non-uniform dt cites the first offending row") {
    auto s = toy(2, 6);
    s.frames[3].t_s = 3.5;
    s.frames[4].t_s = 4.5;
    s.frames[5].t_s = 5.5;
    std::istringstream in(to_csv(s));
    try {
      read_stream(in);
      FAIL("expected an error");
    } catch (const TelemetryParseError& e) {
      CHECK(e.row() == 5);  // header is row 1, frame 3 is row 5
    }
  }
  SUBCASE("NaN is rejected with its row") {
    std::string bad = good;
    const auto line3 = bad.find('\n', bad.find('\n', bad.find('\n') + 1) + 1) + 1;
    const auto first = bad.find(',', line3) + 1;
    bad.replace(first, bad.find(',', first) - first, "nan");
    std::istringstream in(bad);
    try {
      read_stream(in);
      FAIL("expected an error");
    } catch (const TelemetryParseError& e) {
      CHECK(e.row() == 4);
    }
  }
  SUBCASE("decreasing timestamps") {
    auto s = toy(2, 4);
    s.frames[2].t_s = 0.5;
    std::istringstream in(to_csv(s));
    CHECK_THROWS_AS(read_stream(in), TelemetryParseError);
  }
}
