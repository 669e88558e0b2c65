#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ksve/gpr.hpp"

using namespace ksve;

namespace {

GprHyper<double> hyper(double beta, double sg, double l, double se) { return {beta, sg, l, se}; }

MatrixXd random_inputs(int n, int d, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = u(rng);
  return x;
}

// Posterior by explicit dense inverse, no Cholesky involved.
std::pair<double, double> dense_posterior(const MatrixXd& x, const VectorXd& y, const GprHyper<double>& h,
                                          double jitter, const VectorXd& q) {
  const auto n = x.rows();
  MatrixXd k(n, n);
  VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d2 = (x.row(i) - x.row(j)).squaredNorm();
      k(i, j) = h.sigma_g * h.sigma_g * std::exp(-d2 / (2 * h.length_scale * h.length_scale));
    }
    const double d2 = (x.row(i).transpose() - q).squaredNorm();
    ks(i) = h.sigma_g * h.sigma_g * std::exp(-d2 / (2 * h.length_scale * h.length_scale));
  }
  k.diagonal().array() += h.sigma_eta * h.sigma_eta + jitter;
  const MatrixXd kinv = k.fullPivLu().inverse();
  const double mean = h.beta + ks.dot(kinv * (y.array() - h.beta).matrix());
  const double var = h.sigma_g * h.sigma_g - ks.dot(kinv * ks) + h.sigma_eta * h.sigma_eta;
  return {mean, var};
}

HeuristicTable table() { return HeuristicTable::standard(); }

std::vector<Stage2Row> rows_between(double soc_lo, double soc_hi, int per_module, int modules, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Stage2Row> rows;
  for (int m = 0; m < modules; ++m) {
    for (int i = 0; i < per_module; ++i) {
      Stage2Row r;
      r.module = m;
      r.soc = soc_lo + (soc_hi - soc_lo) * (i + 0.5) / per_module;
      r.theta << 0.01 * u(rng), 200.0 + 20.0 * r.soc, 25.0, r.soc;
      r.target = 0.05 * std::sin(10 * r.soc) + 0.002 * m + 0.001 * u(rng);
      rows.push_back(r);
    }
  }
  return rows;
}

}  // namespace

TEST_CASE("kernel values") {
  const auto h = hyper(0, 1.7, 0.6, 0.1);
  Eigen::Vector4d a(0.1, 0.2, 0.3, 0.4);
  CHECK(kernel<double>(a, a, h) == doctest::Approx(1.7 * 1.7));
  Eigen::Vector4d b = a;
  b(2) += 0.6 * std::sqrt(2.0);
  CHECK(kernel<double>(a, b, h) == doctest::Approx(1.7 * 1.7 * std::exp(-1.0)));
  Eigen::Vector4d c(-1.0, 0.5, 2.0, 0.0);
  CHECK(kernel<double>(a, c, h) == kernel<double>(c, a, h));
}

TEST_CASE("likelihood gradient matches central differences") {
  const MatrixXd x = random_inputs(20, 4, 5);
  std::mt19937 rng(9);
  std::normal_distribution<double> nd(0.0, 1.0);
  VectorXd y(20);
  for (int i = 0; i < 20; ++i) y(i) = std::sin(2 * x(i, 0)) + 0.3 * x(i, 2) + 0.05 * nd(rng);
  const MatrixXd d2 = squared_distances<double>(x);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::Vector4d p(0.3 * u(rng), 0.5 * u(rng), 0.5 * u(rng), -2.0 + 0.5 * u(rng));
    auto at = [&](const Eigen::Vector4d& q) {
      return log_marginal_likelihood<double>(d2, y, hyper(q(0), std::exp(q(1)), std::exp(q(2)), std::exp(q(3))), 0.0);
    };
    const auto l = at(p);
    for (int i = 0; i < 4; ++i) {
      const double h = 1e-5;
      Eigen::Vector4d up = p, dn = p;
      up(i) += h;
      dn(i) -= h;
      const double fd = (at(up).value - at(dn).value) / (2 * h);
      CAPTURE(trial);
      CAPTURE(i);
      CHECK(std::abs(l.gradient(i) - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("posterior agrees with a dense-inverse oracle for small N") {
  for (int n = 1; n <= 8; ++n) {
    const MatrixXd x = random_inputs(n, 4, 100 + n);
    VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = x(i, 0) - 0.5 * x(i, 3) * x(i, 1);
    const auto h = hyper(0.1, 0.8, 0.7, 0.05);
    const auto m = condition<double>(x, y, h);
    const MatrixXd q = random_inputs(6, 4, 200 + n);
    for (int r = 0; r < q.rows(); ++r) {
      const VectorXd qr = q.row(r).transpose();
      const auto p = predict<double>(m, qr);
      const auto [mean, var] = dense_posterior(x, y, h, m.jitter, qr);
      CHECK(std::abs(p.mean - mean) <= 1e-10);
      CHECK(std::abs(p.variance - var) <= 1e-10);
    }
  }
}

TEST_CASE("noisy sine regression") {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::normal_distribution<double> noise(0.0, 0.01);
  const int n = 60;
  MatrixXd x(n, 1);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    y(i) = std::sin(3 * x(i, 0)) + noise(rng);
  }
  const auto m = fit_gpr<double>(x, y, hyper(0.0, 1.0, 1.0, 0.1));
  double se = 0;
  const int held = 200;
  for (int i = 0; i < held; ++i) {
    VectorXd q(1);
    q(0) = -1.9 + 3.8 * i / (held - 1);
    const double e = predict<double>(m, q).mean - std::sin(3 * q(0));
    se += e * e;
  }
  const double rmse = std::sqrt(se / held);
  MESSAGE("held-out RMSE " << rmse << ", sigma_eta " << m.hyper.sigma_eta);
  CHECK(rmse < 0.03);
  CHECK(m.hyper.sigma_eta == doctest::Approx(0.01).epsilon(0.5));
}

TEST_CASE("accepted iterates never lower the likelihood") {
  const MatrixXd x = random_inputs(40, 2, 77);
  VectorXd y(40);
  for (int i = 0; i < 40; ++i) y(i) = std::cos(3 * x(i, 0)) * x(i, 1);
  const auto m = fit_gpr<double>(x, y, hyper(1.0, 0.2, 3.0, 0.5));
  REQUIRE(m.objective_history.size() >= 2);
  for (std::size_t i = 1; i < m.objective_history.size(); ++i) {
    CHECK(m.objective_history[i] >= m.objective_history[i - 1]);
  }
}

TEST_CASE("constant targets") {
  const MatrixXd x = random_inputs(12, 4, 3);
  const VectorXd y = VectorXd::Constant(12, 0.37);
  const auto m = fit_gpr<double>(x, y, hyper(0.0, 0.1, 1.0, 0.01));
  CHECK(std::abs(m.hyper.beta - 0.37) < 1e-6);
  const MatrixXd q = random_inputs(20, 4, 4);
  for (int r = 0; r < q.rows(); ++r) CHECK(std::abs(predict<double>(m, q.row(r).transpose()).mean - 0.37) < 1e-6);
}

TEST_CASE("posterior limits") {
  MatrixXd x(3, 1);
  x << -1.0, 0.0, 1.0;
  VectorXd y(3);
  y << 0.5, -0.2, 0.5;

  SUBCASE("interpolates with vanishing noise") {
    const auto m = condition<double>(x, y, hyper(0.0, 1.0, 0.7, 1e-6));
    for (int i = 0; i < 3; ++i) CHECK(predict<double>(m, x.row(i).transpose()).mean == doctest::Approx(y(i)).epsilon(1e-6));
  }
  SUBCASE("reverts to the prior far away") {
    const auto h = hyper(0.3, 1.2, 0.5, 0.1);
    const auto m = condition<double>(x, y, h);
    VectorXd q(1);
    q(0) = 50.0;
    const auto p = predict<double>(m, q);
    CHECK(p.mean == doctest::Approx(0.3));
    CHECK(p.variance == doctest::Approx(1.2 * 1.2 + 0.1 * 0.1));
  }
  SUBCASE("midpoint of two symmetric points") {
    MatrixXd x2(2, 1);
    x2 << -0.5, 0.5;
    VectorXd y2(2);
    y2 << 0.8, 0.8;
    const auto m = condition<double>(x2, y2, hyper(0.1, 1.0, 0.6, 0.05));
    VectorXd q(1);
    q(0) = 0.0;
    // closed form: beta + 2 k0 (0.8 - beta) / (s^2 + se^2 + k1)
    const double k0 = std::exp(-0.25 / (2 * 0.36));
    const double k1 = std::exp(-1.0 / (2 * 0.36));
    const double expect = 0.1 + 2 * k0 * 0.7 / (1.0 + 0.0025 + m.jitter + k1);
    CHECK(predict<double>(m, q).mean == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("variance never exceeds the prior") {
    const auto h = hyper(0.0, 0.9, 0.4, 0.2);
    const auto m = condition<double>(x, y, h);
    for (int i = 0; i <= 100; ++i) {
      VectorXd q(1);
      q(0) = -3.0 + 6.0 * i / 100;
      const auto p = predict<double>(m, q);
      CHECK(p.variance >= 0.0);
      CHECK(p.variance <= 0.81 + 0.04 + 1e-12);
    }
  }
}

TEST_CASE("fit rejects bad input") {
  CHECK_THROWS_AS(fit_gpr<double>(random_inputs(4, 2, 1), VectorXd::Zero(4), hyper(0, 1, 1, 0.1)),
                  std::invalid_argument);
  VectorXd y = VectorXd::Zero(6);
  y(2) = std::nan("");
  CHECK_THROWS_AS(fit_gpr<double>(random_inputs(6, 2, 1), y, hyper(0, 1, 1, 0.1)), std::invalid_argument);
  CHECK_THROWS_AS(condition<double>(random_inputs(6, 2, 1), VectorXd::Zero(6), hyper(0, -1, 1, 0.1)),
                  std::invalid_argument);
}

TEST_CASE("jitter grows only as needed") {
  // duplicated inputs with almost no noise are singular without jitter
  MatrixXd x(6, 1);
  x << 0, 0, 0, 1, 1, 1;
  const auto m = condition<double>(x, VectorXd::Ones(6), hyper(0.0, 1.0, 1.0, 1e-12));
  CHECK(m.jitter > 0.0);
  CHECK(m.jitter <= 1e-4 * (1.0 + 1e-24) + 1e-18);
  const auto easy = condition<double>(x, VectorXd::Ones(6), hyper(0.0, 1.0, 1.0, 0.5));
  CHECK(easy.jitter == doctest::Approx(1e-10 * 1.25));
}

TEST_CASE("bank buckets by module and region with fallback") {
  const auto rows = rows_between(0.40, 0.66, 120, 2, 8);
  BankTrainOptions opt;
  opt.threads = 2;
  const auto bank = train_bank(rows, table(), opt);
  CHECK(bank.regions() == 14);
  CHECK(bank.models().size() == 10);  // regions 5..9 for two modules
  for (int m = 0; m < 2; ++m) {
    for (int r = 1; r <= 14; ++r) {
      const int src = bank.source_region(m, r);
      CHECK(src == std::clamp(r, 5, 9));
    }
  }
  CHECK_THROWS_AS(bank.model_for(2, 5), std::out_of_range);
  // a prediction on a training input sits close to its target
  const auto& r0 = rows[10];
  const auto p = bank.predict_e2(r0.module, region_of(r0.soc, table()), r0.theta);
  CHECK(std::abs(p.mean - r0.target) < 0.01);
}

TEST_CASE("sparse buckets fall back") {
  auto rows = rows_between(0.40, 0.45, 30, 1, 1);  // region 5
  auto few = rows_between(0.60, 0.61, 3, 1, 2);     // 3 rows in region 9
  rows.insert(rows.end(), few.begin(), few.end());
  const auto bank = train_bank(rows, table());
  CHECK(bank.models().size() == 1);
  CHECK(bank.source_region(0, 9) == 5);
  CHECK(bank.bucket_rows.at({0, 9}) == 3);
}

TEST_CASE("bucket subsampling and standardization") {
  const auto rows = rows_between(0.46, 0.50, 900, 1, 4);  // all in region 6
  const auto bank = train_bank(rows, table());
  const auto& bm = bank.model_for(0, 6);
  CHECK(bm.gp.size() == 500);
  const VectorXd mean = bm.gp.x.colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-9);
  // constant current column keeps unit scale
  CHECK(bm.input_scale(2) == 1.0);
  // inverse transform recovers a training input
  const Eigen::Vector4d back = bm.gp.x.row(0).transpose().cwiseProduct(bm.input_scale) + bm.input_mean;
  bool found = false;
  for (const auto& r : rows) found = found || (r.theta - back).cwiseAbs().maxCoeff() < 1e-9;
  CHECK(found);
}

TEST_CASE("training is deterministic") {
  const auto rows = rows_between(0.2, 0.7, 80, 2, 6);
  BankTrainOptions a, b;
  a.threads = 1;
  b.threads = 4;
  std::ostringstream sa, sb;
  save_bank(train_bank(rows, table(), a), sa);
  save_bank(train_bank(rows, table(), b), sb);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("bank persistence") {
  auto bank = train_bank(rows_between(0.40, 0.66, 60, 2, 12), table());
  bank.scenario_ids = {"train-charge", "train-discharge"};
  std::stringstream ss;
  save_bank(bank, ss);
  const std::string text = ss.str();

  SUBCASE("round trip") {
    std::istringstream in(text);
    const auto back = load_bank(in);
    CHECK(back.scenario_ids == bank.scenario_ids);
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
      const Eigen::Vector4d th(0.01 * u(rng), 205 + 10 * u(rng), 25.0, u(rng));
      for (int m = 0; m < 2; ++m) {
        const int r = 1 + i % 14;
        const auto p = bank.predict_e2(m, r, th);
        const auto q = back.predict_e2(m, r, th);
        CHECK(std::abs(p.mean - q.mean) <= 1e-12);
        CHECK(std::abs(p.variance - q.variance) <= 1e-12);
      }
    }
  }
  SUBCASE("missing region entry") {
    auto j = nlohmann::json::parse(text);
    auto& lookup = j["lookup"];
    lookup.erase(lookup.begin() + 3);
    std::istringstream in(j.dump());
    try {
      load_bank(in);
      FAIL("expected a load error");
    } catch (const BankFormatError& e) {
      CHECK(std::string(e.what()).find("region 4") != std::string::npos);
    }
  }
  SUBCASE("version field absent") {
    auto j = nlohmann::json::parse(text);
    j.erase("version");
    std::istringstream in(j.dump());
    try {
      load_bank(in);
      FAIL("expected a load error");
    } catch (const BankFormatError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
  SUBCASE("truncated file reports the byte offset") {
    std::istringstream in(text.substr(0, 1000));
    try {
      load_bank(in);
      FAIL("expected a load error");
    } catch (const BankFormatError& e) {
      // the parser stops at the end of the 1000 bytes it was given
      CHECK(std::string(e.what()).find("at byte 1001:") != std::string::npos);
    }
  }
  SUBCASE("corrupted array names the field") {
    auto j = nlohmann::json::parse(text);
    j["models"][1]["y"].erase(0);
    std::istringstream in(j.dump());
    try {
      load_bank(in);
      FAIL("expected a load error");
    } catch (const BankFormatError& e) {
      CHECK(std::string(e.what()).find("models[1].y") != std::string::npos);
    }
  }
}

TEST_CASE("empty training set") { CHECK_THROWS_AS(train_bank({}, table()), std::invalid_argument); }
