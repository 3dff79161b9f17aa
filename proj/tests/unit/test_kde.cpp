#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "klpc/error.hpp"
#include "klpc/kde.hpp"
#include "klpc/random.hpp"
#include "klpc/stats.hpp"

using namespace klpc;

namespace {

Eigen::MatrixXd normal_samples(std::size_t m, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(m, d);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = rng.normal();
  return x;
}

// Correlated 3-D cloud with unequal scales.
Eigen::MatrixXd correlated_samples(std::size_t m, std::uint64_t seed) {
  Eigen::MatrixXd z = normal_samples(m, 3, seed);
  Eigen::Matrix3d a;
  a << 3.0, 0.0, 0.0, 1.0, 0.8, 0.0, -0.5, 0.4, 0.2;
  return z * a.transpose();
}

// Dependent but not nearly degenerate: each conditional keeps most of its
// marginal spread, so kernel smoothing in the conditioning dimensions does
// not dominate the conditional law.
Eigen::MatrixXd mildly_correlated_samples(std::size_t m, std::uint64_t seed) {
  Eigen::MatrixXd z = normal_samples(m, 3, seed);
  Eigen::Matrix3d a;
  a << 1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.3, -0.3, 1.0;
  return z * a.transpose();
}

// Conditional CDF written straight from the kernel sums.
double cdf_oracle(const Eigen::MatrixXd& s, const Eigen::VectorXd& h, std::size_t n, double v,
                  const Eigen::VectorXd& given) {
  double num = 0.0, den = 0.0;
  for (Eigen::Index m = 0; m < s.rows(); ++m) {
    double w = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double z = (given[k] - s(m, k)) / h[k];
      w *= std::exp(-0.5 * z * z) / h[k];
    }
    den += w;
    num += w * 0.5 * std::erfc(-(v - s(m, n)) / h[n] / std::sqrt(2.0));
  }
  return num / den;
}

}  // namespace

TEST_CASE("Silverman bandwidth") {
  const Eigen::MatrixXd two = (Eigen::MatrixXd(2, 1) << 0.0, 1.0).finished();
  CHECK(KdeModel::fit(two).bandwidth()[0] > 0.0);

  const auto x = normal_samples(10000, 1, 1);
  const auto kde = KdeModel::fit(x);
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / (x.rows() - 1));
  const double expected = sd * std::pow(4.0 / (3.0 * 10000.0), 0.2);
  CHECK(std::abs(kde.bandwidth()[0] - expected) < 1e-12);
  // The d = 1 factor (4/3)^(1/5) is the familiar 1.06.
  CHECK(std::pow(4.0 / 3.0, 0.2) == doctest::Approx(1.06).epsilon(1e-3));
}

TEST_CASE("constant dimension is degenerate") {
  Eigen::MatrixXd x = normal_samples(50, 3, 2);
  x.col(1).setConstant(4.0);
  try {
    (void)KdeModel::fit(x);
    FAIL("expected DegenerateDimensionError");
  } catch (const DegenerateDimensionError& e) {
    CHECK(e.dimension() == 1);
  }
  CHECK_THROWS_AS(KdeModel::fit(Eigen::MatrixXd::Zero(1, 1)), InputError);
}

TEST_CASE("single-kernel density and CDF") {
  const KdeModel one(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Ones(1));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  CHECK(one.pdf(zero) == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(one.conditional_cdf(0, 0.0, Eigen::VectorXd()) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(one.inverse_rosenblatt(Eigen::VectorXd::Constant(1, 0.5))[0]) < 1e-8);
  CHECK(one.pdf(Eigen::VectorXd::Constant(1, 25.0)) < 1e-30);
}

TEST_CASE("symmetric construction gives an even density") {
  const KdeModel k(Eigen::MatrixXd((Eigen::MatrixXd(2, 1) << -1.0, 1.0).finished()),
                   Eigen::VectorXd::Ones(1));
  for (double x : {0.1, 0.7, 1.3, 2.9})
    CHECK(k.pdf(Eigen::VectorXd::Constant(1, x)) ==
          doctest::Approx(k.pdf(Eigen::VectorXd::Constant(1, -x))).epsilon(1e-15));
}

TEST_CASE("density integrates to one") {
  const auto x1 = normal_samples(200, 1, 3);
  const auto k1 = KdeModel::fit(x1);
  {
    const double h = k1.bandwidth()[0];
    const double lo = x1.minCoeff() - 8 * h, hi = x1.maxCoeff() + 8 * h;
    const int n = 4000;
    const double w = (hi - lo) / n;
    double sum = 0.0;
    for (int k = 0; k < n; ++k) sum += k1.pdf(Eigen::VectorXd::Constant(1, lo + (k + 0.5) * w)) * w;
    CHECK(std::abs(sum - 1.0) < 1e-3);
  }
  const auto x2 = normal_samples(100, 2, 4);
  const auto k2 = KdeModel::fit(x2);
  {
    const Eigen::VectorXd h = k2.bandwidth();
    const Eigen::VectorXd lo = x2.colwise().minCoeff().transpose() - 8 * h;
    const Eigen::VectorXd hi = x2.colwise().maxCoeff().transpose() + 8 * h;
    const int n = 300;
    const Eigen::VectorXd w = (hi - lo) / n;
    double sum = 0.0;
    Eigen::VectorXd p(2);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        p << lo[0] + (a + 0.5) * w[0], lo[1] + (b + 0.5) * w[1];
        sum += k2.pdf(p);
      }
    CHECK(std::abs(sum * w[0] * w[1] - 1.0) < 1e-3);
  }
}

TEST_CASE("conditional CDF matches the kernel-sum oracle") {
  const auto x = correlated_samples(300, 5);
  const auto kde = KdeModel::fit(x);
  Rng rng(6);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = rng.below(3);
    Eigen::VectorXd given(n);
    for (std::size_t k = 0; k < n; ++k) given[k] = x(rng.below(300), k) + 0.3 * rng.normal();
    const double v = x(rng.below(300), n) + rng.normal();
    worst = std::max(worst, std::abs(kde.conditional_cdf(n, v, given) -
                                     cdf_oracle(x, kde.bandwidth(), n, v, given)));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("conditional CDF: monotone, bounded, differentiable") {
  const auto x = correlated_samples(300, 7);
  const auto kde = KdeModel::fit(x);
  Rng rng(8);
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = rng.below(3);
    Eigen::VectorXd given(n);
    for (std::size_t k = 0; k < n; ++k) given[k] = x(rng.below(300), k);
    double a = 4 * rng.normal(), b = 4 * rng.normal();
    if (a > b) std::swap(a, b);
    const double fa = kde.conditional_cdf(n, a, given), fb = kde.conditional_cdf(n, b, given);
    if (fa > fb + 1e-12 || fa < 0.0 || fb > 1.0) ++violations;
  }
  CHECK(violations == 0);

  const Eigen::VectorXd given = x.row(0).head(2).transpose();
  CHECK(kde.conditional_cdf(2, -1e3, given) < 1e-12);
  CHECK(kde.conditional_cdf(2, 1e3, given) > 1.0 - 1e-12);

  // Finite difference against the ratio of joint prefix densities.
  for (double v : {-1.0, 0.0, 0.4}) {
    const double eps = 1e-5;
    const double fd = (kde.conditional_cdf(2, v + eps, given) - kde.conditional_cdf(2, v - eps, given)) /
                      (2 * eps);
    Eigen::VectorXd full(3);
    full << given, v;
    const double ratio = kde.marginal_pdf(full) / kde.marginal_pdf(given);
    CHECK(std::abs(fd - ratio) < 1e-4);
    CHECK(kde.conditional_pdf(2, v, given) == doctest::Approx(ratio).epsilon(1e-10));
  }
}

TEST_CASE("first coordinate uses the plain marginal") {
  const auto x = correlated_samples(100, 9);
  const auto kde = KdeModel::fit(x);
  const auto marg = kde.marginal(std::vector<std::size_t>{0});
  for (double v : {-4.0, 0.0, 2.5})
    CHECK(kde.conditional_cdf(0, v, Eigen::VectorXd()) ==
          doctest::Approx(marg.conditional_cdf(0, v, Eigen::VectorXd())).epsilon(1e-14));
}

TEST_CASE("median maps to one half in one dimension") {
  const Eigen::MatrixXd x = (Eigen::MatrixXd(3, 1) << -1.0, 0.0, 1.0).finished();
  const KdeModel k(x, Eigen::VectorXd::Constant(1, 0.5));
  CHECK(k.rosenblatt(Eigen::VectorXd::Zero(1))[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("Rosenblatt of the training samples is near uniform") {
  const auto x = mildly_correlated_samples(2000, 10);
  const auto kde = KdeModel::fit(x);
  std::vector<std::vector<double>> u(3, std::vector<double>(2000));
  for (Eigen::Index m = 0; m < x.rows(); ++m) {
    const Eigen::VectorXd r = kde.rosenblatt(x.row(m).transpose());
    for (int k = 0; k < 3; ++k) u[k][m] = r[k];
  }
  for (auto& col : u) {
    std::sort(col.begin(), col.end());
    double d = 0.0;
    for (std::size_t k = 0; k < col.size(); ++k) {
      const double n = static_cast<double>(col.size());
      d = std::max({d, (k + 1) / n - col[k], col[k] - k / n});
    }
    CAPTURE(d);
    CHECK(d < 0.05);
  }
}

TEST_CASE("inverse Rosenblatt round trip and monotonicity") {
  const auto x = correlated_samples(500, 11);
  const auto kde = KdeModel::fit(x);
  Rng rng(12);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd u(3);
    for (int k = 0; k < 3; ++k) u[k] = 0.001 + 0.998 * rng.uniform();
    worst = std::max(worst, (kde.rosenblatt(kde.inverse_rosenblatt(u)) - u).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-6);

  Eigen::VectorXd a(3), b(3);
  a << 0.3, 0.6, 0.2;
  b << 0.31, 0.6, 0.2;
  CHECK(kde.inverse_rosenblatt(a)[0] < kde.inverse_rosenblatt(b)[0]);
}

TEST_CASE("boundary and far-from-support errors") {
  const auto x = correlated_samples(100, 13);
  const auto kde = KdeModel::fit(x);
  Eigen::VectorXd u(3);
  u << 0.5, 1e-13, 0.5;
  CHECK_THROWS_AS(kde.inverse_rosenblatt(u), BoundaryError);
  u << 0.5, 0.5, 1.0 - 1e-14;
  CHECK_THROWS_AS(kde.inverse_rosenblatt(u), BoundaryError);

  Eigen::VectorXd far(1);
  far << 1e4;
  CHECK_THROWS_AS(kde.conditional_cdf(1, 0.0, far), FarFromSupportError);
}

TEST_CASE("sampling") {
  const auto x = normal_samples(1000, 2, 14);
  const auto kde = KdeModel::fit(x);
  Rng rng(15);
  const Eigen::MatrixXd draws = kde.sample(10000, rng);
  const Eigen::VectorXd mean = draws.colwise().mean();
  const Eigen::MatrixXd c = draws.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = c.transpose() * c / 10000.0;
  // The KDE mean is the training mean, itself within noise of 0.
  for (int k = 0; k < 2; ++k) CHECK(std::abs(mean[k]) < 5 * std::sqrt(cov(k, k) / 10000.0 + 1.0 / 1000.0));
  CHECK(std::abs(cov(0, 1) / std::sqrt(cov(0, 0) * cov(1, 1))) < 0.05);

  Rng again(15);
  CHECK((kde.sample(10000, again) - draws).norm() == 0.0);
}

TEST_CASE("draws pass a KS test against the KDE marginal") {
  Rng src(16);
  Eigen::MatrixXd x(400, 2);
  for (Eigen::Index m = 0; m < 400; ++m) {
    x(m, 0) = src.normal();
    x(m, 1) = -std::log(src.uniform());
  }
  const auto kde = KdeModel::fit(x);
  Rng rng(17);
  const Eigen::MatrixXd draws = kde.sample(2000, rng);
  // 1 % critical value for n = 2000.
  const double crit = 1.628 / std::sqrt(2000.0);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto marg = kde.marginal(std::vector<std::size_t>{k});
    std::vector<double> col(draws.col(k).data(), draws.col(k).data() + 2000);
    std::sort(col.begin(), col.end());
    double d = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i) {
      const double f = marg.conditional_cdf(0, col[i], Eigen::VectorXd());
      d = std::max({d, (i + 1) / 2000.0 - f, f - i / 2000.0});
    }
    CHECK(d < crit);
  }
}
