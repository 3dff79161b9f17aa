#include <doctest.h>

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "klpc/error.hpp"
#include "klpc/kl.hpp"
#include "klpc/random.hpp"

using namespace klpc;

namespace {

Eigen::MatrixXd cloud(std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd z(m, 4);
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    for (Eigen::Index c = 0; c < 4; ++c) z(r, c) = rng.normal();
  Eigen::Matrix4d a;
  a << 5, 0, 0, 0, 1, 3, 0, 0, -2, 0.5, 1.5, 0, 0.3, -0.2, 0.1, 0.2;
  Eigen::RowVector4d shift(2.0, 10.0, 6.0, 30.0);
  return (z * a.transpose()).rowwise() + shift;
}

// Covariance by explicit double loop over samples.
Eigen::MatrixXd covariance_oracle(const Eigen::MatrixXd& x) {
  const auto m = x.rows(), d = x.cols();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (Eigen::Index r = 0; r < m; ++r) mean += x.row(r).transpose();
  mean /= static_cast<double>(m);
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) k(a, b) += (x(r, a) - mean[a]) * (x(r, b) - mean[b]);
  return k / static_cast<double>(m);
}

}  // namespace

TEST_CASE("eigenpairs match the explicit covariance") {
  const auto x = cloud(500, 1);
  const auto kl = compute_kl(x, TruncationRule::fixed(4));
  const Eigen::MatrixXd k = covariance_oracle(x);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
  for (int n = 0; n < 4; ++n) {
    CHECK(kl.eigenvalues()[n] == doctest::Approx(es.eigenvalues()[3 - n]).epsilon(1e-10));
    const Eigen::VectorXd f = kl.eigenvectors().col(n);
    CHECK((k * f - kl.eigenvalues()[n] * f).norm() < 1e-9 * kl.eigenvalues()[0]);
  }
  const Eigen::MatrixXd g = kl.eigenvectors().transpose() * kl.eigenvectors();
  CHECK((g - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
  for (int n = 0; n < 3; ++n) CHECK(kl.eigenvalues()[n] >= kl.eigenvalues()[n + 1]);
}

TEST_CASE("whitened samples have unit eigenvalues") {
  Eigen::MatrixXd x = cloud(300, 2).leftCols(2);
  x = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd k = x.transpose() * x / 300.0;
  const Eigen::MatrixXd l = k.llt().matrixL();
  const Eigen::MatrixXd w = (l.triangularView<Eigen::Lower>().solve(x.transpose())).transpose();
  const auto kl = compute_kl(w, TruncationRule::fixed(2));
  CHECK(kl.eigenvalues()[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(kl.eigenvalues()[1] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("collinear samples keep one mode") {
  Eigen::MatrixXd x(50, 2);
  for (int r = 0; r < 50; ++r) {
    const double t = r - 24.5;
    x(r, 0) = 1.0 + 2.0 * t;
    x(r, 1) = -3.0 + t;
  }
  const auto kl = compute_kl(x);
  CHECK(kl.truncation() == 1);
  CHECK(std::abs(kl.eigenvalues()[1]) < 1e-10 * kl.eigenvalues()[0]);
}

TEST_CASE("projection and reconstruction") {
  const auto x = cloud(400, 3);
  const auto full = compute_kl(x, TruncationRule::fixed(4));
  CHECK(full.project(full.mean()).isZero(1e-14));
  const Eigen::VectorXd e1 = full.project(full.mean() + full.eigenvectors().col(0));
  CHECK(std::abs(e1[0] - 1.0) < 1e-12);
  CHECK(e1.tail(3).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((full.reconstruct(Eigen::VectorXd::Zero(4)) - full.mean()).norm() == 0.0);

  double worst = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::VectorXd v = x.row(r).transpose();
    worst = std::max(worst, (full.reconstruct(full.project(v)) - v).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-10);

  const auto cut = full.truncated(2);
  double mean_sq = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::VectorXd v = x.row(r).transpose();
    const Eigen::VectorXd c = v - full.mean();
    Eigen::VectorXd residual = Eigen::VectorXd::Zero(4);
    for (int n = 2; n < 4; ++n)
      residual += c.dot(full.eigenvectors().col(n)) * full.eigenvectors().col(n);
    const double err = (cut.reconstruct(cut.project(v)) - v).norm();
    CHECK(err == doctest::Approx(residual.norm()).epsilon(1e-9));
    mean_sq += err * err;
  }
  mean_sq /= static_cast<double>(x.rows());
  const double tail = full.eigenvalues()[2] + full.eigenvalues()[3];
  CHECK(std::abs(mean_sq - tail) < 1e-8 * tail);
}

TEST_CASE("projected coefficients are centered and uncorrelated") {
  const auto x = cloud(1000, 4);
  const auto kl = compute_kl(x, TruncationRule::fixed(4));
  const Eigen::MatrixXd xi = kl.project_rows(x);
  CHECK(xi.colwise().mean().cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::MatrixXd c = xi.transpose() * xi / 1000.0;
  const double l1 = kl.eigenvalues()[0];
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      if (a == b)
        CHECK(std::abs(c(a, a) - kl.eigenvalues()[a]) < 1e-8 * l1);
      else
        CHECK(std::abs(c(a, b)) < 1e-8 * l1);
    }
}

TEST_CASE("sign convention and determinism") {
  const auto x = cloud(200, 5);
  const auto a = compute_kl(x);
  const auto b = compute_kl(x);
  CHECK((a.eigenvectors() - b.eigenvectors()).norm() == 0.0);
  for (int n = 0; n < 4; ++n) {
    const Eigen::VectorXd f = a.eigenvectors().col(n);
    Eigen::Index at = 0;
    f.cwiseAbs().maxCoeff(&at);
    CHECK(f[at] > 0.0);
  }
  // Negating the data leaves the basis unchanged.
  const auto neg = compute_kl(-x);
  CHECK((neg.eigenvectors() - a.eigenvectors()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("truncation rules") {
  const Eigen::Vector4d l(50.0, 30.0, 19.5, 0.5);
  CHECK(truncation_order(l, TruncationRule::energy_fraction(0.99)) == 3);
  CHECK(truncation_order(l, TruncationRule::energy_fraction(0.8)) == 2);
  CHECK(truncation_order(l, TruncationRule::energy_fraction(1.0)) == 4);
  CHECK(truncation_order(l, TruncationRule::fixed(2)) == 2);
  CHECK_THROWS_AS(truncation_order(l, TruncationRule::fixed(5)), InputError);
}

TEST_CASE("input errors") {
  CHECK_THROWS_AS(compute_kl(Eigen::MatrixXd::Ones(1, 3)), InputError);
  Eigen::MatrixXd x = cloud(10, 6);
  x(3, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(compute_kl(x), InputError);
  const auto kl = compute_kl(cloud(10, 7), TruncationRule::fixed(2));
  CHECK_THROWS_AS(kl.reconstruct(Eigen::VectorXd::Zero(3)), InputError);
}
