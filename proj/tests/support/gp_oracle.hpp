#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "klpc/gp.hpp"

namespace klpc::testing {

inline double gamma_log_pdf(double x, double a, double b) {
  return std::log(std::pow(b, a) / std::tgamma(a) * std::pow(x, a - 1.0) * std::exp(-b * x));
}

inline double beta_log_pdf(double x, double a, double b) {
  return std::log(std::pow(x, a - 1.0) * std::pow(1.0 - x, b - 1.0) / std::beta(a, b));
}

// Log posterior with every process stacked into one dense covariance,
// assembled entry by entry and factored as a whole.
inline double dense_log_posterior(const gp::Hyperparams& h, const Eigen::MatrixXd& w,
                                  const Eigen::MatrixXd& x, const gp::PriorSpec& pr) {
  const Eigen::Index pc = w.rows(), m = w.cols(), n = pc * m;
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < pc; ++i)
    for (Eigen::Index a = 0; a < m; ++a) {
      v[i * m + a] = w(i, a);
      for (Eigen::Index b = 0; b < m; ++b) {
        double r = 1.0 / h.lambda_w[i];
        for (Eigen::Index k = 0; k < x.cols(); ++k) {
          const double d = x(a, k) - x(b, k);
          r *= std::pow(h.rho(i, k), 4.0 * d * d);
        }
        big(i * m + a, i * m + b) = r + (a == b ? 1.0 / h.lambda_delta : 0.0);
      }
    }
  Eigen::LLT<Eigen::MatrixXd> llt(big);
  if (llt.info() != Eigen::Success) throw std::runtime_error("oracle covariance not positive definite");
  const Eigen::VectorXd z = llt.matrixL().solve(v);
  double logdet = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) logdet += 2.0 * std::log(llt.matrixL()(k, k));
  double lp = -0.5 * z.squaredNorm() - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  lp += gamma_log_pdf(h.lambda_delta, pr.a_delta, pr.b_delta);
  for (Eigen::Index i = 0; i < pc; ++i) {
    lp += gamma_log_pdf(h.lambda_w[i], pr.a_w, pr.b_w);
    for (Eigen::Index k = 0; k < x.cols(); ++k) lp += beta_log_pdf(h.rho(i, k), pr.a_rho, pr.b_rho);
  }
  return lp;
}

}  // namespace klpc::testing
