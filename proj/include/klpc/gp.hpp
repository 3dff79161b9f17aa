#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "klpc/random.hpp"

namespace klpc::gp {

// Affine map of each input coordinate onto [0, 1] using design min/max.
// A coordinate with zero spread maps to 0.
struct InputScaling {
  Eigen::VectorXd lo;
  Eigen::VectorXd span;

  static InputScaling from_design(const Eigen::MatrixXd& design);  // m x p
  Eigen::MatrixXd apply(const Eigen::MatrixXd& theta) const;       // rows are points
  Eigen::MatrixXd invert(const Eigen::MatrixXd& scaled) const;
};

// Coefficient data: values is (rows x m); column j holds the coefficients
// at design point j.
struct Standardized {
  Eigen::MatrixXd values;
  Eigen::VectorXd center;  // per-row mean over design points
  double scale = 1.0;      // one standard deviation over all centered entries
};

Standardized standardize(const Eigen::MatrixXd& values);
Eigen::MatrixXd destandardize(const Eigen::MatrixXd& standardized, const Eigen::VectorXd& center,
                              double scale);

struct SvdBasis {
  Eigen::MatrixXd basis;    // rows x p_c, orthonormal columns k_i
  Eigen::MatrixXd weights;  // p_c x m
  Eigen::VectorXd singular_values;  // all of them
  std::size_t components() const { return static_cast<std::size_t>(basis.cols()); }
};

SvdBasis svd_truncate(const Eigen::MatrixXd& standardized, double energy = 0.99);

struct Hyperparams {
  double lambda_delta = 1.0;
  Eigen::VectorXd lambda_w;  // p_c
  Eigen::MatrixXd rho;       // p_c x p

  std::size_t components() const { return static_cast<std::size_t>(lambda_w.size()); }
  std::size_t inputs() const { return static_cast<std::size_t>(rho.cols()); }
  bool valid() const;
};

struct PriorSpec {
  double a_w = 5.0, b_w = 5.0;
  double a_rho = 1.0, b_rho = 0.1;
  double a_delta = 1.0, b_delta = 1e-4;

  void validate() const;
};

// R(theta, theta') = (1/lambda) prod_k rho_k^(4 (theta_k - theta'_k)^2).
double covariance(const Eigen::Ref<const Eigen::VectorXd>& theta,
                  const Eigen::Ref<const Eigen::VectorXd>& theta_prime, double lambda_w,
                  const Eigen::Ref<const Eigen::VectorXd>& rho);
// Matrix of R over row points of a and b.
Eigen::MatrixXd covariance_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                  double lambda_w, const Eigen::Ref<const Eigen::VectorXd>& rho);

// Gaussian log-likelihood of the stacked weights (p_c x m) under the
// block-diagonal covariance Sigma_w + I/lambda_delta. design is m x p scaled.
double log_likelihood(const Hyperparams& hyper, const Eigen::MatrixXd& weights,
                      const Eigen::MatrixXd& design);
double log_prior(const Hyperparams& hyper, const PriorSpec& priors);
// -inf outside the support. An empty weight matrix contributes nothing.
double log_posterior(const Hyperparams& hyper, const Eigen::MatrixXd& weights,
                     const Eigen::MatrixXd& design, const PriorSpec& priors);

struct McmcConfig {
  std::size_t iterations = 5000;
  std::size_t burn_in = 1000;
  double step_log_lambda = 0.2;
  double step_logit_rho = 0.2;
  std::uint64_t seed = 0;
};

struct McmcResult {
  std::vector<Hyperparams> chain;  // post burn-in
  std::vector<double> log_post;
  Hyperparams map;                 // best state visited over the whole run
  double map_log_post = 0.0;
  std::vector<std::string> coordinate_names;
  std::vector<double> acceptance;  // per coordinate, whole run
};

// Univariate random-walk Metropolis over log lambda and logit rho.
McmcResult run_mcmc(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& design,
                    const PriorSpec& priors, const McmcConfig& config, const Hyperparams& start);
Hyperparams default_start(const Eigen::MatrixXd& weights, std::size_t inputs);

// iter,log_post,lambda_delta,lambda_w_1..,rho_1_1..
void write_chain_csv(std::ostream& out, const McmcResult& result);

// Blocks follow process index: mean[i*s + j] is w_i at prediction point j.
struct Predictive {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t points = 0;
};

Predictive predict(const Hyperparams& hyper, const Eigen::MatrixXd& weights,
                   const Eigen::MatrixXd& design, const Eigen::MatrixXd& theta_star);

// Symmetric square root of a predictive covariance, negative eigenvalues
// clipped. Zero covariance gives a zero root.
Eigen::MatrixXd covariance_root(const Eigen::MatrixXd& cov);

// Destandardized coefficients for one weight realization: (rows x s).
Eigen::MatrixXd coefficients_from_weights(const Eigen::VectorXd& w_star, std::size_t points,
                                          const SvdBasis& basis, const Eigen::VectorXd& center,
                                          double scale);

// count draws c~(theta*; eta), each (rows x s).
std::vector<Eigen::MatrixXd> draw_coefficients(const Predictive& pred, const SvdBasis& basis,
                                               const Eigen::VectorXd& center, double scale,
                                               std::size_t count, Rng& rng);

struct GpSettings {
  double energy = 0.99;
  PriorSpec priors;
  McmcConfig mcmc;
};

// Trained state for one coefficient data set.
struct GpModel {
  InputScaling scaling;
  Eigen::MatrixXd design_scaled;  // m x p
  Eigen::VectorXd center;
  double scale = 1.0;
  SvdBasis basis;
  Hyperparams hyper;

  std::size_t rows() const { return static_cast<std::size_t>(basis.basis.rows()); }
  Predictive predict(const Eigen::MatrixXd& theta_star, const Hyperparams& h) const;
  Predictive predict(const Eigen::MatrixXd& theta_star) const { return predict(theta_star, hyper); }
};

struct GpFit {
  GpModel model;
  McmcResult mcmc;
};

// values: rows x m, design: m x p (unscaled).
GpFit fit(const Eigen::MatrixXd& values, const Eigen::MatrixXd& design, const GpSettings& settings);

}  // namespace klpc::gp
