#include "klpc/gp.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include "klpc/csv.hpp"
#include "klpc/error.hpp"

namespace klpc::gp {

namespace {
constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double log_gamma_density(double x, double a, double b) {
  return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(x) - b * x;
}

double log_beta_density(double x, double a, double b) {
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) +
         (b - 1.0) * std::log1p(-x);
}

// Cholesky of a kernel matrix with escalating diagonal jitter.
Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& s) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) return llt;
  for (double jitter = 1e-10; jitter <= 1e-6 * (1.0 + 1e-9); jitter *= 10.0) {
    Eigen::MatrixXd j = s;
    j.diagonal().array() += jitter;
    llt.compute(j);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalError("covariance matrix not positive definite after jitter 1e-6 (size " +
                       std::to_string(s.rows()) + ", min diagonal " +
                       csv::format_double(s.diagonal().minCoeff()) + ")");
}

double block_log_likelihood(const Hyperparams& h, std::size_t i, const Eigen::MatrixXd& weights,
                            const Eigen::MatrixXd& design) {
  const auto ii = static_cast<Eigen::Index>(i);
  Eigen::MatrixXd s = covariance_matrix(design, design, h.lambda_w[ii], h.rho.row(ii).transpose());
  s.diagonal().array() += 1.0 / h.lambda_delta;
  const auto llt = factor(s);
  const Eigen::VectorXd w = weights.row(ii).transpose();
  const Eigen::VectorXd alpha = llt.matrixL().solve(w);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const auto m = static_cast<double>(w.size());
  return -0.5 * (alpha.squaredNorm() + logdet + m * std::log(2.0 * std::numbers::pi));
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

InputScaling InputScaling::from_design(const Eigen::MatrixXd& design) {
  if (design.rows() < 1 || design.cols() < 1) throw InputError("empty design");
  InputScaling s;
  s.lo = design.colwise().minCoeff().transpose();
  s.span = design.colwise().maxCoeff().transpose() - s.lo;
  return s;
}

Eigen::MatrixXd InputScaling::apply(const Eigen::MatrixXd& theta) const {
  if (theta.cols() != lo.size()) throw InputError("input scaling: dimension mismatch");
  Eigen::MatrixXd out(theta.rows(), theta.cols());
  for (Eigen::Index k = 0; k < theta.cols(); ++k)
    if (span[k] > 0.0)
      out.col(k) = ((theta.col(k).array() - lo[k]) / span[k]).matrix();
    else
      out.col(k).setZero();
  return out;
}

Eigen::MatrixXd InputScaling::invert(const Eigen::MatrixXd& scaled) const {
  if (scaled.cols() != lo.size()) throw InputError("input scaling: dimension mismatch");
  Eigen::MatrixXd out(scaled.rows(), scaled.cols());
  for (Eigen::Index k = 0; k < scaled.cols(); ++k)
    out.col(k) = (scaled.col(k).array() * span[k] + lo[k]).matrix();
  return out;
}

Standardized standardize(const Eigen::MatrixXd& values) {
  if (values.size() == 0) throw InputError("standardize: empty data");
  if (!values.allFinite()) throw InputError("standardize: non-finite coefficient");
  Standardized out;
  out.center = values.rowwise().mean();
  Eigen::MatrixXd centered = values.colwise() - out.center;
  out.scale = std::sqrt(centered.squaredNorm() / static_cast<double>(centered.size()));
  if (!(out.scale > 0.0)) throw DegenerateError("standardize: all coefficients identical across design points");
  out.values = centered / out.scale;
  return out;
}

Eigen::MatrixXd destandardize(const Eigen::MatrixXd& standardized, const Eigen::VectorXd& center,
                              double scale) {
  if (standardized.rows() != center.size()) throw InputError("destandardize: dimension mismatch");
  return (standardized * scale).colwise() + center;
}

SvdBasis svd_truncate(const Eigen::MatrixXd& standardized, double energy) {
  if (!(energy > 0.0 && energy <= 1.0)) throw InputError("SVD energy must lie in (0, 1]");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(standardized, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double total = sv.squaredNorm();
  std::size_t pc = 1;
  if (total > 0.0) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      acc += sv[i] * sv[i];
      pc = static_cast<std::size_t>(i) + 1;
      if (acc >= energy * total * (1.0 - 1e-12)) break;
    }
  }
  const auto p = static_cast<Eigen::Index>(pc);
  SvdBasis out;
  out.singular_values = sv;
  out.basis = svd.matrixU().leftCols(p);
  Eigen::MatrixXd v = svd.matrixV().leftCols(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    Eigen::Index arg = 0;
    out.basis.col(i).cwiseAbs().maxCoeff(&arg);
    if (out.basis(arg, i) < 0.0) {
      out.basis.col(i) *= -1.0;
      v.col(i) *= -1.0;
    }
  }
  out.weights = sv.head(p).asDiagonal() * v.transpose();
  return out;
}

bool Hyperparams::valid() const {
  if (!(lambda_delta > 0.0) || !std::isfinite(lambda_delta)) return false;
  if (rho.rows() != lambda_w.size()) return false;
  for (Eigen::Index i = 0; i < lambda_w.size(); ++i)
    if (!(lambda_w[i] > 0.0) || !std::isfinite(lambda_w[i])) return false;
  for (Eigen::Index i = 0; i < rho.size(); ++i)
    if (!(rho.data()[i] > 0.0 && rho.data()[i] < 1.0)) return false;
  return true;
}

void PriorSpec::validate() const {
  for (double v : {a_w, b_w, a_rho, b_rho, a_delta, b_delta})
    if (!(v > 0.0) || !std::isfinite(v)) throw InputError("prior shape/rate parameters must be positive");
}

double covariance(const Eigen::Ref<const Eigen::VectorXd>& theta,
                  const Eigen::Ref<const Eigen::VectorXd>& theta_prime, double lambda_w,
                  const Eigen::Ref<const Eigen::VectorXd>& rho) {
  if (theta.size() != theta_prime.size() || theta.size() != rho.size())
    throw InputError("covariance: dimension mismatch");
  double log_r = 0.0;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const double d = theta[k] - theta_prime[k];
    if (d != 0.0) log_r += 4.0 * d * d * std::log(rho[k]);
  }
  return std::exp(log_r) / lambda_w;
}

Eigen::MatrixXd covariance_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                  double lambda_w, const Eigen::Ref<const Eigen::VectorXd>& rho) {
  Eigen::MatrixXd out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      out(i, j) = covariance(a.row(i).transpose(), b.row(j).transpose(), lambda_w, rho);
  return out;
}

double log_likelihood(const Hyperparams& hyper, const Eigen::MatrixXd& weights,
                      const Eigen::MatrixXd& design) {
  if (weights.size() == 0) return 0.0;
  if (weights.rows() != hyper.lambda_w.size() || weights.cols() != design.rows() ||
      design.cols() != hyper.rho.cols())
    throw InputError("log_likelihood: dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < hyper.components(); ++i)
    total += block_log_likelihood(hyper, i, weights, design);
  return total;
}

double log_prior(const Hyperparams& hyper, const PriorSpec& priors) {
  if (!hyper.valid()) return neg_inf;
  double lp = log_gamma_density(hyper.lambda_delta, priors.a_delta, priors.b_delta);
  for (Eigen::Index i = 0; i < hyper.lambda_w.size(); ++i)
    lp += log_gamma_density(hyper.lambda_w[i], priors.a_w, priors.b_w);
  for (Eigen::Index i = 0; i < hyper.rho.size(); ++i)
    lp += log_beta_density(hyper.rho.data()[i], priors.a_rho, priors.b_rho);
  return lp;
}

double log_posterior(const Hyperparams& hyper, const Eigen::MatrixXd& weights,
                     const Eigen::MatrixXd& design, const PriorSpec& priors) {
  const double lp = log_prior(hyper, priors);
  if (lp == neg_inf || std::isnan(lp)) return neg_inf;
  return lp + log_likelihood(hyper, weights, design);
}

Hyperparams default_start(const Eigen::MatrixXd& weights, std::size_t inputs) {
  Hyperparams h;
  const auto pc = weights.rows();
  h.lambda_w.resize(pc);
  double min_var = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < pc; ++i) {
    const double var = weights.cols() > 0 ? weights.row(i).squaredNorm() / static_cast<double>(weights.cols()) : 1.0;
    h.lambda_w[i] = var > 0.0 ? 1.0 / var : 1.0;
    min_var = std::min(min_var, var > 0.0 ? var : 1.0);
  }
  h.lambda_delta = pc > 0 ? 10.0 / min_var : 1.0;
  h.rho = Eigen::MatrixXd::Constant(pc, static_cast<Eigen::Index>(inputs), 0.5);
  return h;
}

McmcResult run_mcmc(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& design,
                    const PriorSpec& priors, const McmcConfig& config, const Hyperparams& start) {
  priors.validate();
  if (config.iterations <= config.burn_in) throw InputError("MCMC iterations must exceed burn-in");
  if (!(config.step_log_lambda > 0.0) || !(config.step_logit_rho > 0.0))
    throw InputError("MCMC step sizes must be positive");
  if (!start.valid()) throw InputError("MCMC start point outside the hyperparameter support");
  const std::size_t pc = start.components(), p = start.inputs();
  if (static_cast<std::size_t>(weights.rows()) != pc || weights.cols() != design.rows() ||
      static_cast<std::size_t>(design.cols()) != p)
    throw InputError("MCMC: dimension mismatch between weights, design and hyperparameters");

  McmcResult result;
  result.coordinate_names.push_back("lambda_delta");
  for (std::size_t i = 0; i < pc; ++i) result.coordinate_names.push_back("lambda_w_" + std::to_string(i + 1));
  for (std::size_t i = 0; i < pc; ++i)
    for (std::size_t k = 0; k < p; ++k)
      result.coordinate_names.push_back("rho_" + std::to_string(i + 1) + "_" + std::to_string(k + 1));
  const std::size_t coords = result.coordinate_names.size();
  std::vector<std::size_t> accepted(coords, 0);

  Rng rng(config.seed);
  Hyperparams cur = start;
  std::vector<double> block(pc);
  for (std::size_t i = 0; i < pc; ++i) block[i] = block_log_likelihood(cur, i, weights, design);
  auto sum = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  };
  // Target on the transformed scale includes the Jacobian of the map back
  // to (lambda, rho).
  auto jacobian = [&](const Hyperparams& h) {
    double j = std::log(h.lambda_delta);
    for (Eigen::Index i = 0; i < h.lambda_w.size(); ++i) j += std::log(h.lambda_w[i]);
    for (Eigen::Index i = 0; i < h.rho.size(); ++i) {
      const double r = h.rho.data()[i];
      j += std::log(r) + std::log1p(-r);
    }
    return j;
  };
  double cur_prior = log_prior(cur, priors);
  double cur_post = cur_prior + sum(block);
  double cur_target = cur_post + jacobian(cur);
  result.map = cur;
  result.map_log_post = cur_post;

  std::vector<double> trial_block;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t c = 0; c < coords; ++c) {
      Hyperparams prop = cur;
      trial_block = block;
      if (c == 0) {
        prop.lambda_delta = std::exp(std::log(cur.lambda_delta) + config.step_log_lambda * rng.normal());
      } else if (c <= pc) {
        const auto i = static_cast<Eigen::Index>(c - 1);
        prop.lambda_w[i] = std::exp(std::log(cur.lambda_w[i]) + config.step_log_lambda * rng.normal());
      } else {
        const std::size_t flat = c - 1 - pc;
        const auto i = static_cast<Eigen::Index>(flat / p), k = static_cast<Eigen::Index>(flat % p);
        const double r = cur.rho(i, k);
        prop.rho(i, k) = logistic(std::log(r) - std::log1p(-r) + config.step_logit_rho * rng.normal());
      }
      const double log_u = std::log(rng.uniform());
      const double prop_prior = log_prior(prop, priors);
      if (prop_prior == neg_inf || std::isnan(prop_prior)) continue;
      if (c == 0) {
        for (std::size_t i = 0; i < pc; ++i) trial_block[i] = block_log_likelihood(prop, i, weights, design);
      } else {
        const std::size_t i = c <= pc ? c - 1 : (c - 1 - pc) / p;
        trial_block[i] = block_log_likelihood(prop, i, weights, design);
      }
      const double prop_post = prop_prior + sum(trial_block);
      const double prop_target = prop_post + jacobian(prop);
      if (std::isfinite(prop_target) && log_u < prop_target - cur_target) {
        cur = std::move(prop);
        block.swap(trial_block);
        cur_post = prop_post;
        cur_target = prop_target;
        ++accepted[c];
        if (cur_post > result.map_log_post) {
          result.map = cur;
          result.map_log_post = cur_post;
        }
      }
    }
    if (it >= config.burn_in) {
      result.chain.push_back(cur);
      result.log_post.push_back(cur_post);
    }
  }
  result.acceptance.resize(coords);
  for (std::size_t c = 0; c < coords; ++c)
    result.acceptance[c] = static_cast<double>(accepted[c]) / static_cast<double>(config.iterations);
  return result;
}

void write_chain_csv(std::ostream& out, const McmcResult& result) {
  std::vector<std::string> header{"iter", "log_post"};
  header.insert(header.end(), result.coordinate_names.begin(), result.coordinate_names.end());
  csv::Writer w(out, header);
  for (std::size_t t = 0; t < result.chain.size(); ++t) {
    const auto& h = result.chain[t];
    w << t << result.log_post[t] << h.lambda_delta;
    for (Eigen::Index i = 0; i < h.lambda_w.size(); ++i) w << h.lambda_w[i];
    for (Eigen::Index i = 0; i < h.rho.rows(); ++i)
      for (Eigen::Index k = 0; k < h.rho.cols(); ++k) w << h.rho(i, k);
    w.end_row();
  }
}

Predictive predict(const Hyperparams& hyper, const Eigen::MatrixXd& weights,
                   const Eigen::MatrixXd& design, const Eigen::MatrixXd& theta_star) {
  const auto pc = static_cast<Eigen::Index>(hyper.components());
  const Eigen::Index s = theta_star.rows();
  Predictive out;
  out.points = static_cast<std::size_t>(s);
  out.mean = Eigen::VectorXd::Zero(pc * s);
  out.cov = Eigen::MatrixXd::Zero(pc * s, pc * s);
  if (s == 0) return out;
  if (weights.rows() != pc || weights.cols() != design.rows() || theta_star.cols() != design.cols() ||
      design.cols() != hyper.rho.cols())
    throw InputError("predict: dimension mismatch");
  const double noise = 1.0 / hyper.lambda_delta;
  for (Eigen::Index i = 0; i < pc; ++i) {
    const Eigen::VectorXd rho = hyper.rho.row(i).transpose();
    Eigen::MatrixXd sw = covariance_matrix(design, design, hyper.lambda_w[i], rho);
    sw.diagonal().array() += noise;
    const Eigen::MatrixXd cross = covariance_matrix(theta_star, design, hyper.lambda_w[i], rho);
    Eigen::MatrixXd prior = covariance_matrix(theta_star, theta_star, hyper.lambda_w[i], rho);
    prior.diagonal().array() += noise;
    const auto llt = factor(sw);
    out.mean.segment(i * s, s) = cross * llt.solve(weights.row(i).transpose());
    const Eigen::MatrixXd half = llt.matrixL().solve(cross.transpose());
    Eigen::MatrixXd omega = prior - half.transpose() * half;
    out.cov.block(i * s, i * s, s, s) = 0.5 * (omega + omega.transpose());
  }
  return out;
}

Eigen::MatrixXd covariance_root(const Eigen::MatrixXd& cov) {
  if (cov.size() == 0) return cov;
  if (cov.isZero(0.0)) return Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("predictive covariance eigendecomposition failed");
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

Eigen::MatrixXd coefficients_from_weights(const Eigen::VectorXd& w_star, std::size_t points,
                                          const SvdBasis& basis, const Eigen::VectorXd& center,
                                          double scale) {
  const auto s = static_cast<Eigen::Index>(points);
  const Eigen::Index pc = basis.basis.cols();
  if (w_star.size() != pc * s) throw InputError("weight vector size mismatch");
  Eigen::MatrixXd w(pc, s);
  for (Eigen::Index i = 0; i < pc; ++i) w.row(i) = w_star.segment(i * s, s).transpose();
  return destandardize(basis.basis * w, center, scale);
}

std::vector<Eigen::MatrixXd> draw_coefficients(const Predictive& pred, const SvdBasis& basis,
                                               const Eigen::VectorXd& center, double scale,
                                               std::size_t count, Rng& rng) {
  const Eigen::MatrixXd root = covariance_root(pred.cov);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(count);
  Eigen::VectorXd z(pred.mean.size());
  for (std::size_t c = 0; c < count; ++c) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    const Eigen::VectorXd w = pred.mean + root * z;
    out.push_back(coefficients_from_weights(w, pred.points, basis, center, scale));
  }
  return out;
}

Predictive GpModel::predict(const Eigen::MatrixXd& theta_star, const Hyperparams& h) const {
  return gp::predict(h, basis.weights, design_scaled, scaling.apply(theta_star));
}

GpFit fit(const Eigen::MatrixXd& values, const Eigen::MatrixXd& design, const GpSettings& settings) {
  if (values.cols() != design.rows()) throw InputError("GP data: column count must equal design points");
  if (design.rows() < 2) throw InputError("GP needs at least 2 design points");
  for (Eigen::Index a = 0; a < design.rows(); ++a)
    for (Eigen::Index b = a + 1; b < design.rows(); ++b)
      if (design.row(a) == design.row(b))
        spdlog::warn("GP design points {} and {} coincide", a, b);
  GpFit out;
  auto& model = out.model;
  model.scaling = InputScaling::from_design(design);
  model.design_scaled = model.scaling.apply(design);
  const Standardized st = standardize(values);
  model.center = st.center;
  model.scale = st.scale;
  model.basis = svd_truncate(st.values, settings.energy);
  const Hyperparams start = default_start(model.basis.weights, static_cast<std::size_t>(design.cols()));
  out.mcmc = run_mcmc(model.basis.weights, model.design_scaled, settings.priors, settings.mcmc, start);
  model.hyper = out.mcmc.map;
  return out;
}

}  // namespace klpc::gp
