#include "klpc/sir_sde.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "klpc/error.hpp"

namespace klpc::sir {

void ModelParams::validate(bool allow_no_infected) const {
  if (!(beta > 0.0) || !(gamma > 0.0)) throw InputError("beta and gamma must be positive");
  if (!(population > 0.0)) throw InputError("population must be positive");
  if (!(s0 >= 0.0) || !(i0 >= 0.0)) throw InputError("initial counts must be nonnegative");
  if (s0 + i0 > population) throw InputError("s0 + i0 exceeds the population");
  if (!allow_no_infected && i0 < 1.0) throw InputError("i0 must be at least 1");
}

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw InputError("dt must be positive");
  if (!(t_max > dt)) throw InputError("t_max must exceed dt");
  if (!(extinction_threshold >= 0.0)) throw InputError("extinction_threshold must be nonnegative");
}

QoiVector QoiVector::from(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != 4) throw InputError("QOI vector must have 4 entries");
  return {x[0], x[1], x[2], x[3]};
}

QoiVector QoiVector::clamped() const {
  return {std::clamp(p_inf, 0.0, 100.0), std::max(t_p, 0.0), std::max(t_d, 0.0),
          std::clamp(c_inf, 0.0, 100.0)};
}

void ParamDistribution::validate() const {
  if (!(sigma2_beta > 0.0) || !(sigma2_gamma > 0.0))
    throw InputError("lognormal variances must be positive");
  if (scale == LognormalScale::natural && (!(mu_beta > 0.0) || !(mu_gamma > 0.0)))
    throw InputError("natural-scale lognormal means must be positive");
}

namespace {
// Moments of X -> moments of log X.
double natural_log_var(double mean, double var) { return std::log1p(var / (mean * mean)); }
double natural_log_mean(double mean, double var) {
  return std::log(mean) - 0.5 * natural_log_var(mean, var);
}
}  // namespace

double ParamDistribution::log_mean_beta() const {
  return scale == LognormalScale::log ? mu_beta : natural_log_mean(mu_beta, sigma2_beta);
}
double ParamDistribution::log_var_beta() const {
  return scale == LognormalScale::log ? sigma2_beta : natural_log_var(mu_beta, sigma2_beta);
}
double ParamDistribution::log_mean_gamma() const {
  return scale == LognormalScale::log ? mu_gamma : natural_log_mean(mu_gamma, sigma2_gamma);
}
double ParamDistribution::log_var_gamma() const {
  return scale == LognormalScale::log ? sigma2_gamma : natural_log_var(mu_gamma, sigma2_gamma);
}

double ParamDistribution::quantile_beta(double p) const {
  return std::exp(log_mean_beta() + std::sqrt(log_var_beta()) * normal_quantile(p));
}
double ParamDistribution::quantile_gamma(double p) const {
  return std::exp(log_mean_gamma() + std::sqrt(log_var_gamma()) * normal_quantile(p));
}

ModelParams with_rates(ModelParams params, Rates rates) {
  params.beta = rates.beta;
  params.gamma = rates.gamma;
  return params;
}

Eigen::Vector2d drift(State z, const ModelParams& p) {
  const double infection = p.beta * z.s * z.i / p.population;
  return {-infection, infection - p.gamma * z.i};
}

Eigen::Matrix2d diffusion_covariance(State z, const ModelParams& p) {
  const double infection = p.beta * z.s * z.i / p.population;
  Eigen::Matrix2d v;
  v << infection, -infection, -infection, infection + p.gamma * z.i;
  return v;
}

MatrixRoot symmetric_sqrt(const Eigen::Matrix2d& v) {
  const double det = v(0, 0) * v(1, 1) - v(0, 1) * v(1, 0);
  const double trace = v(0, 0) + v(1, 1);
  MatrixRoot out;
  if (det >= 0.0 && trace >= 0.0) {
    const double root_det = std::sqrt(det);
    const double denom = trace + 2.0 * root_det;
    if (denom >= 1e-14) {
      out.root = (v + root_det * Eigen::Matrix2d::Identity()) / std::sqrt(denom);
      out.degenerate = det <= 1e-14 * trace * trace;
      return out;
    }
  }
  // Singular, indefinite, or vanishing: root of the nonnegative eigen-part.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(0.5 * (v + v.transpose()));
  const Eigen::Vector2d lam = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  out.root = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  out.degenerate = true;
  return out;
}

MatrixRoot diffusion_sqrt(State z, const ModelParams& p) {
  return symmetric_sqrt(diffusion_covariance(z, p));
}

State step(State z, const ModelParams& p, double dt, const Eigen::Vector2d& noise) {
  Eigen::Vector2d next = Eigen::Vector2d(z.s, z.i) + drift(z, p) * dt;
  if (noise[0] != 0.0 || noise[1] != 0.0)
    next += diffusion_sqrt(z, p).root * (std::sqrt(dt) * noise);
  State out;
  out.s = std::clamp(next[0], 0.0, p.population);
  // s + i <= N, reducing i first.
  out.i = std::clamp(next[1], 0.0, p.population - out.s);
  return out;
}

Trajectory simulate(const ModelParams& p, const SimConfig& config, Rng& rng) {
  p.validate(true);
  config.validate();
  Trajectory traj;
  const auto max_steps = static_cast<std::size_t>(std::ceil(config.t_max / config.dt - 1e-9));
  State z{p.s0, p.i0};
  traj.times.push_back(0.0);
  traj.s.push_back(z.s);
  traj.i.push_back(z.i);
  for (std::size_t k = 0; k < max_steps && z.i >= config.extinction_threshold && z.i > 0.0; ++k) {
    const double t = static_cast<double>(k) * config.dt;
    const double h = std::min(config.dt, config.t_max - t);
    Eigen::Vector2d noise = Eigen::Vector2d::Zero();
    if (!config.noise_free) noise = {rng.normal(), rng.normal()};
    z = step(z, p, h, noise);
    traj.times.push_back(std::min(static_cast<double>(k + 1) * config.dt, config.t_max));
    traj.s.push_back(z.s);
    traj.i.push_back(z.i);
  }
  return traj;
}

Trajectory simulate_ode(const ModelParams& p, double dt, double t_max) {
  SimConfig config;
  config.dt = dt;
  config.t_max = t_max;
  config.noise_free = true;
  config.extinction_threshold = 0.0;
  Rng unused(0);
  return simulate(p, config, unused);
}

QoiVector extract_qoi(const Trajectory& traj, double population) {
  if (traj.empty()) throw InputError("cannot extract QOI from an empty trajectory");
  QoiVector q;
  std::size_t peak = 0;
  for (std::size_t k = 1; k < traj.size(); ++k)
    if (traj.i[k] > traj.i[peak]) peak = k;
  const double peak_value = traj.i[peak];
  q.p_inf = 100.0 * peak_value / population;
  q.t_p = traj.times[peak];

  // Measure of {t : i(t) >= peak / 2} under linear interpolation.
  const double threshold = 0.5 * peak_value;
  double duration = 0.0;
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const double a = traj.i[k], b = traj.i[k + 1];
    const double width = traj.times[k + 1] - traj.times[k];
    const bool a_in = a >= threshold, b_in = b >= threshold;
    if (a_in && b_in) {
      duration += width;
    } else if (a_in != b_in) {
      const double high = a_in ? a : b, low = a_in ? b : a;
      duration += width * (high - threshold) / (high - low);
    }
  }
  q.t_d = peak_value > 0.0 ? duration : 0.0;
  q.c_inf = 100.0 * (population - traj.s.back()) / population;
  return q;
}

std::vector<Rates> sample_parameters(const ParamDistribution& dist, std::size_t count, Rng& rng) {
  dist.validate();
  if (count == 0) throw InputError("sample_parameters needs count >= 1");
  const double mb = dist.log_mean_beta(), sb = std::sqrt(dist.log_var_beta());
  const double mg = dist.log_mean_gamma(), sg = std::sqrt(dist.log_var_gamma());
  std::vector<Rates> out(count);
  for (auto& r : out) {
    r.beta = std::exp(mb + sb * rng.normal());
    r.gamma = std::exp(mg + sg * rng.normal());
  }
  return out;
}

}  // namespace klpc::sir
