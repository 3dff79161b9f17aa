#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "klpc/random.hpp"

namespace klpc::sir {

struct ModelParams {
  double beta = 0.0;   // infection rate, 1/day
  double gamma = 0.0;  // recovery rate, 1/day
  double population = 10000.0;
  double s0 = 9998.0;
  double i0 = 2.0;

  // Throws InputError unless beta, gamma > 0, population >= s0 + i0, and
  // i0 >= 1. Set allow_no_infected to accept i0 = 0 (disease-free start).
  void validate(bool allow_no_infected = false) const;
};

struct SimConfig {
  double dt = 0.01;
  double t_max = 365.0;
  std::uint64_t seed = 0;
  double extinction_threshold = 0.5;
  // Integrate the mean-field ODE: zero noise, no draws consumed.
  bool noise_free = false;

  void validate() const;
};

struct State {
  double s = 0.0;
  double i = 0.0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<double> s;
  std::vector<double> i;

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
};

struct QoiVector {
  double p_inf = 0.0;  // peak simultaneously infected, % of N
  double t_p = 0.0;    // time of the peak, days
  double t_d = 0.0;    // days with infected >= half the peak
  double c_inf = 0.0;  // cumulative ever infected, % of N

  static constexpr std::size_t size = 4;
  static constexpr std::array<const char*, 4> names{"p_inf", "t_p", "t_d", "c_inf"};

  std::array<double, 4> as_array() const { return {p_inf, t_p, t_d, c_inf}; }
  Eigen::Vector4d as_vector() const { return {p_inf, t_p, t_d, c_inf}; }
  static QoiVector from(const Eigen::Ref<const Eigen::VectorXd>& x);
  // Clamps into the physical range: percentages to [0, 100], times >= 0.
  QoiVector clamped() const;
};

// (mu, sigma2) read as moments of log X, or of X itself.
enum class LognormalScale { log, natural };

struct ParamDistribution {
  double mu_beta = 1.0;
  double sigma2_beta = 0.000125;
  double mu_gamma = 0.8;
  double sigma2_gamma = 0.000125;
  LognormalScale scale = LognormalScale::log;

  void validate() const;

  // Parameters of the underlying normal for each rate.
  double log_mean_beta() const;
  double log_var_beta() const;
  double log_mean_gamma() const;
  double log_var_gamma() const;

  double quantile_beta(double p) const;
  double quantile_gamma(double p) const;
};

struct Rates {
  double beta = 0.0;
  double gamma = 0.0;
  friend bool operator==(const Rates&, const Rates&) = default;
};

ModelParams with_rates(ModelParams params, Rates rates);

// A(Z): mean rate of change of (S, I).
Eigen::Vector2d drift(State z, const ModelParams& p);

// V(Z): instantaneous covariance of the increments.
Eigen::Matrix2d diffusion_covariance(State z, const ModelParams& p);

struct MatrixRoot {
  Eigen::Matrix2d root = Eigen::Matrix2d::Zero();
  // True when the input was numerically singular or indefinite and the root
  // of its nonnegative eigen-part was returned.
  bool degenerate = false;
};

// Symmetric positive-semidefinite square root of a symmetric 2x2 matrix.
MatrixRoot symmetric_sqrt(const Eigen::Matrix2d& v);

// B(Z) = sqrt(V(Z)).
MatrixRoot diffusion_sqrt(State z, const ModelParams& p);

// One Euler-Maruyama step with standard-normal `noise`, followed by the
// clamp into the simplex: s, i in [0, N] and s + i <= N, reducing i first.
State step(State z, const ModelParams& p, double dt, const Eigen::Vector2d& noise);

// Integrates from (s0, i0) until t_max or until I drops below the
// extinction threshold. The terminal state is always stored.
Trajectory simulate(const ModelParams& p, const SimConfig& config, Rng& rng);

// Mean-field solution on a fine noiseless grid.
Trajectory simulate_ode(const ModelParams& p, double dt, double t_max);

QoiVector extract_qoi(const Trajectory& traj, double population);

std::vector<Rates> sample_parameters(const ParamDistribution& dist, std::size_t count, Rng& rng);

}  // namespace klpc::sir
