#include "klpc/kde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "klpc/error.hpp"

namespace klpc {

namespace {

// Beyond |z| = 8.5 the Gaussian CDF is 0 or 1 to double precision.
constexpr double kWindow = 8.5;
constexpr double kBracketWidths = 10.0;
constexpr double kLogSqrt2Pi = 0.918938533204672741780;
constexpr double kInvSqrt2Pi = 0.398942280401432677940;
// Relative weight below which a sample is dropped from a conditional mixture.
constexpr double kPruneWeight = 1e-17;
constexpr std::size_t kMaxTableNodes = 1 << 16;

inline double kernel(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

// Weighted 1-D Gaussian mixture for one conditional coordinate.
struct Mixture {
  std::vector<double> centers;
  std::vector<double> weights;  // sum to 1
  double h = 1.0;
  double lo = 0.0, hi = 0.0;

  void eval(double x, double& cdf, double& pdf) const {
    double c = 0.0, p = 0.0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double z = (x - centers[k]) / h;
      c += weights[k] * normal_cdf(z);
      p += weights[k] * kernel(z);
    }
    cdf = std::min(c, 1.0);
    pdf = p / h;
  }

  double initial_guess(double u) const {
    double m = 0.0, v = 0.0;
    for (std::size_t k = 0; k < centers.size(); ++k) m += weights[k] * centers[k];
    for (std::size_t k = 0; k < centers.size(); ++k)
      v += weights[k] * (centers[k] - m) * (centers[k] - m);
    return m + normal_quantile(u) * std::sqrt(v + h * h);
  }
};

struct Scratch {
  std::vector<double> log_weight;
  Mixture mixture;
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

// Safeguarded Newton on a monotone CDF with the root bracketed in [lo, hi].
template <typename Eval>
double solve_cdf(const Eval& eval, double u, double lo, double hi, double x, double tol) {
  if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
  for (int iter = 0; iter < 400; ++iter) {
    double f_val, d_val;
    eval(x, f_val, d_val);
    const double r = f_val - u;
    if (r == 0.0) return x;
    (r < 0.0 ? lo : hi) = x;
    double next = 0.5 * (lo + hi);
    bool newton = false;
    if (d_val > 0.0) {
      const double candidate = x - r / d_val;
      if (candidate > lo && candidate < hi) {
        next = candidate;
        newton = true;
      }
    }
    if (newton && std::abs(next - x) < tol) return next;
    if (hi - lo < tol) return 0.5 * (lo + hi);
    x = next;
  }
  return x;
}

void check_finite(const Eigen::MatrixXd& samples) {
  if (!samples.allFinite()) throw InputError("KDE samples must be finite");
}

// Adds -z^2/2 of column `n` at `value` to every sample's log-weight.
void accumulate(const Eigen::MatrixXd& samples, const Eigen::VectorXd& h, std::size_t n,
                double value, std::vector<double>& log_weight) {
  const double* col = samples.col(static_cast<Eigen::Index>(n)).data();
  const double inv_h = 1.0 / h[static_cast<Eigen::Index>(n)];
  for (std::size_t m = 0; m < log_weight.size(); ++m) {
    const double z = (value - col[m]) * inv_h;
    log_weight[m] -= 0.5 * z * z;
  }
}

double log_sum_exp(const std::vector<double>& v, double& max_out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  max_out = mx;
  if (!std::isfinite(mx)) return mx;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

// Conditional mixture of coordinate n given the log-weights accumulated over
// coordinates 0..n-1.
void build_conditional(const Eigen::MatrixXd& samples, const Eigen::VectorXd& h, std::size_t n,
                       const std::vector<double>& log_weight, Mixture& mix) {
  double mx;
  const double lse = log_sum_exp(log_weight, mx);
  double log_density = lse - std::log(static_cast<double>(log_weight.size())) -
                       static_cast<double>(n) * kLogSqrt2Pi;
  for (std::size_t l = 0; l < n; ++l) log_density -= std::log(h[static_cast<Eigen::Index>(l)]);
  if (!(log_density >= std::log(KdeModel::far_from_support_density)))
    throw FarFromSupportError("conditioning point for coordinate " + std::to_string(n) +
                              " is far from all KDE samples (log density " +
                              std::to_string(log_density) + ")");
  const double* col = samples.col(static_cast<Eigen::Index>(n)).data();
  mix.centers.clear();
  mix.weights.clear();
  mix.h = h[static_cast<Eigen::Index>(n)];
  double total = 0.0;
  mix.lo = std::numeric_limits<double>::infinity();
  mix.hi = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < log_weight.size(); ++m) {
    const double w = std::exp(log_weight[m] - mx);
    if (w < kPruneWeight) continue;
    mix.centers.push_back(col[m]);
    mix.weights.push_back(w);
    total += w;
    mix.lo = std::min(mix.lo, col[m]);
    mix.hi = std::max(mix.hi, col[m]);
  }
  for (double& w : mix.weights) w /= total;
  mix.lo -= kBracketWidths * mix.h;
  mix.hi += kBracketWidths * mix.h;
}

void check_probability(double u) {
  if (!(u > KdeModel::boundary_band && u < 1.0 - KdeModel::boundary_band))
    throw BoundaryError("probability " + std::to_string(u) +
                        " is within 1e-12 of 0 or 1; no quantile bracket exists");
}

}  // namespace

Eigen::VectorXd KdeModel::silverman_bandwidth(const Eigen::MatrixXd& samples) {
  const auto m = static_cast<double>(samples.rows());
  const auto d = static_cast<double>(samples.cols());
  const double factor = std::pow(4.0 / ((d + 2.0) * m), 1.0 / (d + 4.0));
  Eigen::VectorXd h(samples.cols());
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    const double mean = samples.col(j).mean();
    const double var = (samples.col(j).array() - mean).square().sum() / (m - 1.0);
    if (!(var > 0.0))
      throw DegenerateDimensionError(static_cast<std::size_t>(j),
                                     "KDE dimension " + std::to_string(j) +
                                         " has zero sample variance");
    h[j] = std::sqrt(var) * factor;
  }
  return h;
}

KdeModel KdeModel::fit(const Eigen::MatrixXd& samples, BandwidthRule rule) {
  if (samples.rows() < 2) throw InputError("KDE fit needs at least two samples");
  if (samples.cols() < 1) throw InputError("KDE fit needs at least one dimension");
  check_finite(samples);
  switch (rule) {
    case BandwidthRule::silverman:
      break;
  }
  return KdeModel(samples, silverman_bandwidth(samples));
}

KdeModel::KdeModel(Eigen::MatrixXd samples, Eigen::VectorXd bandwidth)
    : samples_(std::move(samples)), bandwidth_(std::move(bandwidth)) {
  if (samples_.rows() < 1 || samples_.cols() < 1) throw InputError("KDE needs samples");
  if (bandwidth_.size() != samples_.cols())
    throw InputError("bandwidth count does not match the KDE dimension");
  if (!bandwidth_.allFinite() || (bandwidth_.array() <= 0.0).any())
    throw InputError("KDE bandwidths must be positive and finite");
  check_finite(samples_);
  build_first_marginal();
}

void KdeModel::build_first_marginal() {
  const auto col = samples_.col(0);
  sorted_first_.assign(col.data(), col.data() + col.size());
  std::sort(sorted_first_.begin(), sorted_first_.end());
  const double h = bandwidth_[0];
  const double lo = sorted_first_.front() - kBracketWidths * h;
  const double hi = sorted_first_.back() + kBracketWidths * h;
  auto nodes = static_cast<std::size_t>(std::ceil((hi - lo) / (h / 32.0))) + 1;
  nodes = std::clamp<std::size_t>(nodes, 3, kMaxTableNodes);
  table_.lo = lo;
  table_.step = (hi - lo) / static_cast<double>(nodes - 1);
  table_.cdf.resize(nodes);
  table_.pdf.resize(nodes);
  for (std::size_t k = 0; k < nodes; ++k)
    first_cdf_pdf(lo + static_cast<double>(k) * table_.step, table_.cdf[k], table_.pdf[k]);
}

void KdeModel::first_cdf_pdf(double x, double& cdf, double& pdf) const {
  const double h = bandwidth_[0];
  const auto begin = std::lower_bound(sorted_first_.begin(), sorted_first_.end(), x - kWindow * h);
  const auto end = std::upper_bound(begin, sorted_first_.end(), x + kWindow * h);
  double c = static_cast<double>(begin - sorted_first_.begin());
  double p = 0.0;
  const double inv_h = 1.0 / h;
  for (auto it = begin; it != end; ++it) {
    const double z = (x - *it) * inv_h;
    c += normal_cdf(z);
    p += kernel(z);
  }
  const auto m = static_cast<double>(sorted_first_.size());
  cdf = std::min(c / m, 1.0);
  pdf = p / (m * h);
}

double KdeModel::invert_first(double u, double tol_x) const {
  const auto& F = table_.cdf;
  const std::size_t last = F.size() - 1;
  auto k = static_cast<std::size_t>(std::upper_bound(F.begin(), F.end(), u) - F.begin());
  k = std::clamp<std::size_t>(k, 1, last) - 1;
  const double dx = table_.step;
  const double x0 = table_.lo + static_cast<double>(k) * dx;
  const double x1 = x0 + dx;
  const double f0 = F[k], f1 = F[k + 1];
  const double d0 = table_.pdf[k] * dx, d1 = table_.pdf[k + 1] * dx;

  // Cubic Hermite interpolant of the CDF on [x0, x1], inverted in t.
  auto hermite = [&](double t, double& value, double& slope) {
    const double t2 = t * t, t3 = t2 * t;
    value = (2 * t3 - 3 * t2 + 1) * f0 + (t3 - 2 * t2 + t) * d0 + (-2 * t3 + 3 * t2) * f1 +
            (t3 - t2) * d1;
    slope = (6 * t2 - 6 * t) * f0 + (3 * t2 - 4 * t + 1) * d0 + (-6 * t2 + 6 * t) * f1 +
            (3 * t2 - 2 * t) * d1;
  };
  const double t = solve_cdf(hermite, u, 0.0, 1.0, f1 > f0 ? (u - f0) / (f1 - f0) : 0.5, 1e-13);
  double value, slope;
  hermite(t, value, slope);
  const double guess = x0 + t * dx;

  // One exact residual with the interpolated slope usually lands within tol.
  double cdf, pdf;
  first_cdf_pdf(guess, cdf, pdf);
  const double approx_pdf = slope / dx;
  if (approx_pdf > 0.0) {
    const double next = guess - (cdf - u) / approx_pdf;
    if (std::abs(next - guess) < tol_x && next >= x0 && next <= x1) return next;
  }
  auto exact = [this](double x, double& c, double& p) { first_cdf_pdf(x, c, p); };
  return solve_cdf(exact, u, x0, x1, guess, tol_x);
}

double KdeModel::pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (static_cast<std::size_t>(x.size()) != dim()) throw InputError("pdf point has wrong dimension");
  return marginal_pdf(x);
}

double KdeModel::marginal_pdf(const Eigen::Ref<const Eigen::VectorXd>& prefix) const {
  const auto n = static_cast<std::size_t>(prefix.size());
  if (n == 0 || n > dim()) throw InputError("marginal_pdf prefix has wrong dimension");
  std::vector<double> log_weight(size(), 0.0);
  for (std::size_t l = 0; l < n; ++l)
    accumulate(samples_, bandwidth_, l, prefix[static_cast<Eigen::Index>(l)], log_weight);
  double mx;
  double log_density = log_sum_exp(log_weight, mx) - std::log(static_cast<double>(size())) -
                       static_cast<double>(n) * kLogSqrt2Pi;
  for (std::size_t l = 0; l < n; ++l) log_density -= std::log(bandwidth_[static_cast<Eigen::Index>(l)]);
  return std::exp(log_density);
}

double KdeModel::conditional_cdf(std::size_t n, double value,
                                 const Eigen::Ref<const Eigen::VectorXd>& given) const {
  if (n >= dim() || static_cast<std::size_t>(given.size()) != n)
    throw InputError("conditional_cdf: need 0 <= n < dim and n conditioning values");
  double cdf, pdf;
  if (n == 0) {
    first_cdf_pdf(value, cdf, pdf);
    return cdf;
  }
  Scratch& s = scratch();
  s.log_weight.assign(size(), 0.0);
  for (std::size_t l = 0; l < n; ++l)
    accumulate(samples_, bandwidth_, l, given[static_cast<Eigen::Index>(l)], s.log_weight);
  build_conditional(samples_, bandwidth_, n, s.log_weight, s.mixture);
  s.mixture.eval(value, cdf, pdf);
  return cdf;
}

double KdeModel::conditional_pdf(std::size_t n, double value,
                                 const Eigen::Ref<const Eigen::VectorXd>& given) const {
  if (n >= dim() || static_cast<std::size_t>(given.size()) != n)
    throw InputError("conditional_pdf: need 0 <= n < dim and n conditioning values");
  double cdf, pdf;
  if (n == 0) {
    first_cdf_pdf(value, cdf, pdf);
    return pdf;
  }
  Scratch& s = scratch();
  s.log_weight.assign(size(), 0.0);
  for (std::size_t l = 0; l < n; ++l)
    accumulate(samples_, bandwidth_, l, given[static_cast<Eigen::Index>(l)], s.log_weight);
  build_conditional(samples_, bandwidth_, n, s.log_weight, s.mixture);
  s.mixture.eval(value, cdf, pdf);
  return pdf;
}

Eigen::VectorXd KdeModel::rosenblatt(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (static_cast<std::size_t>(x.size()) != dim()) throw InputError("rosenblatt point has wrong dimension");
  Eigen::VectorXd u(x.size());
  double cdf, pdf;
  first_cdf_pdf(x[0], cdf, pdf);
  u[0] = cdf;
  Scratch& s = scratch();
  s.log_weight.assign(size(), 0.0);
  for (std::size_t n = 1; n < dim(); ++n) {
    accumulate(samples_, bandwidth_, n - 1, x[static_cast<Eigen::Index>(n - 1)], s.log_weight);
    build_conditional(samples_, bandwidth_, n, s.log_weight, s.mixture);
    s.mixture.eval(x[static_cast<Eigen::Index>(n)], cdf, pdf);
    u[static_cast<Eigen::Index>(n)] = cdf;
  }
  return u;
}

Eigen::VectorXd KdeModel::inverse_rosenblatt(const Eigen::Ref<const Eigen::VectorXd>& u,
                                             double tol_x) const {
  if (static_cast<std::size_t>(u.size()) != dim())
    throw InputError("inverse_rosenblatt point has wrong dimension");
  Eigen::VectorXd x(u.size());
  inverse_rosenblatt(std::span<const double>(u.data(), dim()), std::span<double>(x.data(), dim()),
                     tol_x);
  return x;
}

void KdeModel::inverse_rosenblatt(std::span<const double> u, std::span<double> x,
                                  double tol_x) const {
  if (u.size() != dim() || x.size() != dim())
    throw InputError("inverse_rosenblatt point has wrong dimension");
  for (double p : u) check_probability(p);
  x[0] = invert_first(u[0], tol_x);
  if (dim() == 1) return;
  Scratch& s = scratch();
  s.log_weight.assign(size(), 0.0);
  for (std::size_t n = 1; n < dim(); ++n) {
    accumulate(samples_, bandwidth_, n - 1, x[n - 1], s.log_weight);
    build_conditional(samples_, bandwidth_, n, s.log_weight, s.mixture);
    const Mixture& mix = s.mixture;
    auto eval = [&mix](double v, double& c, double& p) { mix.eval(v, c, p); };
    x[n] = solve_cdf(eval, u[n], mix.lo, mix.hi, mix.initial_guess(u[n]), tol_x);
  }
}

Eigen::MatrixXd KdeModel::sample(std::size_t count, Rng& rng) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(count), samples_.cols());
  std::vector<double> u(dim()), x(dim());
  for (std::size_t r = 0; r < count; ++r) {
    for (double& p : u) {
      do {
        p = rng.uniform();
      } while (!(p > boundary_band && p < 1.0 - boundary_band));
    }
    inverse_rosenblatt(u, x);
    for (std::size_t n = 0; n < dim(); ++n)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(n)) = x[n];
  }
  return out;
}

KdeModel KdeModel::marginal(std::span<const std::size_t> dims) const {
  if (dims.empty()) throw InputError("marginal needs at least one dimension");
  Eigen::MatrixXd sub(samples_.rows(), static_cast<Eigen::Index>(dims.size()));
  Eigen::VectorXd h(static_cast<Eigen::Index>(dims.size()));
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (dims[k] >= dim()) throw InputError("marginal dimension out of range");
    sub.col(static_cast<Eigen::Index>(k)) = samples_.col(static_cast<Eigen::Index>(dims[k]));
    h[static_cast<Eigen::Index>(k)] = bandwidth_[static_cast<Eigen::Index>(dims[k])];
  }
  return KdeModel(std::move(sub), std::move(h));
}

}  // namespace klpc
