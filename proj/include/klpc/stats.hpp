#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace klpc::stats {

double mean(std::span<const double> x);
// Unbiased (n - 1) sample variance.
double variance(std::span<const double> x);
double stddev(std::span<const double> x);

// Standard error of the sample variance, sqrt((m4 - s^4) / n).
double variance_standard_error(std::span<const double> x);

// Linearly interpolated quantile of the empirical distribution (type 7).
double quantile(std::span<const double> x, double p);

// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_two_sample(std::span<const double> a, std::span<const double> b);

// One-sample KS statistic against a continuous CDF.
double ks_one_sample(std::span<const double> x, const std::function<double(double)>& cdf);

// Asymptotic critical value c(alpha) / sqrt(n_eff) for the KS statistic.
double ks_critical_value(double alpha, double n_effective);

double pearson_correlation(std::span<const double> a, std::span<const double> b);

struct Histogram {
  std::vector<double> edges;   // bins + 1
  std::vector<std::size_t> counts;
  std::vector<double> density;  // normalized so that sum(density * width) = 1
};
Histogram histogram(std::span<const double> x, std::size_t bins);

}  // namespace klpc::stats
