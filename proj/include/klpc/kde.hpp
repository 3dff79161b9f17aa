#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "klpc/random.hpp"

namespace klpc {

enum class BandwidthRule { silverman };

// Tensor-product Gaussian kernel density estimate with one bandwidth per
// dimension. Immutable after construction; every query is const and safe to
// call concurrently.
//
// Dimensions are 0-based: conditional_cdf(n, ...) is the CDF of coordinate
// n given coordinates 0..n-1, so n = 0 is the plain first marginal.
class KdeModel {
 public:
  // Bandwidths by rule. Requires M >= 2 finite samples (rows) and nonzero
  // variance in every column.
  static KdeModel fit(const Eigen::MatrixXd& samples,
                      BandwidthRule rule = BandwidthRule::silverman);

  // Explicit bandwidths; accepts a single sample.
  KdeModel(Eigen::MatrixXd samples, Eigen::VectorXd bandwidth);

  static Eigen::VectorXd silverman_bandwidth(const Eigen::MatrixXd& samples);

  std::size_t dim() const { return static_cast<std::size_t>(samples_.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(samples_.rows()); }
  const Eigen::MatrixXd& samples() const { return samples_; }
  const Eigen::VectorXd& bandwidth() const { return bandwidth_; }

  double pdf(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  // Density of the leading prefix.size() coordinates.
  double marginal_pdf(const Eigen::Ref<const Eigen::VectorXd>& prefix) const;

  // F_{n | 0..n-1}(value | given); given.size() must equal n.
  double conditional_cdf(std::size_t n, double value,
                         const Eigen::Ref<const Eigen::VectorXd>& given) const;
  double conditional_pdf(std::size_t n, double value,
                         const Eigen::Ref<const Eigen::VectorXd>& given) const;

  // x -> u with u_n = F_{n|0..n-1}(x_n | x_0..x_{n-1}).
  Eigen::VectorXd rosenblatt(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  // u -> x solving each conditional CDF to within tol_x. Throws
  // BoundaryError when a coordinate of u is within 1e-12 of 0 or 1.
  Eigen::VectorXd inverse_rosenblatt(const Eigen::Ref<const Eigen::VectorXd>& u,
                                     double tol_x = 1e-8) const;
  void inverse_rosenblatt(std::span<const double> u, std::span<double> x,
                          double tol_x = 1e-8) const;

  // count x dim matrix of draws g(u), u ~ U(0,1)^d.
  Eigen::MatrixXd sample(std::size_t count, Rng& rng) const;

  // KDE over the selected coordinates with the same bandwidths.
  KdeModel marginal(std::span<const std::size_t> dims) const;

  static constexpr double boundary_band = 1e-12;
  static constexpr double far_from_support_density = 1e-300;

 private:
  struct CdfTable {
    double lo = 0.0;
    double step = 0.0;
    std::vector<double> cdf;
    std::vector<double> pdf;
  };

  void build_first_marginal();
  void first_cdf_pdf(double x, double& cdf, double& pdf) const;
  double invert_first(double u, double tol_x) const;

  Eigen::MatrixXd samples_;   // M x d
  Eigen::VectorXd bandwidth_;
  std::vector<double> sorted_first_;
  CdfTable table_;
};

}  // namespace klpc
