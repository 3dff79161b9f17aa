#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace klpc {

struct TruncationRule {
  enum class Kind { energy, count };
  Kind kind = Kind::energy;
  double energy = 0.99;
  std::size_t count = 0;

  // Smallest N whose leading eigenvalues hold `fraction` of the trace.
  static TruncationRule energy_fraction(double fraction) { return {Kind::energy, fraction, 0}; }
  static TruncationRule fixed(std::size_t n) { return {Kind::count, 1.0, n}; }
};

// Discrete Karhunen-Loeve basis of a d-dimensional random vector.
class KlBasis {
 public:
  KlBasis() = default;
  // Validates orthonormality, ordering, and 1 <= truncation <= d.
  KlBasis(Eigen::VectorXd mean, Eigen::VectorXd eigenvalues, Eigen::MatrixXd eigenvectors,
          std::size_t truncation);

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  std::size_t truncation() const { return truncation_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  // All d eigenvalues, non-increasing.
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  // Column n is f^n.
  const Eigen::MatrixXd& eigenvectors() const { return eigenvectors_; }

  KlBasis truncated(std::size_t n) const;

  // xi_n = (x - mean) . f^n for the retained modes.
  Eigen::VectorXd project(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  // Row-wise projection of an M x d sample matrix to M x N coefficients.
  Eigen::MatrixXd project_rows(const Eigen::MatrixXd& samples) const;
  Eigen::VectorXd reconstruct(const Eigen::Ref<const Eigen::VectorXd>& xi) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
  std::size_t truncation_ = 0;
};

// Mean, 1/M covariance, and eigendecomposition of an M x d sample matrix.
// Eigenvectors are sign-normalized so their largest-magnitude entry is
// positive (lowest index on ties).
KlBasis compute_kl(const Eigen::MatrixXd& samples,
                   TruncationRule rule = TruncationRule::energy_fraction(0.99));

std::size_t truncation_order(const Eigen::VectorXd& eigenvalues, TruncationRule rule);

}  // namespace klpc
