#include "klpc/kl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "klpc/error.hpp"

namespace klpc {

KlBasis::KlBasis(Eigen::VectorXd mean, Eigen::VectorXd eigenvalues, Eigen::MatrixXd eigenvectors,
                 std::size_t truncation)
    : mean_(std::move(mean)),
      eigenvalues_(std::move(eigenvalues)),
      eigenvectors_(std::move(eigenvectors)),
      truncation_(truncation) {
  const auto d = mean_.size();
  if (d == 0 || eigenvalues_.size() != d || eigenvectors_.rows() != d || eigenvectors_.cols() != d)
    throw InputError("KL basis dimensions are inconsistent");
  if (truncation_ < 1 || truncation_ > static_cast<std::size_t>(d))
    throw InputError("KL truncation must lie in [1, d]");
  const Eigen::MatrixXd gram = eigenvectors_.transpose() * eigenvectors_;
  if ((gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-10)
    throw InputError("KL eigenvectors are not orthonormal");
  for (Eigen::Index n = 1; n < d; ++n)
    if (eigenvalues_[n] > eigenvalues_[n - 1]) throw InputError("KL eigenvalues are not sorted");
}

KlBasis KlBasis::truncated(std::size_t n) const {
  return KlBasis(mean_, eigenvalues_, eigenvectors_, n);
}

Eigen::VectorXd KlBasis::project(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != mean_.size()) throw InputError("KL project: wrong dimension");
  return eigenvectors_.leftCols(static_cast<Eigen::Index>(truncation_)).transpose() * (x - mean_);
}

Eigen::MatrixXd KlBasis::project_rows(const Eigen::MatrixXd& samples) const {
  if (samples.cols() != mean_.size()) throw InputError("KL project: wrong dimension");
  return (samples.rowwise() - mean_.transpose()) *
         eigenvectors_.leftCols(static_cast<Eigen::Index>(truncation_));
}

Eigen::VectorXd KlBasis::reconstruct(const Eigen::Ref<const Eigen::VectorXd>& xi) const {
  if (static_cast<std::size_t>(xi.size()) != truncation_)
    throw InputError("KL reconstruct: coefficient count must equal the truncation");
  return mean_ + eigenvectors_.leftCols(static_cast<Eigen::Index>(truncation_)) * xi;
}

std::size_t truncation_order(const Eigen::VectorXd& eigenvalues, TruncationRule rule) {
  const auto d = static_cast<std::size_t>(eigenvalues.size());
  if (rule.kind == TruncationRule::Kind::count) {
    if (rule.count < 1 || rule.count > d) throw InputError("KL truncation count must lie in [1, d]");
    return rule.count;
  }
  if (!(rule.energy > 0.0 && rule.energy <= 1.0))
    throw InputError("KL energy fraction must lie in (0, 1]");
  const double total = eigenvalues.sum();
  double running = 0.0;
  for (std::size_t n = 0; n < d; ++n) {
    running += eigenvalues[static_cast<Eigen::Index>(n)];
    if (running >= rule.energy * total) return n + 1;
  }
  return d;
}

KlBasis compute_kl(const Eigen::MatrixXd& samples, TruncationRule rule) {
  if (samples.rows() < 2) throw InputError("KL needs at least two samples");
  if (!samples.allFinite()) throw InputError("KL samples must be finite");
  const Eigen::Index d = samples.cols();
  const Eigen::VectorXd mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(samples.rows());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("KL eigendecomposition failed");

  // Eigen returns ascending order; stable sort descending keeps solver order on ties.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return eig.eigenvalues()[a] > eig.eigenvalues()[b];
  });

  Eigen::VectorXd values(d);
  Eigen::MatrixXd vectors(d, d);
  for (Eigen::Index n = 0; n < d; ++n) {
    values[n] = std::max(0.0, eig.eigenvalues()[order[static_cast<std::size_t>(n)]]);
    Eigen::VectorXd f = eig.eigenvectors().col(order[static_cast<std::size_t>(n)]);
    Eigen::Index pivot = 0;
    for (Eigen::Index r = 1; r < d; ++r)
      if (std::abs(f[r]) > std::abs(f[pivot])) pivot = r;
    if (f[pivot] < 0.0) f = -f;
    vectors.col(n) = f;
  }
  return KlBasis(mean, values, vectors, truncation_order(values, rule));
}

}  // namespace klpc
