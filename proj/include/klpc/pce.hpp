#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "klpc/kde.hpp"
#include "klpc/random.hpp"

namespace klpc {

// Probabilists' Hermite polynomial psi_m(x) by three-term recursion.
double hermite(unsigned degree, double x);
// out[m] = psi_m(x) for m = 0..out.size()-1.
void hermite_all(double x, std::span<double> out);

struct MultiIndex {
  std::vector<unsigned> alpha;

  unsigned total_degree() const;
  unsigned max_degree() const;
  std::string str() const;  // "0:1:2"
  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;
};

// First `count` multi-indices of dimension `dim` in graded order: by total
// degree, then ascending lexicographic with the leftmost coordinate most
// significant, e.g. (0,0),(0,1),(1,0),(0,2),(1,1),(2,0).
std::vector<MultiIndex> multi_index_sequence(std::size_t dim, std::size_t count);

double hermite_multi(const MultiIndex& index, std::span<const double> x);

// E[Psi_alpha^2] = prod alpha_i!.
double hermite_norm_sq(const MultiIndex& index);

// xi_n = sum_k c(k, n) Psi_k(zeta), n = 0..dim-1, k = 0..terms-1.
class PcExpansion {
 public:
  PcExpansion() = default;
  PcExpansion(std::size_t dim, Eigen::MatrixXd coefficients);

  std::size_t dim() const { return dim_; }
  std::size_t terms() const { return indices_.size(); }
  const std::vector<MultiIndex>& indices() const { return indices_; }
  // terms x dim.
  const Eigen::MatrixXd& coefficients() const { return coefficients_; }

  Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& zeta) const;
  // Variance of each coordinate under zeta ~ N(0, I): sum_{k>=1} c^2 E[Psi_k^2].
  Eigen::VectorXd variance() const;

 private:
  std::size_t dim_ = 0;
  std::vector<MultiIndex> indices_;
  Eigen::MatrixXd coefficients_;
};

// Evaluates with an explicit coefficient matrix, sharing the basis tables
// of `indices`.
Eigen::VectorXd evaluate_expansion(const std::vector<MultiIndex>& indices,
                                   const Eigen::Ref<const Eigen::MatrixXd>& coefficients,
                                   const Eigen::Ref<const Eigen::VectorXd>& zeta);

struct ProjectionSettings {
  std::size_t terms = 8;
  std::size_t mc_count = 100000;
  // Stratify u over mc_count Latin-hypercube cells instead of plain draws.
  bool latin_hypercube = false;
  // The draws are split into this many substreams, each summed
  // independently and combined in order. Fixes the result regardless of
  // how many threads run the partitions.
  std::size_t partitions = 16;
  double tol_x = 1e-8;
};

struct PcProjection {
  PcExpansion expansion;
  Eigen::MatrixXd standard_error;  // terms x dim
  std::vector<std::string> warnings;
};

// Galerkin projection c_nk = E[xi_n Psi_k(zeta)] / E[Psi_k^2] by Monte
// Carlo, with xi = g(u) (inverse Rosenblatt of `kde`) and zeta = l(u)
// (componentwise normal quantile) evaluated at the same uniform draw u.
PcProjection project_coefficients(const KdeModel& kde, const ProjectionSettings& settings,
                                  Rng& rng);

// n,k,alpha,c_nk
void write_coefficients_csv(std::ostream& out, const PcExpansion& expansion);

}  // namespace klpc
