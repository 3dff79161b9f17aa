#include "klpc/pce.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <spdlog/spdlog.h>

#include "klpc/csv.hpp"
#include "klpc/error.hpp"
#include "klpc/parallel.hpp"

namespace klpc {

double hermite(unsigned degree, double x) {
  double prev = 1.0;
  if (degree == 0) return prev;
  double cur = x;
  for (unsigned m = 1; m < degree; ++m) {
    const double next = x * cur - static_cast<double>(m) * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

void hermite_all(double x, std::span<double> out) {
  if (out.empty()) return;
  out[0] = 1.0;
  if (out.size() > 1) out[1] = x;
  for (std::size_t m = 1; m + 1 < out.size(); ++m)
    out[m + 1] = x * out[m] - static_cast<double>(m) * out[m - 1];
}

unsigned MultiIndex::total_degree() const {
  unsigned sum = 0;
  for (unsigned a : alpha) sum += a;
  return sum;
}

unsigned MultiIndex::max_degree() const {
  return alpha.empty() ? 0 : *std::max_element(alpha.begin(), alpha.end());
}

std::string MultiIndex::str() const {
  std::string s;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (i) s += ':';
    s += std::to_string(alpha[i]);
  }
  return s;
}

namespace {
// Appends every index of total degree `degree` in ascending lexicographic
// order (leftmost most significant), stopping once `out` holds `count`.
void enumerate_degree(std::size_t dim, unsigned degree, std::size_t count,
                      std::vector<unsigned>& prefix, std::vector<MultiIndex>& out) {
  if (out.size() >= count) return;
  const std::size_t pos = prefix.size();
  if (pos + 1 == dim) {
    prefix.push_back(degree);
    out.push_back({prefix});
    prefix.pop_back();
    return;
  }
  for (unsigned a = 0; a <= degree && out.size() < count; ++a) {
    prefix.push_back(a);
    enumerate_degree(dim, degree - a, count, prefix, out);
    prefix.pop_back();
  }
}
}  // namespace

std::vector<MultiIndex> multi_index_sequence(std::size_t dim, std::size_t count) {
  if (dim < 1 || count < 1) throw InputError("multi_index_sequence needs dim >= 1 and count >= 1");
  std::vector<MultiIndex> out;
  out.reserve(count);
  std::vector<unsigned> prefix;
  for (unsigned degree = 0; out.size() < count; ++degree)
    enumerate_degree(dim, degree, count, prefix, out);
  return out;
}

double hermite_multi(const MultiIndex& index, std::span<const double> x) {
  if (index.alpha.size() != x.size()) throw InputError("hermite_multi: dimension mismatch");
  double value = 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) value *= hermite(index.alpha[i], x[i]);
  return value;
}

double hermite_norm_sq(const MultiIndex& index) {
  double value = 1.0;
  for (unsigned a : index.alpha) value *= std::tgamma(static_cast<double>(a) + 1.0);
  return value;
}

PcExpansion::PcExpansion(std::size_t dim, Eigen::MatrixXd coefficients)
    : dim_(dim), coefficients_(std::move(coefficients)) {
  if (dim < 1 || coefficients_.rows() < 1 || static_cast<std::size_t>(coefficients_.cols()) != dim)
    throw InputError("PC coefficient matrix must be terms x dim with terms, dim >= 1");
  if (!coefficients_.allFinite()) throw InputError("PC coefficients must be finite");
  indices_ = multi_index_sequence(dim, static_cast<std::size_t>(coefficients_.rows()));
}

Eigen::VectorXd evaluate_expansion(const std::vector<MultiIndex>& indices,
                                   const Eigen::Ref<const Eigen::MatrixXd>& coefficients,
                                   const Eigen::Ref<const Eigen::VectorXd>& zeta) {
  const auto dim = static_cast<std::size_t>(zeta.size());
  if (static_cast<std::size_t>(coefficients.cols()) != dim ||
      static_cast<std::size_t>(coefficients.rows()) != indices.size())
    throw InputError("PC evaluation: dimension mismatch");
  unsigned max_degree = 0;
  for (const auto& idx : indices) max_degree = std::max(max_degree, idx.max_degree());
  const std::size_t stride = max_degree + 1;
  std::vector<double> table(dim * stride);
  for (std::size_t i = 0; i < dim; ++i)
    hermite_all(zeta[static_cast<Eigen::Index>(i)], std::span(table).subspan(i * stride, stride));
  Eigen::VectorXd xi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    double psi = 1.0;
    for (std::size_t i = 0; i < dim; ++i) psi *= table[i * stride + indices[k].alpha[i]];
    xi += psi * coefficients.row(static_cast<Eigen::Index>(k)).transpose();
  }
  return xi;
}

Eigen::VectorXd PcExpansion::evaluate(const Eigen::Ref<const Eigen::VectorXd>& zeta) const {
  return evaluate_expansion(indices_, coefficients_, zeta);
}

Eigen::VectorXd PcExpansion::variance() const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  for (std::size_t k = 1; k < indices_.size(); ++k)
    v += hermite_norm_sq(indices_[k]) *
         coefficients_.row(static_cast<Eigen::Index>(k)).transpose().array().square().matrix();
  return v;
}

PcProjection project_coefficients(const KdeModel& kde, const ProjectionSettings& settings,
                                  Rng& rng) {
  const std::size_t dim = kde.dim();
  const std::size_t terms = settings.terms;
  const std::size_t total = settings.mc_count;
  if (terms < 1) throw InputError("PC projection needs at least one term");
  if (total < 1000) throw InputError("PC projection needs mc_count >= 1000");
  const std::size_t parts = std::clamp<std::size_t>(settings.partitions, 1, total);

  const auto indices = multi_index_sequence(dim, terms);
  unsigned max_degree = 0;
  for (const auto& idx : indices) max_degree = std::max(max_degree, idx.max_degree());
  const std::size_t stride = max_degree + 1;

  const std::uint64_t base_seed = rng.next();
  // Latin hypercube: one random permutation of the strata per coordinate.
  std::vector<std::vector<std::uint32_t>> strata;
  if (settings.latin_hypercube) {
    Rng perm_rng = Rng::substream(base_seed, {0xffffffffULL});
    strata.resize(dim);
    for (auto& perm : strata) {
      perm.resize(total);
      for (std::size_t j = 0; j < total; ++j) perm[j] = static_cast<std::uint32_t>(j);
      for (std::size_t j = total - 1; j > 0; --j) std::swap(perm[j], perm[perm_rng.below(j + 1)]);
    }
  }

  struct Partial {
    Eigen::MatrixXd sum;
    Eigen::MatrixXd sum_sq;
  };
  std::vector<Partial> partials(parts);
  parallel_for(parts, [&](std::size_t p) {
    Rng local = Rng::substream(base_seed, {p});
    const std::size_t begin = total * p / parts, end = total * (p + 1) / parts;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(terms), static_cast<Eigen::Index>(dim));
    Eigen::MatrixXd sum_sq = sum;
    std::vector<double> u(dim), xi(dim), table(dim * stride);
    for (std::size_t j = begin; j < end; ++j) {
      for (std::size_t i = 0; i < dim; ++i) {
        double v;
        do {
          v = settings.latin_hypercube
                  ? (static_cast<double>(strata[i][j]) + local.uniform()) / static_cast<double>(total)
                  : local.uniform();
        } while (!(v > KdeModel::boundary_band && v < 1.0 - KdeModel::boundary_band));
        u[i] = v;
      }
      kde.inverse_rosenblatt(u, xi, settings.tol_x);
      for (std::size_t i = 0; i < dim; ++i)
        hermite_all(normal_quantile(u[i]), std::span(table).subspan(i * stride, stride));
      for (std::size_t k = 0; k < terms; ++k) {
        double psi = 1.0;
        for (std::size_t i = 0; i < dim; ++i) psi *= table[i * stride + indices[k].alpha[i]];
        for (std::size_t n = 0; n < dim; ++n) {
          const double term = xi[n] * psi;
          sum(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) += term;
          sum_sq(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) += term * term;
        }
      }
    }
    partials[p] = {std::move(sum), std::move(sum_sq)};
  });

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(terms), static_cast<Eigen::Index>(dim));
  Eigen::MatrixXd sum_sq = sum;
  for (const auto& part : partials) {
    sum += part.sum;
    sum_sq += part.sum_sq;
  }
  const auto n_total = static_cast<double>(total);
  Eigen::MatrixXd coeffs(sum.rows(), sum.cols());
  Eigen::MatrixXd stderr_(sum.rows(), sum.cols());
  for (std::size_t k = 0; k < terms; ++k) {
    const double norm = hermite_norm_sq(indices[k]);
    for (std::size_t n = 0; n < dim; ++n) {
      const auto kk = static_cast<Eigen::Index>(k), nn = static_cast<Eigen::Index>(n);
      const double m1 = sum(kk, nn) / n_total;
      const double m2 = sum_sq(kk, nn) / n_total;
      coeffs(kk, nn) = m1 / norm;
      stderr_(kk, nn) = std::sqrt(std::max(0.0, m2 - m1 * m1) / n_total) / norm;
    }
  }

  PcProjection out{PcExpansion(dim, coeffs), stderr_, {}};
  const Eigen::VectorXd scale = out.expansion.variance().cwiseSqrt();
  for (std::size_t n = 0; n < dim; ++n) {
    const double worst = stderr_.col(static_cast<Eigen::Index>(n)).maxCoeff();
    if (worst > 0.01 * scale[static_cast<Eigen::Index>(n)]) {
      out.warnings.push_back("coordinate " + std::to_string(n) + ": Monte Carlo standard error " +
                             csv::format_double(worst) + " exceeds 1% of the coefficient scale " +
                             csv::format_double(scale[static_cast<Eigen::Index>(n)]) +
                             "; increase mc_count");
      spdlog::warn("PC projection: {}", out.warnings.back());
    }
  }
  return out;
}

void write_coefficients_csv(std::ostream& out, const PcExpansion& expansion) {
  csv::Writer w(out, {"n", "k", "alpha", "c_nk"});
  for (std::size_t n = 0; n < expansion.dim(); ++n) {
    for (std::size_t k = 0; k < expansion.terms(); ++k) {
      w << n << k << expansion.indices()[k].str()
        << expansion.coefficients()(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
      w.end_row();
    }
  }
}

}  // namespace klpc
