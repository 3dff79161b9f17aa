#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "klpc/gp.hpp"
#include "klpc/kl.hpp"
#include "klpc/pce.hpp"
#include "klpc/random.hpp"
#include "klpc/sir_sde.hpp"

namespace klpc {

inline constexpr const char* model_format_version = "klpc-model-1";

// KL + PC + GP surrogate of a d-dimensional output over p inputs.
//
// Coefficient vectors are laid out n-major: entry n * terms + k holds c_nk.
class EmulatorModel {
 public:
  EmulatorModel() = default;
  // Throws InputError on any dimension mismatch between the parts.
  EmulatorModel(KlBasis kl, Eigen::MatrixXd design, std::vector<PcExpansion> pc, gp::GpModel gp,
                std::vector<gp::Hyperparams> chain, nlohmann::json meta);

  std::size_t output_dim() const { return kl_.dim(); }
  std::size_t modes() const { return kl_.truncation(); }
  std::size_t terms() const { return indices_.size(); }
  std::size_t design_points() const { return static_cast<std::size_t>(design_.rows()); }
  std::size_t inputs() const { return static_cast<std::size_t>(design_.cols()); }

  const KlBasis& kl() const { return kl_; }
  const Eigen::MatrixXd& design() const { return design_; }
  const std::vector<PcExpansion>& pc() const { return pc_; }
  const gp::GpModel& gp() const { return gp_; }
  const std::vector<gp::Hyperparams>& chain() const { return chain_; }
  const nlohmann::json& meta() const { return meta_; }
  const std::vector<MultiIndex>& indices() const { return indices_; }

  // terms x modes matrix from a stacked coefficient vector, and back.
  Eigen::MatrixXd unstack(const Eigen::Ref<const Eigen::VectorXd>& c) const;
  static Eigen::VectorXd stack(const Eigen::MatrixXd& coefficients);

  // Output for given coefficients (terms x modes) and zeta.
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& coefficients,
                           const Eigen::Ref<const Eigen::VectorXd>& zeta) const;
  // E_zeta of the output: only the constant term has nonzero mean.
  Eigen::VectorXd zeta_mean(const Eigen::MatrixXd& coefficients) const;

 private:
  KlBasis kl_;
  Eigen::MatrixXd design_;  // m x p, unscaled
  std::vector<PcExpansion> pc_;
  gp::GpModel gp_;
  std::vector<gp::Hyperparams> chain_;
  nlohmann::json meta_;
  std::vector<MultiIndex> indices_;
};

struct TrainConfig {
  TruncationRule kl_rule = TruncationRule::energy_fraction(0.99);
  ProjectionSettings pc;
  gp::GpSettings gp;
  std::uint64_t seed = 0;
  std::size_t min_realizations = 30;
};

struct TrainResult {
  EmulatorModel model;
  gp::McmcResult mcmc;
  std::vector<PcProjection> projections;  // per design point
};

// design: m x p; samples[j]: M_j x d realizations at design point j.
TrainResult train(const Eigen::MatrixXd& design, const std::vector<Eigen::MatrixXd>& samples,
                  const TrainConfig& config);

struct SampleOptions {
  bool fix_theta = false;  // theta at the input median
  bool fix_zeta = false;   // zeta = 0
  bool fix_eta = false;    // coefficients at the GP predictive mean
  bool zero_coefficients = false;  // test hook: every draw equals the KL mean
  bool full_chain = false;  // hyperparameters drawn from the chain per eta
  bool warn_out_of_hull = true;
};

struct EmulatorDraws {
  Eigen::MatrixXd theta;  // rows x p
  Eigen::MatrixXd raw;    // rows x d, unclamped
  std::vector<std::size_t> theta_index;
  std::vector<std::size_t> eta_index;
  std::vector<std::size_t> zeta_index;

  std::size_t size() const { return static_cast<std::size_t>(raw.rows()); }
  // Physical bounds applied row-wise (SIR QOI layout).
  Eigen::MatrixXd clamped() const;
};

// n_eta GP realizations at theta, with n_zeta intrinsic draws each.
EmulatorDraws sample_at(const EmulatorModel& model, const Eigen::Ref<const Eigen::VectorXd>& theta,
                        std::size_t n_zeta, std::size_t n_eta, Rng& rng,
                        const SampleOptions& options = {});

struct UncertaintyBudget {
  std::size_t n_theta = 1;
  std::size_t n_zeta = 1;
  std::size_t n_eta = 1;
  void validate() const;
};

// theta from the lognormal inputs, then sample_at per theta. Parallel over
// theta with one substream per draw index.
EmulatorDraws sample_full(const EmulatorModel& model, const sir::ParamDistribution& dist,
                          const UncertaintyBudget& budget, std::uint64_t seed,
                          const SampleOptions& options = {});

Eigen::VectorXd median_theta(const sir::ParamDistribution& dist);

struct VarianceComponents {
  Eigen::VectorXd total, intrinsic, parametric, emulator;
  Eigen::VectorXd total_se, intrinsic_se, parametric_se, emulator_se;
};

// Each source sampled on its own, the others held at their central value.
// Computed on raw (unclamped) outputs.
VarianceComponents variance_decomposition(const EmulatorModel& model,
                                          const sir::ParamDistribution& dist,
                                          const UncertaintyBudget& budget, std::uint64_t seed,
                                          const SampleOptions& hooks = {});

// design_index,beta,gamma,replicate,p_inf,t_p,t_d,c_inf,accepted plus
// theta_index,eta_index,zeta_index. Values are clamped.
void write_draws_csv(std::ostream& out, const EmulatorDraws& draws);

void save_model(const EmulatorModel& model, const std::filesystem::path& path);
EmulatorModel load_model(const std::filesystem::path& path);
void save_model(const EmulatorModel& model, std::ostream& out);
EmulatorModel load_model(std::istream& in);

}  // namespace klpc
