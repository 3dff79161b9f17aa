#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "klpc/sir_sde.hpp"

namespace klpc::sir {

struct EnsembleSettings {
  std::size_t reps_per_point = 200;
  // Realizations with c_inf below this are rejected.
  double min_cinf_percent = 10.0;
  // Retry budget per design point; 0 means 50 * reps_per_point.
  std::size_t max_attempts = 0;
  // Attempts simulated per parallel batch. Output does not depend on it.
  std::size_t batch_size = 64;

  std::size_t attempt_budget() const { return max_attempts ? max_attempts : 50 * reps_per_point; }
};

struct Realization {
  std::size_t replicate = 0;  // attempt index within the design point
  QoiVector qoi;
  bool accepted = false;
};

struct DesignPointEnsemble {
  Rates theta;
  std::vector<Realization> realizations;  // every attempt, in order
  std::size_t accepted_count = 0;
  bool budget_exhausted = false;

  std::size_t attempts() const { return realizations.size(); }
  double acceptance_rate() const;
  std::vector<QoiVector> accepted() const;
  // Accepted QOI as an M x 4 matrix.
  Eigen::MatrixXd accepted_matrix() const;
};

// Replicate r of design point j draws from Rng::substream(config.seed, {j, r}),
// so results do not depend on thread count or batch size.
std::vector<DesignPointEnsemble> generate_ensemble(std::span<const Rates> design,
                                                   std::size_t reps_per_point,
                                                   const ModelParams& base,
                                                   const SimConfig& config,
                                                   double min_cinf_percent);

std::vector<DesignPointEnsemble> generate_ensemble(std::span<const Rates> design,
                                                   const ModelParams& base,
                                                   const SimConfig& config,
                                                   const EnsembleSettings& settings);

// Plain Monte Carlo: every attempt draws its own (beta, gamma) from `dist`
// and simulates once, until `count` realizations pass the filter. Each
// attempt is reported as its own design point with one realization.
std::vector<DesignPointEnsemble> brute_force_ensemble(const ParamDistribution& dist,
                                                      std::size_t count,
                                                      const ModelParams& base,
                                                      const SimConfig& config,
                                                      double min_cinf_percent,
                                                      std::size_t max_attempts = 0);

// design_index,beta,gamma,replicate,p_inf,t_p,t_d,c_inf,accepted
void write_ensemble_csv(std::ostream& out, std::span<const DesignPointEnsemble> ensemble);
void write_ensemble_csv(const std::filesystem::path& path,
                        std::span<const DesignPointEnsemble> ensemble);
std::vector<DesignPointEnsemble> read_ensemble_csv(const std::filesystem::path& path);

// t,s,i
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);

}  // namespace klpc::sir
