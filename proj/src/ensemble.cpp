#include "klpc/ensemble.hpp"

#include <fstream>
#include <map>

#include <spdlog/spdlog.h>

#include "klpc/csv.hpp"
#include "klpc/error.hpp"
#include "klpc/parallel.hpp"

namespace klpc::sir {

double DesignPointEnsemble::acceptance_rate() const {
  return realizations.empty() ? 0.0
                              : static_cast<double>(accepted_count) /
                                    static_cast<double>(realizations.size());
}

std::vector<QoiVector> DesignPointEnsemble::accepted() const {
  std::vector<QoiVector> out;
  out.reserve(accepted_count);
  for (const auto& r : realizations)
    if (r.accepted) out.push_back(r.qoi);
  return out;
}

Eigen::MatrixXd DesignPointEnsemble::accepted_matrix() const {
  const auto rows = accepted();
  Eigen::MatrixXd m(rows.size(), 4);
  for (std::size_t k = 0; k < rows.size(); ++k) m.row(k) = rows[k].as_vector().transpose();
  return m;
}

std::vector<DesignPointEnsemble> generate_ensemble(std::span<const Rates> design,
                                                   std::size_t reps_per_point,
                                                   const ModelParams& base,
                                                   const SimConfig& config,
                                                   double min_cinf_percent) {
  EnsembleSettings settings;
  settings.reps_per_point = reps_per_point;
  settings.min_cinf_percent = min_cinf_percent;
  return generate_ensemble(design, base, config, settings);
}

std::vector<DesignPointEnsemble> generate_ensemble(std::span<const Rates> design,
                                                   const ModelParams& base,
                                                   const SimConfig& config,
                                                   const EnsembleSettings& settings) {
  if (settings.reps_per_point == 0) throw InputError("reps_per_point must be at least 1");
  config.validate();
  const std::size_t budget = settings.attempt_budget();
  const std::size_t batch = std::max<std::size_t>(1, settings.batch_size);

  std::vector<DesignPointEnsemble> out(design.size());
  for (std::size_t j = 0; j < design.size(); ++j) {
    const ModelParams params = with_rates(base, design[j]);
    params.validate();
    auto& point = out[j];
    point.theta = design[j];
    std::vector<QoiVector> results;
    for (std::size_t first = 0; first < budget && point.accepted_count < settings.reps_per_point;
         first += batch) {
      const std::size_t n = std::min(batch, budget - first);
      results.assign(n, QoiVector{});
      parallel_for(n, [&](std::size_t k) {
        Rng rng = Rng::substream(config.seed, {j, first + k});
        results[k] = extract_qoi(simulate(params, config, rng), params.population);
      });
      for (std::size_t k = 0; k < n && point.accepted_count < settings.reps_per_point; ++k) {
        const bool ok = results[k].c_inf >= settings.min_cinf_percent;
        point.realizations.push_back({first + k, results[k], ok});
        point.accepted_count += ok ? 1 : 0;
      }
    }
    if (point.accepted_count < settings.reps_per_point) {
      point.budget_exhausted = true;
      spdlog::warn("design point {}: retry budget of {} attempts exhausted with {} of {} accepted",
                   j, budget, point.accepted_count, settings.reps_per_point);
    }
  }
  return out;
}

std::vector<DesignPointEnsemble> brute_force_ensemble(const ParamDistribution& dist,
                                                      std::size_t count,
                                                      const ModelParams& base,
                                                      const SimConfig& config,
                                                      double min_cinf_percent,
                                                      std::size_t max_attempts) {
  if (count == 0) throw InputError("brute-force count must be at least 1");
  config.validate();
  dist.validate();
  const std::size_t budget = max_attempts ? max_attempts : 50 * count;
  constexpr std::size_t batch = 256;
  std::vector<DesignPointEnsemble> out;
  std::size_t accepted = 0;
  std::vector<DesignPointEnsemble> results;
  for (std::size_t first = 0; first < budget && accepted < count; first += batch) {
    const std::size_t n = std::min(batch, budget - first);
    results.assign(n, DesignPointEnsemble{});
    parallel_for(n, [&](std::size_t k) {
      Rng rng = Rng::substream(config.seed, {0x6272757465ULL, first + k});
      const Rates theta = sample_parameters(dist, 1, rng).front();
      const ModelParams params = with_rates(base, theta);
      const QoiVector q = extract_qoi(simulate(params, config, rng), params.population);
      auto& point = results[k];
      point.theta = theta;
      const bool ok = q.c_inf >= min_cinf_percent;
      point.realizations.push_back({0, q, ok});
      point.accepted_count = ok ? 1 : 0;
    });
    for (std::size_t k = 0; k < n && accepted < count; ++k) {
      accepted += results[k].accepted_count;
      out.push_back(std::move(results[k]));
    }
  }
  if (accepted < count)
    spdlog::warn("brute force: budget of {} attempts exhausted with {} of {} accepted", budget,
                 accepted, count);
  return out;
}

void write_ensemble_csv(std::ostream& out, std::span<const DesignPointEnsemble> ensemble) {
  csv::Writer w(out, {"design_index", "beta", "gamma", "replicate", "p_inf", "t_p", "t_d",
                      "c_inf", "accepted"});
  for (std::size_t j = 0; j < ensemble.size(); ++j) {
    for (const auto& r : ensemble[j].realizations) {
      w << j << ensemble[j].theta.beta << ensemble[j].theta.gamma << r.replicate << r.qoi.p_inf
        << r.qoi.t_p << r.qoi.t_d << r.qoi.c_inf << (r.accepted ? 1 : 0);
      w.end_row();
    }
  }
}

void write_ensemble_csv(const std::filesystem::path& path,
                        std::span<const DesignPointEnsemble> ensemble) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_ensemble_csv(out, ensemble);
}

std::vector<DesignPointEnsemble> read_ensemble_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t c_design = t.column("design_index"), c_beta = t.column("beta"),
                    c_gamma = t.column("gamma"), c_rep = t.column("replicate"),
                    c_p = t.column("p_inf"), c_tp = t.column("t_p"), c_td = t.column("t_d"),
                    c_c = t.column("c_inf"), c_acc = t.column("accepted");
  std::map<std::size_t, DesignPointEnsemble> points;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto j = static_cast<std::size_t>(t.number(r, c_design));
    auto& point = points[j];
    const Rates theta{t.number(r, c_beta), t.number(r, c_gamma)};
    if (point.realizations.empty()) {
      point.theta = theta;
    } else if (!(point.theta == theta)) {
      throw InputError(path.string() + ": design_index " + std::to_string(j) +
                       " has inconsistent (beta, gamma)");
    }
    Realization rz;
    rz.replicate = static_cast<std::size_t>(t.number(r, c_rep));
    rz.qoi = {t.number(r, c_p), t.number(r, c_tp), t.number(r, c_td), t.number(r, c_c)};
    rz.accepted = t.number(r, c_acc) != 0.0;
    point.accepted_count += rz.accepted ? 1 : 0;
    point.realizations.push_back(rz);
  }
  std::vector<DesignPointEnsemble> out;
  out.reserve(points.size());
  std::size_t expected = 0;
  for (auto& [j, point] : points) {
    if (j != expected++)
      throw InputError(path.string() + ": design indices are not contiguous from 0");
    out.push_back(std::move(point));
  }
  return out;
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  csv::Writer w(out, {"t", "s", "i"});
  for (std::size_t k = 0; k < traj.size(); ++k) {
    w << traj.times[k] << traj.s[k] << traj.i[k];
    w.end_row();
  }
}

}  // namespace klpc::sir
