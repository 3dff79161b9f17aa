#include "klpc/emulator.hpp"

#include <algorithm>
#include <ostream>

#include <spdlog/spdlog.h>

#include "klpc/csv.hpp"
#include "klpc/error.hpp"
#include "klpc/kde.hpp"
#include "klpc/parallel.hpp"
#include "klpc/stats.hpp"

namespace klpc {

namespace {
// Rethrows library errors with a prefix, keeping their type.
template <class F>
void with_context(const std::string& context, F&& f) {
  try {
    f();
  } catch (const FarFromSupportError& e) {
    throw FarFromSupportError(context + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(context + ": " + e.what());
  } catch (const DegenerateDimensionError& e) {
    throw DegenerateDimensionError(e.dimension(), context + ": " + e.what());
  } catch (const DegenerateError& e) {
    throw DegenerateError(context + ": " + e.what());
  } catch (const BoundaryError& e) {
    throw BoundaryError(context + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(context + ": " + e.what());
  }
}

bool outside_hull(const Eigen::MatrixXd& scaled) {
  return (scaled.array() < -1e-9).any() || (scaled.array() > 1.0 + 1e-9).any();
}

Eigen::VectorXd column_variance(const Eigen::MatrixXd& x, Eigen::VectorXd& se) {
  Eigen::VectorXd var(x.cols());
  se.resize(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const Eigen::VectorXd col = x.col(c);
    std::span<const double> v(col.data(), static_cast<std::size_t>(col.size()));
    // A held-fixed source gives identical rows; report exactly zero.
    if ((col.array() == col[0]).all()) {
      var[c] = se[c] = 0.0;
      continue;
    }
    var[c] = stats::variance(v);
    se[c] = stats::variance_standard_error(v);
  }
  return var;
}
}  // namespace

EmulatorModel::EmulatorModel(KlBasis kl, Eigen::MatrixXd design, std::vector<PcExpansion> pc,
                             gp::GpModel gp, std::vector<gp::Hyperparams> chain,
                             nlohmann::json meta)
    : kl_(std::move(kl)),
      design_(std::move(design)),
      pc_(std::move(pc)),
      gp_(std::move(gp)),
      chain_(std::move(chain)),
      meta_(std::move(meta)) {
  const std::size_t m = design_points(), p = inputs(), n = modes();
  if (m < 1 || p < 1) throw InputError("emulator: empty design");
  if (pc_.size() != m)
    throw InputError("emulator: " + std::to_string(pc_.size()) + " PC expansions for " +
                     std::to_string(m) + " design points");
  const std::size_t k = pc_.front().terms();
  for (std::size_t j = 0; j < m; ++j) {
    if (pc_[j].dim() != n)
      throw InputError("emulator: PC dimension " + std::to_string(pc_[j].dim()) + " at design point " +
                       std::to_string(j) + " differs from KL truncation " + std::to_string(n));
    if (pc_[j].terms() != k) throw InputError("emulator: PC term counts differ across design points");
  }
  if (gp_.rows() != n * k)
    throw InputError("emulator: GP models " + std::to_string(gp_.rows()) + " coefficients, expected " +
                     std::to_string(n * k));
  const auto pc_count = static_cast<Eigen::Index>(gp_.basis.components());
  if (static_cast<std::size_t>(gp_.design_scaled.rows()) != m ||
      static_cast<std::size_t>(gp_.design_scaled.cols()) != p ||
      static_cast<std::size_t>(gp_.scaling.lo.size()) != p || gp_.center.size() != gp_.basis.basis.rows() ||
      gp_.basis.weights.rows() != pc_count || static_cast<std::size_t>(gp_.basis.weights.cols()) != m)
    throw InputError("emulator: GP state inconsistent with the design");
  auto check_hyper = [&](const gp::Hyperparams& h) {
    if (h.lambda_w.size() != pc_count || h.rho.rows() != pc_count ||
        static_cast<std::size_t>(h.rho.cols()) != p || !h.valid())
      throw InputError("emulator: GP hyperparameters inconsistent with the basis");
  };
  check_hyper(gp_.hyper);
  for (const auto& h : chain_) check_hyper(h);
  indices_ = pc_.front().indices();
}

Eigen::MatrixXd EmulatorModel::unstack(const Eigen::Ref<const Eigen::VectorXd>& c) const {
  const auto k = static_cast<Eigen::Index>(terms()), n = static_cast<Eigen::Index>(modes());
  if (c.size() != k * n) throw InputError("coefficient vector size mismatch");
  Eigen::MatrixXd out(k, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out(j, i) = c[i * k + j];
  return out;
}

Eigen::VectorXd EmulatorModel::stack(const Eigen::MatrixXd& coefficients) {
  const Eigen::Index k = coefficients.rows(), n = coefficients.cols();
  Eigen::VectorXd out(k * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out[i * k + j] = coefficients(j, i);
  return out;
}

Eigen::VectorXd EmulatorModel::evaluate(const Eigen::MatrixXd& coefficients,
                                        const Eigen::Ref<const Eigen::VectorXd>& zeta) const {
  return kl_.reconstruct(evaluate_expansion(indices_, coefficients, zeta));
}

Eigen::VectorXd EmulatorModel::zeta_mean(const Eigen::MatrixXd& coefficients) const {
  return kl_.reconstruct(coefficients.row(0).transpose());
}

TrainResult train(const Eigen::MatrixXd& design, const std::vector<Eigen::MatrixXd>& samples,
                  const TrainConfig& config) {
  const auto m = static_cast<std::size_t>(design.rows());
  if (m < 2) throw InputError("train needs at least 2 design points");
  if (samples.size() != m)
    throw InputError("train: " + std::to_string(samples.size()) + " sample sets for " +
                     std::to_string(m) + " design points");
  const Eigen::Index d = samples.front().cols();
  Eigen::Index total = 0;
  for (std::size_t j = 0; j < m; ++j) {
    if (samples[j].cols() != d) throw InputError("train: output dimension differs at design point " + std::to_string(j));
    if (static_cast<std::size_t>(samples[j].rows()) < config.min_realizations)
      throw InputError("train: design point " + std::to_string(j) + " has " +
                       std::to_string(samples[j].rows()) + " realizations, need at least " +
                       std::to_string(config.min_realizations));
    total += samples[j].rows();
  }
  Eigen::MatrixXd pooled(total, d);
  for (Eigen::Index row = 0; const auto& s : samples) {
    pooled.middleRows(row, s.rows()) = s;
    row += s.rows();
  }
  const KlBasis kl = compute_kl(pooled, config.kl_rule);
  spdlog::info("KL: {} of {} modes retained", kl.truncation(), kl.dim());

  TrainResult out;
  out.projections.resize(m);
  parallel_for(m, [&](std::size_t j) {
    with_context("design point " + std::to_string(j), [&] {
      const KdeModel kde = KdeModel::fit(kl.project_rows(samples[j]));
      Rng rng = Rng::substream(config.seed, {0x7063ULL, j});
      out.projections[j] = project_coefficients(kde, config.pc, rng);
    });
  });

  const std::size_t terms = config.pc.terms;
  Eigen::MatrixXd values(static_cast<Eigen::Index>(kl.truncation() * terms), static_cast<Eigen::Index>(m));
  std::vector<PcExpansion> pcs;
  for (std::size_t j = 0; j < m; ++j) {
    values.col(static_cast<Eigen::Index>(j)) = EmulatorModel::stack(out.projections[j].expansion.coefficients());
    pcs.push_back(out.projections[j].expansion);
  }

  gp::GpSettings gps = config.gp;
  gps.mcmc.seed = Rng::substream(config.seed, {0x6770ULL}).next();
  gp::GpFit fit;
  with_context("GP fit", [&] { fit = gp::fit(values, design, gps); });
  spdlog::info("GP: {} components, MAP log posterior {}", fit.model.basis.components(),
               fit.mcmc.map_log_post);

  nlohmann::json meta;
  meta["seed"] = config.seed;
  meta["kl"] = {{"rule", config.kl_rule.kind == TruncationRule::Kind::energy ? "energy" : "count"},
                {"energy", config.kl_rule.energy},
                {"count", config.kl_rule.count}};
  meta["pc"] = {{"terms", terms},
                {"mc_count", config.pc.mc_count},
                {"partitions", config.pc.partitions},
                {"latin_hypercube", config.pc.latin_hypercube}};
  meta["gp"] = {{"energy", gps.energy},
                {"mcmc_seed", gps.mcmc.seed},
                {"iterations", gps.mcmc.iterations},
                {"burn_in", gps.mcmc.burn_in},
                {"step_log_lambda", gps.mcmc.step_log_lambda},
                {"step_logit_rho", gps.mcmc.step_logit_rho},
                {"priors", {gps.priors.a_w, gps.priors.b_w, gps.priors.a_rho, gps.priors.b_rho,
                            gps.priors.a_delta, gps.priors.b_delta}},
                {"map_log_post", fit.mcmc.map_log_post},
                {"acceptance", fit.mcmc.acceptance}};
  std::vector<std::size_t> counts;
  for (const auto& s : samples) counts.push_back(static_cast<std::size_t>(s.rows()));
  meta["realizations"] = counts;

  out.model = EmulatorModel(kl, design, std::move(pcs), std::move(fit.model), fit.mcmc.chain, std::move(meta));
  out.mcmc = std::move(fit.mcmc);
  return out;
}

Eigen::MatrixXd EmulatorDraws::clamped() const {
  if (raw.cols() != static_cast<Eigen::Index>(sir::QoiVector::size)) return raw;
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index r = 0; r < raw.rows(); ++r)
    out.row(r) = sir::QoiVector::from(raw.row(r).transpose()).clamped().as_vector().transpose();
  return out;
}

EmulatorDraws sample_at(const EmulatorModel& model, const Eigen::Ref<const Eigen::VectorXd>& theta,
                        std::size_t n_zeta, std::size_t n_eta, Rng& rng, const SampleOptions& options) {
  if (static_cast<std::size_t>(theta.size()) != model.inputs()) throw InputError("sample_at: theta dimension mismatch");
  const Eigen::MatrixXd theta_row = theta.transpose();
  const Eigen::MatrixXd scaled = model.gp().scaling.apply(theta_row);
  if (options.warn_out_of_hull && outside_hull(scaled))
    spdlog::warn("sample_at: theta outside the design hull; GP variance will be inflated");

  const std::size_t modes = model.modes();
  const auto& gpm = model.gp();
  std::vector<Eigen::MatrixXd> coeffs(n_eta);
  if (options.zero_coefficients) {
    for (auto& c : coeffs)
      c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(model.terms()), static_cast<Eigen::Index>(modes));
  } else if (options.full_chain && !model.chain().empty()) {
    for (auto& c : coeffs) {
      const auto& h = model.chain()[rng.below(model.chain().size())];
      const gp::Predictive pred = gpm.predict(theta_row, h);
      const Eigen::MatrixXd stacked =
          options.fix_eta ? gp::coefficients_from_weights(pred.mean, 1, gpm.basis, gpm.center, gpm.scale)
                          : gp::draw_coefficients(pred, gpm.basis, gpm.center, gpm.scale, 1, rng).front();
      c = model.unstack(stacked.col(0));
    }
  } else {
    const gp::Predictive pred = gpm.predict(theta_row);
    if (options.fix_eta) {
      const Eigen::MatrixXd stacked = gp::coefficients_from_weights(pred.mean, 1, gpm.basis, gpm.center, gpm.scale);
      for (auto& c : coeffs) c = model.unstack(stacked.col(0));
    } else {
      const auto draws = gp::draw_coefficients(pred, gpm.basis, gpm.center, gpm.scale, n_eta, rng);
      for (std::size_t e = 0; e < n_eta; ++e) coeffs[e] = model.unstack(draws[e].col(0));
    }
  }

  EmulatorDraws out;
  const auto rows = static_cast<Eigen::Index>(n_eta * n_zeta);
  out.theta = theta_row.replicate(rows, 1);
  out.raw.resize(rows, static_cast<Eigen::Index>(model.output_dim()));
  out.theta_index.assign(static_cast<std::size_t>(rows), 0);
  out.eta_index.reserve(static_cast<std::size_t>(rows));
  out.zeta_index.reserve(static_cast<std::size_t>(rows));
  Eigen::VectorXd zeta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(modes));
  Eigen::Index row = 0;
  for (std::size_t e = 0; e < n_eta; ++e) {
    for (std::size_t z = 0; z < n_zeta; ++z, ++row) {
      if (!options.fix_zeta)
        for (Eigen::Index n = 0; n < zeta.size(); ++n) zeta[n] = rng.normal();
      out.raw.row(row) = model.evaluate(coeffs[e], zeta).transpose();
      out.eta_index.push_back(e);
      out.zeta_index.push_back(z);
    }
  }
  return out;
}

void UncertaintyBudget::validate() const {
  if (n_theta < 1 || n_zeta < 1 || n_eta < 1) throw InputError("uncertainty budget entries must be >= 1");
}

Eigen::VectorXd median_theta(const sir::ParamDistribution& dist) {
  return Eigen::Vector2d(dist.quantile_beta(0.5), dist.quantile_gamma(0.5));
}

EmulatorDraws sample_full(const EmulatorModel& model, const sir::ParamDistribution& dist,
                          const UncertaintyBudget& budget, std::uint64_t seed,
                          const SampleOptions& options) {
  budget.validate();
  dist.validate();
  if (model.inputs() != 2) throw InputError("sample_full: model inputs must be (beta, gamma)");
  const Eigen::VectorXd median = median_theta(dist);
  std::vector<EmulatorDraws> parts(budget.n_theta);
  std::vector<char> outside(budget.n_theta, 0);
  SampleOptions quiet = options;
  quiet.warn_out_of_hull = false;
  parallel_for(budget.n_theta, [&](std::size_t t) {
    Rng rng = Rng::substream(seed, {t});
    Eigen::VectorXd theta = median;
    if (!options.fix_theta) {
      const sir::Rates r = sir::sample_parameters(dist, 1, rng).front();
      theta = Eigen::Vector2d(r.beta, r.gamma);
    }
    outside[t] = outside_hull(model.gp().scaling.apply(theta.transpose()));
    parts[t] = sample_at(model, theta, budget.n_zeta, budget.n_eta, rng, quiet);
  });
  const auto n_out = static_cast<std::size_t>(std::count(outside.begin(), outside.end(), 1));
  if (n_out > 0 && options.warn_out_of_hull)
    spdlog::warn("sample_full: {} of {} theta draws fall outside the design hull; GP variance is inflated there",
                 n_out, budget.n_theta);
  EmulatorDraws out;
  const auto per = static_cast<Eigen::Index>(budget.n_zeta * budget.n_eta);
  const auto rows = per * static_cast<Eigen::Index>(budget.n_theta);
  out.theta.resize(rows, 2);
  out.raw.resize(rows, static_cast<Eigen::Index>(model.output_dim()));
  for (std::size_t t = 0; t < budget.n_theta; ++t) {
    const auto at = static_cast<Eigen::Index>(t) * per;
    out.theta.middleRows(at, per) = parts[t].theta;
    out.raw.middleRows(at, per) = parts[t].raw;
    out.theta_index.insert(out.theta_index.end(), static_cast<std::size_t>(per), t);
    out.eta_index.insert(out.eta_index.end(), parts[t].eta_index.begin(), parts[t].eta_index.end());
    out.zeta_index.insert(out.zeta_index.end(), parts[t].zeta_index.begin(), parts[t].zeta_index.end());
  }
  return out;
}

VarianceComponents variance_decomposition(const EmulatorModel& model,
                                          const sir::ParamDistribution& dist,
                                          const UncertaintyBudget& budget, std::uint64_t seed,
                                          const SampleOptions& hooks) {
  budget.validate();
  if (budget.n_theta < 100 || budget.n_zeta < 100 || budget.n_eta < 100)
    throw InputError("variance_decomposition needs at least 100 draws per source");
  const Eigen::VectorXd median = median_theta(dist);
  const auto d = static_cast<Eigen::Index>(model.output_dim());
  VarianceComponents out;

  SampleOptions base = hooks;
  const EmulatorDraws all = sample_full(model, dist, budget, Rng::substream(seed, {1}).next(), base);
  out.total = column_variance(all.raw, out.total_se);

  SampleOptions intrinsic = hooks;
  intrinsic.fix_eta = true;
  Rng r_int = Rng::substream(seed, {2});
  out.intrinsic = column_variance(sample_at(model, median, budget.n_zeta, 1, r_int, intrinsic).raw,
                                  out.intrinsic_se);

  // Conditional means over zeta come from the constant PC term alone, with
  // eta at the GP predictive mean.
  const auto& gpm = model.gp();
  auto conditional_mean = [&](const Eigen::MatrixXd& stacked) -> Eigen::VectorXd {
    if (hooks.zero_coefficients) return model.kl().mean();
    return model.zeta_mean(model.unstack(stacked.col(0)));
  };
  Eigen::MatrixXd par(static_cast<Eigen::Index>(budget.n_theta), d);
  parallel_for(budget.n_theta, [&](std::size_t t) {
    Rng rng = Rng::substream(seed, {3, t});
    const sir::Rates r = sir::sample_parameters(dist, 1, rng).front();
    const gp::Predictive pred = gpm.predict(Eigen::RowVector2d(r.beta, r.gamma));
    par.row(static_cast<Eigen::Index>(t)) =
        conditional_mean(gp::coefficients_from_weights(pred.mean, 1, gpm.basis, gpm.center, gpm.scale))
            .transpose();
  });
  out.parametric = column_variance(par, out.parametric_se);

  Eigen::MatrixXd emu(static_cast<Eigen::Index>(budget.n_eta), d);
  Rng r_emu = Rng::substream(seed, {4});
  const gp::Predictive pred = gpm.predict(median.transpose());
  const auto draws = hooks.fix_eta
                         ? std::vector<Eigen::MatrixXd>(budget.n_eta, gp::coefficients_from_weights(
                                                                          pred.mean, 1, gpm.basis,
                                                                          gpm.center, gpm.scale))
                         : gp::draw_coefficients(pred, gpm.basis, gpm.center, gpm.scale, budget.n_eta, r_emu);
  for (std::size_t e = 0; e < budget.n_eta; ++e)
    emu.row(static_cast<Eigen::Index>(e)) = conditional_mean(draws[e]).transpose();
  out.emulator = column_variance(emu, out.emulator_se);
  return out;
}

void write_draws_csv(std::ostream& out, const EmulatorDraws& draws) {
  if (draws.theta.cols() != 2 || draws.raw.cols() != 4)
    throw InputError("draws CSV needs (beta, gamma) inputs and four QOI");
  csv::Writer w(out, {"design_index", "beta", "gamma", "replicate", "p_inf", "t_p", "t_d", "c_inf",
                      "accepted", "theta_index", "eta_index", "zeta_index"});
  const Eigen::MatrixXd q = draws.clamped();
  std::size_t replicate = 0;
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    const auto row = static_cast<std::size_t>(r);
    if (r > 0 && draws.theta_index[row] != draws.theta_index[row - 1]) replicate = 0;
    w << draws.theta_index[row] << draws.theta(r, 0) << draws.theta(r, 1) << replicate++;
    for (Eigen::Index c = 0; c < 4; ++c) w << q(r, c);
    w << std::size_t{1} << draws.theta_index[row] << draws.eta_index[row] << draws.zeta_index[row];
    w.end_row();
  }
}

}  // namespace klpc
