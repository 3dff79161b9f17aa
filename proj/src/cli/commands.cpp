#include "klpc/cli/commands.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "klpc/cli/config.hpp"
#include "klpc/csv.hpp"
#include "klpc/emulator.hpp"
#include "klpc/ensemble.hpp"
#include "klpc/kde.hpp"
#include "klpc/parallel.hpp"
#include "klpc/stats.hpp"

namespace klpc::cli {

namespace {

constexpr const char* tool_version = "1.0.0";

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
  std::string output;
  bool dry_run = false;
  bool fix_theta = false, fix_zeta = false, fix_eta = false;
  std::string ensemble;
  std::string model;
  std::optional<std::size_t> n_theta, n_zeta, n_eta;
  std::optional<std::size_t> brute_force;
  std::optional<std::size_t> at_design;
  bool null_compare = false;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return fnv1a(ss.str());
}

// Run record written next to the outputs of every command.
class Manifest {
 public:
  Manifest(std::string command, const ExperimentConfig& cfg, const std::filesystem::path& dir)
      : dir_(dir), start_(Clock::now()) {
    doc_["command"] = std::move(command);
    doc_["tool_version"] = tool_version;
    doc_["model_format"] = model_format_version;
    doc_["config_source"] = cfg.source;
    doc_["config_hash"] = hex64(fnv1a(cfg.text));
    doc_["threads"] = thread_count();
    doc_["seeds"] = nlohmann::json::object();
    doc_["timings_seconds"] = nlohmann::json::object();
    doc_["outputs"] = nlohmann::json::object();
  }
  void seed(const std::string& name, std::uint64_t v) { doc_["seeds"][name] = v; }
  void input(const std::string& name, const std::filesystem::path& path) {
    doc_["inputs"][name] = {{"path", path.string()}, {"fnv1a", hex64(file_hash(path))}};
  }
  void output(const std::filesystem::path& path) {
    doc_["outputs"][std::filesystem::relative(path, dir_).generic_string()] = hex64(file_hash(path));
  }
  void timing(const std::string& stage, double s) { doc_["timings_seconds"][stage] = s; }
  nlohmann::json& doc() { return doc_; }
  void write() {
    doc_["timings_seconds"]["total"] = seconds_since(start_);
    const auto path = dir_ / ("manifest_" + doc_["command"].get<std::string>() + ".json");
    std::ofstream out(path);
    out << doc_.dump(2) << "\n";
    if (!out) throw Error("failed writing " + path.string());
  }

 private:
  std::filesystem::path dir_;
  Clock::time_point start_;
  nlohmann::json doc_;
};

std::uint64_t require_seed(const Options& opt, const std::optional<std::uint64_t>& cfg_seed,
                           const char* name, const ExperimentConfig& cfg) {
  if (opt.seed) return *opt.seed;
  if (cfg_seed) return *cfg_seed;
  throw ConfigError(cfg.source + ": seeds." + name + ": missing; set it under [seeds] or pass --seed");
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  return out;
}

const char* design_kind(const DesignSpec& d) {
  switch (d.kind) {
    case DesignSpec::Kind::grid: return "grid";
    case DesignSpec::Kind::lhs: return "lhs";
    case DesignSpec::Kind::explicit_list: return "explicit";
  }
  return "?";
}

void print_plan(const ExperimentConfig& cfg, const std::string& command, std::uint64_t seed,
                const std::vector<sir::Rates>* design) {
  std::cout << "plan: " << command << "\n";
  std::cout << "  config:      " << cfg.source << "\n";
  std::cout << "  output:      " << cfg.output.string() << "\n";
  std::cout << "  seed:        " << seed << "\n";
  std::cout << "  threads:     " << thread_count() << "\n";
  std::cout << fmt::format("  model:       N={} S0={} I0={}\n", cfg.model.population, cfg.model.s0, cfg.model.i0);
  std::cout << fmt::format("  inputs:      beta ~ LN({}, {}), gamma ~ LN({}, {}) [{} scale]\n", cfg.dist.mu_beta,
                           cfg.dist.sigma2_beta, cfg.dist.mu_gamma, cfg.dist.sigma2_gamma,
                           cfg.dist.scale == sir::LognormalScale::log ? "log" : "natural");
  std::cout << fmt::format("  simulation:  dt={} t_max={} extinction<{}\n", cfg.sim.dt, cfg.sim.t_max,
                           cfg.sim.extinction_threshold);
  if (design) {
    std::cout << "  design:      " << design_kind(cfg.design) << ", " << design->size() << " points\n";
    for (std::size_t j = 0; j < design->size(); ++j)
      std::cout << fmt::format("    {:3d}  beta={:.6f}  gamma={:.6f}\n", j, (*design)[j].beta, (*design)[j].gamma);
  }
  std::cout << fmt::format("  ensemble:    {} accepted per point, c_inf >= {}%, attempts <= {}\n",
                           cfg.ensemble.reps_per_point, cfg.ensemble.min_cinf_percent,
                           cfg.ensemble.attempt_budget());
  std::cout << fmt::format("  pc:          {} terms, mc_count={}, partitions={}{}\n", cfg.train.pc.terms,
                           cfg.train.pc.mc_count, cfg.train.pc.partitions,
                           cfg.train.pc.latin_hypercube ? ", latin hypercube" : "");
  std::cout << fmt::format("  gp:          energy={} iterations={} burn_in={}\n", cfg.train.gp.energy,
                           cfg.train.gp.mcmc.iterations, cfg.train.gp.mcmc.burn_in);
  std::cout << fmt::format("  sampling:    n_theta={} n_zeta={} n_eta={}\n", cfg.sampling.n_theta,
                           cfg.sampling.n_zeta, cfg.sampling.n_eta);
}

void write_design_csv(const std::filesystem::path& path, const std::vector<sir::Rates>& design) {
  auto out = open_output(path);
  csv::Writer w(out, {"design_index", "beta", "gamma"});
  for (std::size_t j = 0; j < design.size(); ++j) {
    w << j << design[j].beta << design[j].gamma;
    w.end_row();
  }
}

std::filesystem::path output_dir(const ExperimentConfig& cfg, const Options& opt) {
  std::filesystem::path dir = opt.output.empty() ? cfg.output : std::filesystem::path(opt.output);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<std::string> qoi_names() {
  return {sir::QoiVector::names.begin(), sir::QoiVector::names.end()};
}

// KDE grids of every QOI and QOI pair.
void write_marginal_grids(const std::filesystem::path& dir, const Eigen::MatrixXd& values,
                          const ExperimentConfig& cfg, Manifest& manifest) {
  std::filesystem::create_directories(dir);
  const auto names = qoi_names();
  const auto stride = static_cast<Eigen::Index>((values.rows() + cfg.grid_max_points - 1) / cfg.grid_max_points);
  Eigen::MatrixXd sub((values.rows() + stride - 1) / stride, values.cols());
  for (Eigen::Index r = 0, k = 0; r < values.rows(); r += stride, ++k) sub.row(k) = values.row(r);

  auto axis = [](const Eigen::VectorXd& x, double h, std::size_t n) {
    const double lo = x.minCoeff() - 4.0 * h, hi = x.maxCoeff() + 4.0 * h;
    Eigen::VectorXd g(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) g[static_cast<Eigen::Index>(i)] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return g;
  };
  for (Eigen::Index a = 0; a < sub.cols(); ++a) {
    try {
      const KdeModel kde = KdeModel::fit(sub.col(a));
      const Eigen::VectorXd g = axis(sub.col(a), kde.bandwidth()[0], cfg.grid_1d);
      const auto path = dir / ("marginal_" + names[static_cast<std::size_t>(a)] + ".csv");
      auto out = open_output(path);
      csv::Writer w(out, {"x", "density"});
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        w << g[i] << kde.pdf(Eigen::VectorXd::Constant(1, g[i]));
        w.end_row();
      }
      out.close();
      manifest.output(path);
    } catch (const DegenerateError& e) {
      spdlog::warn("skipping marginal of {}: {}", names[static_cast<std::size_t>(a)], e.what());
    }
  }
  for (Eigen::Index a = 0; a < sub.cols(); ++a) {
    for (Eigen::Index b = a + 1; b < sub.cols(); ++b) {
      try {
        Eigen::MatrixXd pair(sub.rows(), 2);
        pair << sub.col(a), sub.col(b);
        const KdeModel kde = KdeModel::fit(pair);
        const Eigen::VectorXd gx = axis(pair.col(0), kde.bandwidth()[0], cfg.grid_2d);
        const Eigen::VectorXd gy = axis(pair.col(1), kde.bandwidth()[1], cfg.grid_2d);
        const auto path = dir / ("marginal_" + names[static_cast<std::size_t>(a)] + "_" +
                                 names[static_cast<std::size_t>(b)] + ".csv");
        std::vector<double> dens(static_cast<std::size_t>(gx.size() * gy.size()));
        parallel_for(static_cast<std::size_t>(gx.size()), [&](std::size_t i) {
          for (Eigen::Index j = 0; j < gy.size(); ++j)
            dens[i * static_cast<std::size_t>(gy.size()) + static_cast<std::size_t>(j)] =
                kde.pdf(Eigen::Vector2d(gx[static_cast<Eigen::Index>(i)], gy[j]));
        });
        auto out = open_output(path);
        csv::Writer w(out, {"x", "y", "density"});
        for (Eigen::Index i = 0; i < gx.size(); ++i)
          for (Eigen::Index j = 0; j < gy.size(); ++j) {
            w << gx[i] << gy[j] << dens[static_cast<std::size_t>(i * gy.size() + j)];
            w.end_row();
          }
        out.close();
        manifest.output(path);
      } catch (const DegenerateError& e) {
        spdlog::warn("skipping joint marginal of {}/{}: {}", names[static_cast<std::size_t>(a)],
                     names[static_cast<std::size_t>(b)], e.what());
      }
    }
  }
}

void print_summary(const std::string& title, const Eigen::MatrixXd& values) {
  std::cout << title << " (" << values.rows() << " draws)\n";
  std::cout << fmt::format("  {:<6} {:>12} {:>12} {:>12} {:>12} {:>12}\n", "qoi", "mean", "std", "q05", "q50", "q95");
  const auto names = qoi_names();
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    const Eigen::VectorXd col = values.col(c);
    std::span<const double> v(col.data(), static_cast<std::size_t>(col.size()));
    std::cout << fmt::format("  {:<6} {:>12.5g} {:>12.5g} {:>12.5g} {:>12.5g} {:>12.5g}\n",
                             names[static_cast<std::size_t>(c)], stats::mean(v),
                             values.rows() > 1 ? stats::stddev(v) : 0.0, stats::quantile(v, 0.05),
                             stats::quantile(v, 0.5), stats::quantile(v, 0.95));
  }
}

int cmd_simulate(const ExperimentConfig& cfg, const Options& opt) {
  const std::uint64_t seed = require_seed(opt, cfg.seeds.simulate, "simulate", cfg);
  const auto design = resolve_design(cfg, seed);
  if (opt.dry_run) {
    print_plan(cfg, "simulate", seed, &design);
    return 0;
  }
  const auto dir = output_dir(cfg, opt);
  Manifest manifest("simulate", cfg, dir);
  manifest.seed("simulate", seed);
  sir::SimConfig sim = cfg.sim;
  sim.seed = seed;
  auto t0 = Clock::now();
  const auto ens = sir::generate_ensemble(design, cfg.model, sim, cfg.ensemble);
  manifest.timing("simulate", seconds_since(t0));

  write_design_csv(dir / "design.csv", design);
  manifest.output(dir / "design.csv");
  sir::write_ensemble_csv(dir / "ensemble.csv", ens);
  manifest.output(dir / "ensemble.csv");
  nlohmann::json points = nlohmann::json::array();
  for (std::size_t j = 0; j < ens.size(); ++j) {
    points.push_back({{"attempts", ens[j].attempts()},
                      {"accepted", ens[j].accepted_count},
                      {"budget_exhausted", ens[j].budget_exhausted}});
    std::cout << fmt::format("design {:3d}: beta={:.6f} gamma={:.6f} accepted {}/{} ({:.1f}%)\n", j,
                             ens[j].theta.beta, ens[j].theta.gamma, ens[j].accepted_count,
                             ens[j].attempts(), 100.0 * ens[j].acceptance_rate());
  }
  manifest.doc()["design_points"] = points;
  manifest.write();
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const Options& opt) {
  const std::uint64_t seed = require_seed(opt, cfg.seeds.train, "train", cfg);
  const auto dir_guess = opt.output.empty() ? cfg.output : std::filesystem::path(opt.output);
  const std::filesystem::path ens_path = opt.ensemble.empty() ? dir_guess / "ensemble.csv" : std::filesystem::path(opt.ensemble);
  if (opt.dry_run) {
    print_plan(cfg, "train", seed, nullptr);
    std::cout << "  ensemble:    " << ens_path.string() << "\n";
    return 0;
  }
  const auto ens = sir::read_ensemble_csv(ens_path);
  if (cfg.design.kind != DesignSpec::Kind::lhs || cfg.seeds.simulate) {
    const auto expected = resolve_design(cfg, cfg.seeds.simulate.value_or(0));
    if (expected.size() != ens.size())
      throw ConfigError(ens_path.string() + ": has " + std::to_string(ens.size()) +
                        " design points but the config design has " + std::to_string(expected.size()));
    for (std::size_t j = 0; j < ens.size(); ++j) {
      const auto& a = ens[j].theta;
      const auto& b = expected[j];
      if (std::abs(a.beta - b.beta) > 1e-9 * std::abs(b.beta) || std::abs(a.gamma - b.gamma) > 1e-9 * std::abs(b.gamma))
        throw ConfigError(ens_path.string() + ": design point " + std::to_string(j) +
                          " does not match the config design");
    }
  }
  const auto dir = output_dir(cfg, opt);
  Manifest manifest("train", cfg, dir);
  manifest.seed("train", seed);
  manifest.input("ensemble", ens_path);

  Eigen::MatrixXd design(static_cast<Eigen::Index>(ens.size()), 2);
  std::vector<Eigen::MatrixXd> samples;
  for (std::size_t j = 0; j < ens.size(); ++j) {
    design.row(static_cast<Eigen::Index>(j)) << ens[j].theta.beta, ens[j].theta.gamma;
    samples.push_back(ens[j].accepted_matrix());
  }
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  auto t0 = Clock::now();
  const TrainResult result = train(design, samples, tc);
  manifest.timing("train", seconds_since(t0));

  const auto model_path = dir / "model.klpcgp";
  save_model(result.model, model_path);
  manifest.output(model_path);
  {
    auto out = open_output(dir / "mcmc_chain.csv");
    gp::write_chain_csv(out, result.mcmc);
  }
  manifest.output(dir / "mcmc_chain.csv");
  {
    auto out = open_output(dir / "kl_spectrum.csv");
    csv::Writer w(out, {"n", "lambda_n"});
    const auto& ev = result.model.kl().eigenvalues();
    for (Eigen::Index n = 0; n < ev.size(); ++n) {
      w << static_cast<std::size_t>(n + 1) << ev[n];
      w.end_row();
    }
  }
  manifest.output(dir / "kl_spectrum.csv");
  std::filesystem::create_directories(dir / "pc");
  nlohmann::json warnings = nlohmann::json::array();
  for (std::size_t j = 0; j < result.projections.size(); ++j) {
    const auto path = dir / "pc" / ("pc_coefficients_" + std::to_string(j) + ".csv");
    auto out = open_output(path);
    write_coefficients_csv(out, result.projections[j].expansion);
    out.close();
    manifest.output(path);
    for (const auto& w : result.projections[j].warnings) warnings.push_back("design point " + std::to_string(j) + ": " + w);
  }
  manifest.doc()["kl_modes"] = result.model.modes();
  manifest.doc()["gp_components"] = result.model.gp().basis.components();
  manifest.doc()["mcmc_acceptance"] = nlohmann::json::object();
  for (std::size_t c = 0; c < result.mcmc.acceptance.size(); ++c)
    manifest.doc()["mcmc_acceptance"][result.mcmc.coordinate_names[c]] = result.mcmc.acceptance[c];
  manifest.doc()["pc_warnings"] = warnings;
  manifest.write();

  std::cout << fmt::format("KL: {} of {} modes, eigenvalues", result.model.modes(), result.model.output_dim());
  for (Eigen::Index n = 0; n < result.model.kl().eigenvalues().size(); ++n)
    std::cout << " " << fmt::format("{:.4g}", result.model.kl().eigenvalues()[n]);
  std::cout << fmt::format("\nGP: {} components, MAP log posterior {:.4f}\n", result.model.gp().basis.components(),
                           result.mcmc.map_log_post);
  for (std::size_t c = 0; c < result.mcmc.acceptance.size(); ++c)
    std::cout << fmt::format("  acceptance {:<14} {:.3f}\n", result.mcmc.coordinate_names[c], result.mcmc.acceptance[c]);
  std::cout << "model written to " << model_path.string() << "\n";
  return 0;
}

std::filesystem::path model_path(const ExperimentConfig& cfg, const Options& opt) {
  if (!opt.model.empty()) return opt.model;
  return (opt.output.empty() ? cfg.output : std::filesystem::path(opt.output)) / "model.klpcgp";
}

UncertaintyBudget sampling_budget(const ExperimentConfig& cfg, const Options& opt) {
  UncertaintyBudget b = cfg.sampling;
  if (opt.n_theta) b.n_theta = *opt.n_theta;
  if (opt.n_zeta) b.n_zeta = *opt.n_zeta;
  if (opt.n_eta) b.n_eta = *opt.n_eta;
  b.validate();
  return b;
}

SampleOptions sample_options(const ExperimentConfig& cfg, const Options& opt) {
  SampleOptions s;
  s.fix_theta = opt.fix_theta;
  s.fix_zeta = opt.fix_zeta;
  s.fix_eta = opt.fix_eta;
  s.full_chain = cfg.full_chain;
  return s;
}

int cmd_sample(const ExperimentConfig& cfg, const Options& opt) {
  const std::uint64_t seed = require_seed(opt, cfg.seeds.sample, "sample", cfg);
  const auto mpath = model_path(cfg, opt);
  const auto budget = sampling_budget(cfg, opt);
  if (opt.dry_run) {
    print_plan(cfg, "sample", seed, nullptr);
    std::cout << "  model:       " << mpath.string() << "\n";
    std::cout << fmt::format("  draws:       {} = {} x {} x {}\n", budget.n_theta * budget.n_eta * budget.n_zeta,
                             budget.n_theta, budget.n_eta, budget.n_zeta);
    return 0;
  }
  const EmulatorModel model = load_model(mpath);
  const auto dir = output_dir(cfg, opt);
  Manifest manifest("sample", cfg, dir);
  manifest.seed("sample", seed);
  manifest.input("model", mpath);
  manifest.doc()["budget"] = {{"n_theta", budget.n_theta}, {"n_zeta", budget.n_zeta}, {"n_eta", budget.n_eta}};
  manifest.doc()["fixed"] = {{"theta", opt.fix_theta}, {"zeta", opt.fix_zeta}, {"eta", opt.fix_eta}};
  auto t0 = Clock::now();
  const EmulatorDraws draws = sample_full(model, cfg.dist, budget, seed, sample_options(cfg, opt));
  manifest.timing("sample", seconds_since(t0));
  {
    auto out = open_output(dir / "samples.csv");
    write_draws_csv(out, draws);
  }
  manifest.output(dir / "samples.csv");
  const Eigen::MatrixXd values = draws.clamped();
  t0 = Clock::now();
  write_marginal_grids(dir / "marginals", values, cfg, manifest);
  manifest.timing("marginal_grids", seconds_since(t0));
  manifest.write();
  print_summary("emulator draws", values);
  return 0;
}

struct QoiComparison {
  std::string name;
  double ref_mean, emu_mean, ref_std, emu_std;
  double q_ref[3], q_emu[3];
  double ks, ks_critical;
};

double rel_err(double a, double ref) { return ref != 0.0 ? std::abs(a - ref) / std::abs(ref) : std::abs(a - ref); }

std::vector<QoiComparison> compare_samples(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& emu) {
  std::vector<QoiComparison> out;
  const auto names = qoi_names();
  const double probs[3] = {0.05, 0.5, 0.95};
  for (Eigen::Index c = 0; c < ref.cols(); ++c) {
    const Eigen::VectorXd a = ref.col(c), b = emu.col(c);
    std::span<const double> va(a.data(), static_cast<std::size_t>(a.size()));
    std::span<const double> vb(b.data(), static_cast<std::size_t>(b.size()));
    QoiComparison q{};
    q.name = names[static_cast<std::size_t>(c)];
    q.ref_mean = stats::mean(va);
    q.emu_mean = stats::mean(vb);
    q.ref_std = stats::stddev(va);
    q.emu_std = stats::stddev(vb);
    for (int k = 0; k < 3; ++k) {
      q.q_ref[k] = stats::quantile(va, probs[k]);
      q.q_emu[k] = stats::quantile(vb, probs[k]);
    }
    q.ks = stats::ks_two_sample(va, vb);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    q.ks_critical = stats::ks_critical_value(0.05, na * nb / (na + nb));
    out.push_back(q);
  }
  return out;
}

void write_comparison(const std::filesystem::path& dir, const std::vector<QoiComparison>& rows,
                      const std::string& ref_label, const std::string& emu_label, Manifest& manifest) {
  {
    auto out = open_output(dir / "comparison.csv");
    csv::Writer w(out, {"qoi", "ref_mean", "emu_mean", "mean_rel_err", "ref_std", "emu_std", "std_rel_err",
                        "ref_q05", "emu_q05", "q05_rel_err", "ref_q50", "emu_q50", "q50_rel_err", "ref_q95",
                        "emu_q95", "q95_rel_err", "ks", "ks_critical_95"});
    for (const auto& q : rows) {
      w << q.name << q.ref_mean << q.emu_mean << rel_err(q.emu_mean, q.ref_mean) << q.ref_std << q.emu_std
        << rel_err(q.emu_std, q.ref_std);
      for (int k = 0; k < 3; ++k) w << q.q_ref[k] << q.q_emu[k] << rel_err(q.q_emu[k], q.q_ref[k]);
      w << q.ks << q.ks_critical;
      w.end_row();
    }
  }
  manifest.output(dir / "comparison.csv");
  std::ostringstream table;
  table << "reference: " << ref_label << "\ncandidate: " << emu_label << "\n";
  table << fmt::format("{:<6} {:>11} {:>11} {:>8} {:>11} {:>11} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7}\n", "qoi",
                       "ref_mean", "cand_mean", "rel_err", "ref_std", "cand_std", "rel_err", "q05_err", "q50_err",
                       "q95_err", "ks", "ks_95");
  for (const auto& q : rows)
    table << fmt::format("{:<6} {:>11.5g} {:>11.5g} {:>8.4f} {:>11.5g} {:>11.5g} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f} "
                         "{:>7.4f} {:>7.4f}\n",
                         q.name, q.ref_mean, q.emu_mean, rel_err(q.emu_mean, q.ref_mean), q.ref_std, q.emu_std,
                         rel_err(q.emu_std, q.ref_std), rel_err(q.q_emu[0], q.q_ref[0]),
                         rel_err(q.q_emu[1], q.q_ref[1]), rel_err(q.q_emu[2], q.q_ref[2]), q.ks, q.ks_critical);
  {
    auto out = open_output(dir / "comparison.txt");
    out << table.str();
  }
  manifest.output(dir / "comparison.txt");
  std::cout << table.str();
}

int cmd_compare(const ExperimentConfig& cfg, const Options& opt) {
  const std::uint64_t seed = require_seed(opt, cfg.seeds.compare, "compare", cfg);
  const auto budget = sampling_budget(cfg, opt);
  const std::size_t count = opt.brute_force.value_or(cfg.brute_force);
  const auto mpath = model_path(cfg, opt);
  if (opt.dry_run) {
    print_plan(cfg, "compare", seed, nullptr);
    if (opt.at_design)
      std::cout << "  reference:   training data at design point " << *opt.at_design << "\n";
    else
      std::cout << "  reference:   " << count << " filtered brute-force realizations\n";
    std::cout << "  candidate:   " << (opt.null_compare ? "second brute-force run" : mpath.string()) << "\n";
    return 0;
  }
  const auto dir = output_dir(cfg, opt);
  Manifest manifest("compare", cfg, dir);
  manifest.seed("compare", seed);
  sir::SimConfig sim = cfg.sim;
  auto brute = [&](std::uint64_t s, const std::string& file) {
    sim.seed = s;
    const auto ens = sir::brute_force_ensemble(cfg.dist, count, cfg.model, sim, cfg.ensemble.min_cinf_percent,
                                               cfg.brute_force_max_attempts);
    sir::write_ensemble_csv(dir / file, ens);
    manifest.output(dir / file);
    std::vector<sir::QoiVector> acc;
    for (const auto& e : ens)
      for (const auto& q : e.accepted()) acc.push_back(q);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(acc.size()), 4);
    for (std::size_t r = 0; r < acc.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = acc[r].as_vector().transpose();
    if (acc.size() < count) spdlog::warn("brute force: only {} of {} realizations passed the filter", acc.size(), count);
    return m;
  };

  Eigen::MatrixXd ref, cand;
  std::string ref_label, cand_label;
  auto t0 = Clock::now();
  if (opt.at_design) {
    const std::filesystem::path ens_path =
        opt.ensemble.empty() ? dir / "ensemble.csv" : std::filesystem::path(opt.ensemble);
    const auto ens = sir::read_ensemble_csv(ens_path);
    manifest.input("ensemble", ens_path);
    const std::size_t j = *opt.at_design;
    if (j >= ens.size()) throw InputError("--at-design " + std::to_string(j) + " is out of range");
    ref = ens[j].accepted_matrix();
    ref_label = fmt::format("training data at design point {} (beta={}, gamma={})", j, ens[j].theta.beta, ens[j].theta.gamma);
    const EmulatorModel model = load_model(mpath);
    manifest.input("model", mpath);
    Rng rng = Rng::substream(seed, {1});
    const auto draws = sample_at(model, Eigen::Vector2d(ens[j].theta.beta, ens[j].theta.gamma),
                                 budget.n_theta * budget.n_zeta, budget.n_eta, rng, sample_options(cfg, opt));
    cand = draws.clamped();
    cand_label = "emulator at the same theta";
  } else {
    ref = brute(seed, "brute_force.csv");
    ref_label = fmt::format("brute-force Monte Carlo, seed {}", seed);
    if (opt.null_compare) {
      const std::uint64_t s2 = Rng::substream(seed, {2}).next();
      manifest.seed("compare_null", s2);
      cand = brute(s2, "brute_force_null.csv");
      cand_label = fmt::format("brute-force Monte Carlo, seed {}", s2);
    } else {
      const EmulatorModel model = load_model(mpath);
      manifest.input("model", mpath);
      const std::uint64_t s2 = Rng::substream(seed, {1}).next();
      manifest.seed("compare_emulator", s2);
      const auto draws = sample_full(model, cfg.dist, budget, s2, sample_options(cfg, opt));
      {
        auto out = open_output(dir / "emulator_samples.csv");
        write_draws_csv(out, draws);
      }
      manifest.output(dir / "emulator_samples.csv");
      cand = draws.clamped();
      cand_label = "emulator full-uncertainty ensemble";
    }
  }
  manifest.timing("compare", seconds_since(t0));
  write_comparison(dir, compare_samples(ref, cand), ref_label, cand_label, manifest);
  manifest.write();
  return 0;
}

int cmd_report(const ExperimentConfig& cfg, const Options& opt) {
  const std::uint64_t seed = require_seed(opt, cfg.seeds.report, "report", cfg);
  const auto mpath = model_path(cfg, opt);
  if (opt.dry_run) {
    print_plan(cfg, "report", seed, nullptr);
    std::cout << "  model:       " << mpath.string() << "\n";
    std::cout << fmt::format("  variance:    n_theta={} n_zeta={} n_eta={}\n", cfg.report.n_theta, cfg.report.n_zeta,
                             cfg.report.n_eta);
    return 0;
  }
  const EmulatorModel model = load_model(mpath);
  const auto dir = output_dir(cfg, opt);
  Manifest manifest("report", cfg, dir);
  manifest.seed("report", seed);
  manifest.input("model", mpath);

  std::ostringstream text;
  text << "model " << mpath.string() << " (" << model_format_version << ")\n";
  text << fmt::format("  output dim {}, KL modes {}, PC terms {}, design points {}, GP components {}\n",
                      model.output_dim(), model.modes(), model.terms(), model.design_points(),
                      model.gp().basis.components());
  text << "  KL eigenvalues:";
  for (Eigen::Index n = 0; n < model.kl().eigenvalues().size(); ++n)
    text << fmt::format(" {:.5g}", model.kl().eigenvalues()[n]);
  text << "\n";
  const auto& h = model.gp().hyper;
  text << fmt::format("  GP MAP: lambda_delta={:.5g}\n", h.lambda_delta);
  for (Eigen::Index i = 0; i < h.lambda_w.size(); ++i) {
    text << fmt::format("    w_{}: lambda_w={:.5g} rho=", i + 1, h.lambda_w[i]);
    for (Eigen::Index k = 0; k < h.rho.cols(); ++k) text << fmt::format(" {:.5f}", h.rho(i, k));
    text << "\n";
  }
  auto t0 = Clock::now();
  const auto vc = variance_decomposition(model, cfg.dist, cfg.report, seed);
  manifest.timing("variance_decomposition", seconds_since(t0));
  const auto names = qoi_names();
  {
    auto out = open_output(dir / "variance_decomposition.csv");
    csv::Writer w(out, {"qoi", "var_total", "se_total", "var_intrinsic", "se_intrinsic", "var_parametric",
                        "se_parametric", "var_emulator", "se_emulator"});
    for (Eigen::Index c = 0; c < vc.total.size(); ++c) {
      w << names[static_cast<std::size_t>(c)] << vc.total[c] << vc.total_se[c] << vc.intrinsic[c]
        << vc.intrinsic_se[c] << vc.parametric[c] << vc.parametric_se[c] << vc.emulator[c] << vc.emulator_se[c];
      w.end_row();
    }
  }
  manifest.output(dir / "variance_decomposition.csv");
  text << "variance decomposition (raw emulator output)\n";
  text << fmt::format("  {:<6} {:>12} {:>12} {:>12} {:>12}\n", "qoi", "total", "intrinsic", "parametric", "emulator");
  for (Eigen::Index c = 0; c < vc.total.size(); ++c)
    text << fmt::format("  {:<6} {:>12.5g} {:>12.5g} {:>12.5g} {:>12.5g}\n", names[static_cast<std::size_t>(c)],
                        vc.total[c], vc.intrinsic[c], vc.parametric[c], vc.emulator[c]);
  {
    auto out = open_output(dir / "report.txt");
    out << text.str();
  }
  manifest.output(dir / "report.txt");
  manifest.write();
  std::cout << text.str();
  return 0;
}

void configure_logging() {
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("KLPC_LOG");
  if (!env || !*env) {
    spdlog::set_level(spdlog::level::info);
    return;
  }
  const auto level = spdlog::level::from_str(env);
  if (level == spdlog::level::off && std::string_view(env) != "off")
    spdlog::warn("KLPC_LOG='{}' not recognized; using info", env);
  else
    spdlog::set_level(level);
}

}  // namespace

int run(int argc, char** argv) {
  // Log to stderr so stdout carries only command output.
  spdlog::set_default_logger(std::make_shared<spdlog::logger>(
      "klpc", std::make_shared<spdlog::sinks::stderr_color_sink_mt>()));
  configure_logging();

  CLI::App app{"KL + polynomial chaos + Gaussian process emulator of a stochastic SIR model"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  std::uint64_t seed_value = 0;
  app.add_option("--config", opt.config, "Experiment config file (TOML subset)");
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for this command, overriding [seeds]");
  app.add_option("--threads", opt.threads, "Worker thread cap (default: available parallelism)");
  app.add_option("--output", opt.output, "Output directory (default: [output] directory)");
  app.add_flag("--dry-run", opt.dry_run, "Validate the config and print the resolved plan");

  auto* sim = app.add_subcommand("simulate", "Run the SDE ensemble over the design");
  auto* trn = app.add_subcommand("train", "Train the emulator from an ensemble CSV");
  trn->add_option("--ensemble", opt.ensemble, "Ensemble CSV (default: <output>/ensemble.csv)");
  auto* smp = app.add_subcommand("sample", "Draw from a trained emulator");
  auto* cmp = app.add_subcommand("compare", "Compare the emulator against brute-force Monte Carlo");
  auto* rep = app.add_subcommand("report", "Summarize a model and decompose its output variance");
  for (auto* sub : {smp, cmp, rep}) sub->add_option("--model", opt.model, "Model file (default: <output>/model.klpcgp)");
  for (auto* sub : {smp, cmp}) {
    sub->add_flag("--fix-theta", opt.fix_theta, "Hold theta at the input median");
    sub->add_flag("--fix-zeta", opt.fix_zeta, "Hold zeta at 0");
    sub->add_flag("--fix-eta", opt.fix_eta, "Hold the GP at its predictive mean");
    sub->add_option("--n-theta", opt.n_theta, "Parameter draws");
    sub->add_option("--n-zeta", opt.n_zeta, "Intrinsic draws per (theta, eta)");
    sub->add_option("--n-eta", opt.n_eta, "GP realizations per theta");
  }
  cmp->add_option("--brute-force", opt.brute_force, "Filtered brute-force realizations");
  cmp->add_flag("--null", opt.null_compare, "Compare two brute-force runs instead of the emulator");
  cmp->add_option("--at-design", opt.at_design, "Compare against training data at this design index");
  cmp->add_option("--ensemble", opt.ensemble, "Ensemble CSV for --at-design");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (seed_opt->count()) opt.seed = seed_value;

  try {
    set_thread_count(opt.threads);
    const ExperimentConfig cfg = opt.config.empty() ? parse_config("", "<defaults>") : load_config(opt.config);
    if (sim->parsed()) return cmd_simulate(cfg, opt);
    if (trn->parsed()) return cmd_train(cfg, opt);
    if (smp->parsed()) return cmd_sample(cfg, opt);
    if (cmp->parsed()) return cmd_compare(cfg, opt);
    if (rep->parsed()) return cmd_report(cfg, opt);
    return 1;
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const CorruptFileError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const VersionMismatchError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}

}  // namespace klpc::cli
