#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "klpc/emulator.hpp"
#include "klpc/ensemble.hpp"
#include "klpc/error.hpp"
#include "klpc/sir_sde.hpp"

namespace klpc::cli {

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

// Minimal TOML subset: [section] headers, key = value with integers,
// floats, booleans, "strings" and flat arrays of those, # comments.
struct ConfigValue {
  using Scalar = std::variant<std::int64_t, double, bool, std::string>;
  std::variant<Scalar, std::vector<Scalar>> value;
  int line = 0;
};

struct ConfigDocument {
  std::string source;
  // "section.key" -> value
  std::map<std::string, ConfigValue> entries;

  static ConfigDocument parse(std::string_view text, const std::string& source);
};

struct DesignSpec {
  enum class Kind { grid, lhs, explicit_list };
  Kind kind = Kind::grid;
  std::vector<std::size_t> grid{3, 3};
  double quantile_lo = 0.01;
  double quantile_hi = 0.99;
  std::size_t lhs_points = 9;
  std::vector<double> beta;
  std::vector<double> gamma;
};

struct SeedSet {
  std::optional<std::uint64_t> simulate, train, sample, compare, report;
};

struct ExperimentConfig {
  sir::ModelParams model;
  sir::ParamDistribution dist;
  sir::SimConfig sim;
  DesignSpec design;
  sir::EnsembleSettings ensemble;
  TrainConfig train;
  UncertaintyBudget sampling{1000, 10, 10};
  bool full_chain = false;
  std::size_t brute_force = 10000;
  std::size_t brute_force_max_attempts = 0;
  UncertaintyBudget report{200, 200, 200};
  std::size_t grid_1d = 200;
  std::size_t grid_2d = 50;
  std::size_t grid_max_points = 20000;
  SeedSet seeds;
  std::filesystem::path output = "klpc_out";
  std::string source = "<defaults>";
  std::string text;  // raw config text, hashed into manifests

  void validate() const;
};

ExperimentConfig parse_config(std::string_view text, const std::string& source);
ExperimentConfig load_config(const std::filesystem::path& path);

// Design points in (beta, gamma). Latin hypercube designs use `seed`.
std::vector<sir::Rates> resolve_design(const ExperimentConfig& config, std::uint64_t seed);


}  // namespace klpc::cli
