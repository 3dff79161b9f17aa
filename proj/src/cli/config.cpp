#include "klpc/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "klpc/random.hpp"

namespace klpc::cli {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_identifier(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

std::string where(const std::string& source, int line) { return source + ", line " + std::to_string(line) + ": "; }

// Drops a trailing comment, respecting quoted strings.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

ConfigValue::Scalar parse_scalar(std::string_view text, const std::string& at) {
  if (text.empty()) throw ConfigError(at + "missing value");
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"') throw ConfigError(at + "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
      if (text[i] == '\\' && i + 2 < text.size()) ++i;
      else if (text[i] == '"') throw ConfigError(at + "unexpected quote inside string");
      out.push_back(text[i]);
    }
    return out;
  }
  if (text == "true") return true;
  if (text == "false") return false;
  std::string cleaned;
  for (char c : text)
    if (c != '_') cleaned.push_back(c);
  const char* b = cleaned.data();
  const char* e = b + cleaned.size();
  if (cleaned.find_first_of(".eE") == std::string::npos || cleaned == "inf" || cleaned == "nan") {
    std::int64_t i = 0;
    if (*b == '+') ++b;
    const auto r = std::from_chars(b, e, i);
    if (r.ec == std::errc() && r.ptr == e) return i;
  }
  double d = 0.0;
  b = cleaned.data();
  if (*b == '+') ++b;
  const auto r = std::from_chars(b, e, d);
  if (r.ec == std::errc() && r.ptr == e) return d;
  throw ConfigError(at + "cannot parse value '" + std::string(text) + "'");
}

std::vector<std::string_view> split_array(std::string_view inner, const std::string& at) {
  std::vector<std::string_view> parts;
  bool quoted = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < inner.size(); ++i) {
    if (inner[i] == '"' && (i == 0 || inner[i - 1] != '\\')) quoted = !quoted;
    if (inner[i] == '[' && !quoted) throw ConfigError(at + "nested arrays are not supported");
    if (inner[i] == ',' && !quoted) {
      parts.push_back(trim(inner.substr(start, i - start)));
      start = i + 1;
    }
  }
  const auto last = trim(inner.substr(start));
  if (!last.empty()) parts.push_back(last);
  for (const auto& p : parts)
    if (p.empty()) throw ConfigError(at + "empty array element");
  return parts;
}

// Typed access with line-aware messages; tracks which keys were used.
class Binder {
 public:
  explicit Binder(const ConfigDocument& doc) : doc_(doc) {}

  template <class T, class Check>
  void number(const std::string& key, T& out, Check check, const char* requirement) {
    const auto* v = find(key);
    if (!v) return;
    const auto* s = std::get_if<ConfigValue::Scalar>(&v->value);
    T value{};
    if (!s || !convert(*s, value)) fail(*v, key, std::string("expected ") + type_name<T>());
    if (!check(value)) fail(*v, key, requirement);
    out = value;
  }

  void flag(const std::string& key, bool& out) {
    const auto* v = find(key);
    if (!v) return;
    const auto* s = std::get_if<ConfigValue::Scalar>(&v->value);
    if (!s || !std::holds_alternative<bool>(*s)) fail(*v, key, "expected true or false");
    out = std::get<bool>(*s);
  }

  void text(const std::string& key, std::string& out, const std::set<std::string>& allowed = {}) {
    const auto* v = find(key);
    if (!v) return;
    const auto* s = std::get_if<ConfigValue::Scalar>(&v->value);
    if (!s || !std::holds_alternative<std::string>(*s)) fail(*v, key, "expected a quoted string");
    const auto& str = std::get<std::string>(*s);
    if (!allowed.empty() && !allowed.count(str)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(*v, key, "must be one of: " + list);
    }
    out = str;
  }

  template <class T, class Check>
  void array(const std::string& key, std::vector<T>& out, Check check, const char* requirement) {
    const auto* v = find(key);
    if (!v) return;
    const auto* a = std::get_if<std::vector<ConfigValue::Scalar>>(&v->value);
    if (!a) fail(*v, key, "expected an array");
    std::vector<T> values;
    for (const auto& s : *a) {
      T value{};
      if (!convert(s, value)) fail(*v, key, std::string("expected an array of ") + type_name<T>());
      if (!check(value)) fail(*v, key, requirement);
      values.push_back(value);
    }
    out = std::move(values);
  }

  void seed(const std::string& key, std::optional<std::uint64_t>& out) {
    const auto* v = find(key);
    if (!v) return;
    const auto* s = std::get_if<ConfigValue::Scalar>(&v->value);
    std::uint64_t value = 0;
    bool ok = false;
    if (s && std::holds_alternative<std::int64_t>(*s) && std::get<std::int64_t>(*s) >= 0) {
      value = static_cast<std::uint64_t>(std::get<std::int64_t>(*s));
      ok = true;
    } else if (s && std::holds_alternative<std::string>(*s)) {
      const auto& str = std::get<std::string>(*s);
      const auto r = std::from_chars(str.data(), str.data() + str.size(), value);
      ok = r.ec == std::errc() && r.ptr == str.data() + str.size();
    }
    if (!ok) fail(*v, key, "expected a non-negative integer seed");
    out = value;
  }

  int line(const std::string& key) const {
    const auto it = doc_.entries.find(key);
    return it == doc_.entries.end() ? 0 : it->second.line;
  }

  void reject_unknown() const {
    for (const auto& [key, v] : doc_.entries)
      if (!used_.count(key)) throw ConfigError(where(doc_.source, v.line) + "unknown key '" + key + "'");
  }

 private:
  const ConfigValue* find(const std::string& key) {
    used_.insert(key);
    const auto it = doc_.entries.find(key);
    return it == doc_.entries.end() ? nullptr : &it->second;
  }

  [[noreturn]] void fail(const ConfigValue& v, const std::string& key, const std::string& msg) const {
    throw ConfigError(where(doc_.source, v.line) + key + ": " + msg);
  }

  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, double>) return "a number";
    else return "a non-negative integer";
  }

  static bool convert(const ConfigValue::Scalar& s, double& out) {
    if (const auto* i = std::get_if<std::int64_t>(&s)) out = static_cast<double>(*i);
    else if (const auto* d = std::get_if<double>(&s)) out = *d;
    else return false;
    return true;
  }
  // Integral floats such as 1e5 are accepted for counts.
  static bool convert(const ConfigValue::Scalar& s, std::size_t& out) {
    if (const auto* i = std::get_if<std::int64_t>(&s)) {
      if (*i < 0) return false;
      out = static_cast<std::size_t>(*i);
      return true;
    }
    const auto* d = std::get_if<double>(&s);
    if (!d || !(*d >= 0.0 && *d < 0x1.0p53) || std::floor(*d) != *d) return false;
    out = static_cast<std::size_t>(*d);
    return true;
  }

  const ConfigDocument& doc_;
  std::set<std::string> used_;
};

const auto positive = [](double x) { return x > 0.0 && std::isfinite(x); };
const auto nonnegative = [](double x) { return x >= 0.0 && std::isfinite(x); };
const auto at_least_one = [](std::size_t x) { return x >= 1; };
const auto any_size = [](std::size_t) { return true; };
const auto unit_open = [](double x) { return x > 0.0 && x < 1.0; };
const auto unit_half_open = [](double x) { return x > 0.0 && x <= 1.0; };

}  // namespace

ConfigDocument ConfigDocument::parse(std::string_view text, const std::string& source) {
  ConfigDocument doc;
  doc.source = source;
  std::string section;
  std::set<std::string> sections;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const std::string at = where(source, line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(at + "section header missing ']'");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!is_identifier(section)) throw ConfigError(at + "invalid section name '" + section + "'");
      if (!sections.insert(section).second) throw ConfigError(at + "duplicate section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(at + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!is_identifier(key)) throw ConfigError(at + "invalid key '" + std::string(key) + "'");
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    ConfigValue v;
    v.line = line_no;
    if (!value.empty() && value.front() == '[') {
      if (value.back() != ']') throw ConfigError(at + "array missing ']'");
      std::vector<ConfigValue::Scalar> items;
      for (const auto& part : split_array(value.substr(1, value.size() - 2), at))
        items.push_back(parse_scalar(part, at));
      v.value = std::move(items);
    } else {
      v.value = parse_scalar(value, at);
    }
    if (!doc.entries.emplace(full, std::move(v)).second)
      throw ConfigError(at + "duplicate key '" + full + "'");
  }
  return doc;
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  const ConfigDocument doc = ConfigDocument::parse(text, source);
  Binder b(doc);
  ExperimentConfig c;
  c.source = source;
  c.text = std::string(text);

  b.number("model.population", c.model.population, positive, "must be positive");
  b.number("model.s0", c.model.s0, nonnegative, "must be non-negative");
  b.number("model.i0", c.model.i0, nonnegative, "must be non-negative");

  b.number("distribution.mu_beta", c.dist.mu_beta, [](double x) { return std::isfinite(x); }, "must be finite");
  b.number("distribution.sigma2_beta", c.dist.sigma2_beta, positive, "must be positive");
  b.number("distribution.mu_gamma", c.dist.mu_gamma, [](double x) { return std::isfinite(x); }, "must be finite");
  b.number("distribution.sigma2_gamma", c.dist.sigma2_gamma, positive, "must be positive");
  std::string scale = "log";
  b.text("distribution.scale", scale, {"log", "natural"});
  c.dist.scale = scale == "log" ? sir::LognormalScale::log : sir::LognormalScale::natural;

  b.number("simulation.dt", c.sim.dt, positive, "must be positive");
  b.number("simulation.t_max", c.sim.t_max, positive, "must be positive");
  b.number("simulation.extinction_threshold", c.sim.extinction_threshold, nonnegative, "must be non-negative");

  std::string kind = "grid";
  b.text("design.kind", kind, {"grid", "lhs", "explicit"});
  c.design.kind = kind == "grid" ? DesignSpec::Kind::grid
                  : kind == "lhs" ? DesignSpec::Kind::lhs
                                  : DesignSpec::Kind::explicit_list;
  b.array("design.grid", c.design.grid, at_least_one, "grid sizes must be >= 1");
  if (c.design.grid.size() != 2)
    throw ConfigError(where(source, b.line("design.grid")) + "design.grid: needs two sizes (beta, gamma)");
  b.number("design.quantile_lo", c.design.quantile_lo, unit_open, "must lie in (0, 1)");
  b.number("design.quantile_hi", c.design.quantile_hi, unit_open, "must lie in (0, 1)");
  if (c.design.quantile_lo >= c.design.quantile_hi)
    throw ConfigError(where(source, b.line("design.quantile_hi")) + "design.quantile_hi: must exceed quantile_lo");
  b.number("design.points", c.design.lhs_points, at_least_one, "must be >= 1");
  b.array("design.beta", c.design.beta, positive, "rates must be positive");
  b.array("design.gamma", c.design.gamma, positive, "rates must be positive");
  if (c.design.kind == DesignSpec::Kind::explicit_list) {
    if (c.design.beta.empty() || c.design.beta.size() != c.design.gamma.size())
      throw ConfigError(where(source, b.line("design.beta")) +
                        "design.beta/design.gamma: explicit designs need equal-length non-empty lists");
  }

  b.number("ensemble.reps_per_point", c.ensemble.reps_per_point, at_least_one, "must be >= 1");
  b.number("ensemble.min_cinf_percent", c.ensemble.min_cinf_percent,
           [](double x) { return x >= 0.0 && x <= 100.0; }, "must lie in [0, 100]");
  b.number("ensemble.max_attempts", c.ensemble.max_attempts, any_size, "");
  b.number("ensemble.batch_size", c.ensemble.batch_size, at_least_one, "must be >= 1");

  double kl_energy = 0.99;
  std::size_t kl_modes = 0;
  b.number("kl.energy", kl_energy, unit_half_open, "must lie in (0, 1]");
  b.number("kl.modes", kl_modes, any_size, "");
  c.train.kl_rule = kl_modes ? TruncationRule::fixed(kl_modes) : TruncationRule::energy_fraction(kl_energy);

  b.number("pc.terms", c.train.pc.terms, at_least_one, "must be >= 1");
  b.number("pc.mc_count", c.train.pc.mc_count, [](std::size_t x) { return x >= 1000; }, "must be >= 1000");
  b.flag("pc.latin_hypercube", c.train.pc.latin_hypercube);
  b.number("pc.partitions", c.train.pc.partitions, at_least_one, "must be >= 1");
  b.number("pc.min_realizations", c.train.min_realizations, at_least_one, "must be >= 1");

  auto& g = c.train.gp;
  b.number("gp.energy", g.energy, unit_half_open, "must lie in (0, 1]");
  b.number("gp.a_w", g.priors.a_w, positive, "must be positive");
  b.number("gp.b_w", g.priors.b_w, positive, "must be positive");
  b.number("gp.a_rho", g.priors.a_rho, positive, "must be positive");
  b.number("gp.b_rho", g.priors.b_rho, positive, "must be positive");
  b.number("gp.a_delta", g.priors.a_delta, positive, "must be positive");
  b.number("gp.b_delta", g.priors.b_delta, positive, "must be positive");
  b.number("gp.iterations", g.mcmc.iterations, at_least_one, "must be >= 1");
  b.number("gp.burn_in", g.mcmc.burn_in, any_size, "");
  if (g.mcmc.burn_in >= g.mcmc.iterations)
    throw ConfigError(where(source, b.line("gp.burn_in")) + "gp.burn_in: must be less than gp.iterations");
  b.number("gp.step_log_lambda", g.mcmc.step_log_lambda, positive, "must be positive");
  b.number("gp.step_logit_rho", g.mcmc.step_logit_rho, positive, "must be positive");

  b.number("sampling.n_theta", c.sampling.n_theta, at_least_one, "must be >= 1");
  b.number("sampling.n_zeta", c.sampling.n_zeta, at_least_one, "must be >= 1");
  b.number("sampling.n_eta", c.sampling.n_eta, at_least_one, "must be >= 1");
  b.flag("sampling.full_chain", c.full_chain);

  b.number("compare.brute_force", c.brute_force, at_least_one, "must be >= 1");
  b.number("compare.max_attempts", c.brute_force_max_attempts, any_size, "");

  const auto hundred = [](std::size_t x) { return x >= 100; };
  b.number("report.n_theta", c.report.n_theta, hundred, "must be >= 100");
  b.number("report.n_zeta", c.report.n_zeta, hundred, "must be >= 100");
  b.number("report.n_eta", c.report.n_eta, hundred, "must be >= 100");

  b.number("grids.points_1d", c.grid_1d, [](std::size_t x) { return x >= 2; }, "must be >= 2");
  b.number("grids.points_2d", c.grid_2d, [](std::size_t x) { return x >= 2; }, "must be >= 2");
  b.number("grids.max_points", c.grid_max_points, [](std::size_t x) { return x >= 2; }, "must be >= 2");

  b.seed("seeds.simulate", c.seeds.simulate);
  b.seed("seeds.train", c.seeds.train);
  b.seed("seeds.sample", c.seeds.sample);
  b.seed("seeds.compare", c.seeds.compare);
  b.seed("seeds.report", c.seeds.report);

  std::string dir = c.output.string();
  b.text("output.directory", dir);
  c.output = dir;

  b.reject_unknown();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  auto wrap = [&](const char* section, auto&& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const InputError& e) {
      throw ConfigError(source + ": [" + section + "]: " + e.what());
    }
  };
  wrap("model", [&] { sir::with_rates(model, {1.0, 1.0}).validate(); });
  wrap("distribution", [&] { dist.validate(); });
  wrap("simulation", [&] { sim.validate(); });
  wrap("gp", [&] { train.gp.priors.validate(); });
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::vector<sir::Rates> resolve_design(const ExperimentConfig& config, std::uint64_t seed) {
  const auto& d = config.design;
  std::vector<sir::Rates> out;
  const double lo = d.quantile_lo, hi = d.quantile_hi;
  switch (d.kind) {
    case DesignSpec::Kind::grid: {
      auto level = [&](std::size_t i, std::size_t n) {
        return n == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
      };
      for (std::size_t a = 0; a < d.grid[0]; ++a)
        for (std::size_t b = 0; b < d.grid[1]; ++b)
          out.push_back({config.dist.quantile_beta(level(a, d.grid[0])),
                         config.dist.quantile_gamma(level(b, d.grid[1]))});
      break;
    }
    case DesignSpec::Kind::lhs: {
      const std::size_t n = d.lhs_points;
      Rng rng = Rng::substream(seed, {0x6c6873ULL});
      std::vector<std::vector<std::size_t>> perm(2, std::vector<std::size_t>(n));
      for (auto& p : perm) {
        for (std::size_t j = 0; j < n; ++j) p[j] = j;
        for (std::size_t j = n; j > 1; --j) std::swap(p[j - 1], p[rng.below(j)]);
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double ub = lo + (hi - lo) * (static_cast<double>(perm[0][j]) + rng.uniform()) / static_cast<double>(n);
        const double ug = lo + (hi - lo) * (static_cast<double>(perm[1][j]) + rng.uniform()) / static_cast<double>(n);
        out.push_back({config.dist.quantile_beta(ub), config.dist.quantile_gamma(ug)});
      }
      break;
    }
    case DesignSpec::Kind::explicit_list:
      for (std::size_t j = 0; j < d.beta.size(); ++j) out.push_back({d.beta[j], d.gamma[j]});
      break;
  }
  return out;
}

}  // namespace klpc::cli
