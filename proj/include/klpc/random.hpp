#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace klpc {

// 64-bit mixing function used to derive independent substream seeds.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Deterministic random stream. Uniform and normal variates are produced
// from the raw 64-bit engine output with portable transforms, so a given
// seed yields the same sequence on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  // Stream keyed by (seed, path...). Distinct paths give statistically
  // independent streams; the same path always gives the same stream.
  static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next() { return engine_(); }

  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  // Standard normal by inversion of a uniform draw.
  double normal();

  // Uniform integer in [0, bound), unbiased.
  std::uint64_t below(std::uint64_t bound);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Standard normal quantile (Wichura AS 241, relative error ~1e-16).
// Throws InputError unless 0 < p < 1.
double normal_quantile(double p);

double normal_cdf(double z);
double normal_pdf(double z);

}  // namespace klpc
