#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace stsr {

/// Seeded generator with a platform-independent normal sampler.
///
/// std::normal_distribution differs between standard libraries and caches a
/// second variate, so Box-Muller is done here without caching. That keeps the
/// whole state in the engine and makes it serializable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  double normal();

  std::string state() const;
  void set_state(const std::string& state);

  /// Mixes a base seed with stream identifiers (splitmix64 finalizer).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0);

 private:
  std::mt19937_64 engine_;
};

}  // namespace stsr
