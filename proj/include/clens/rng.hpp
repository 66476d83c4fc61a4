#pragma once

#include <cstdint>
#include <random>

namespace clens {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of the `index`-th child stream of `master`. Used for per-replicate,
/// per-cluster and per-tree seeds so results do not depend on scheduling.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) + index);
}

/// Random source used throughout the library.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
/// standard. All transforms are implemented here rather than through the
/// <random> distributions (whose algorithms are implementation-defined):
///   - uniform(): top 53 bits scaled to [0, 1)
///   - normal(): Box-Muller, both variates of each pair are used
///   - laplace(b): inverse CDF
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t bits() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

  bool bernoulli(double prob) { return uniform() < prob; }

  double normal();

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Laplace(0, b): density exp(-|x|/b) / (2b), variance 2b^2.
  double laplace(double scale);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace clens
