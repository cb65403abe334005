#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace relprompt {

/// PCG32 (XSH-RR variant) with explicit stream selection.
///
/// All distributions below are implemented on top of the raw 32-bit output
/// with fixed arithmetic, so a given seed yields the same values on every
/// platform and standard library. std::*_distribution is deliberately not
/// used for that reason.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0x14057b7ef767814fULL);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint32_t below(std::uint32_t bound);
  /// Standard normal via Box-Muller.
  double normal();
  /// Normal(0, stddev) resampled until |x| <= 2 stddev.
  double truncated_normal(double stddev);
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent generator derived from this one's seed and a label.
  /// Does not advance this generator.
  Rng fork(std::uint64_t label) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = below(static_cast<std::uint32_t>(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t increment_ = 0;
  std::uint64_t origin_seed_ = 0;
  std::uint64_t origin_stream_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// SplitMix64 finalizer; used for seed derivation.
std::uint64_t mix_seed(std::uint64_t value);

}  // namespace relprompt
