#pragma once

#include <cstdint>
#include <initializer_list>

namespace pnr::rng {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// SplitMix64 finalizer: a bijective 64-bit mixer with full avalanche.
constexpr std::uint64_t mix(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

/// Derives a child seed from a parent seed and an ordered index tuple.
/// Distinct tuples give statistically independent streams, so trials can be
/// fanned out across threads in any order without changing results. Parts
/// are absorbed additively: an xor here could cancel the running state back
/// to the mixer's fixed point whenever a part collides with it.
inline std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t s = mix(seed + kGolden);
  for (std::uint64_t p : parts) s = mix(s + kGolden + p);
  return s;
}

/// Counter-based generator: output k is a pure function of (key, k). State is
/// one counter, so a stream per Monte Carlo run is free and the consumption
/// order inside a run never depends on scheduling.
class Stream {
 public:
  explicit constexpr Stream(std::uint64_t key) noexcept : key_(key) {}

  constexpr std::uint64_t next_u64() noexcept { return mix(key_ + ++counter_ * kGolden); }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_unit() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, bound), bound >= 1; unbiased (Lemire rejection).
  std::uint32_t next_below(std::uint32_t bound) noexcept {
    std::uint64_t m = static_cast<std::uint64_t>(static_cast<std::uint32_t>(next_u64())) * bound;
    auto low = static_cast<std::uint32_t>(m);
    if (low < bound) {
      const std::uint32_t threshold = -bound % bound;
      while (low < threshold) {
        m = static_cast<std::uint64_t>(static_cast<std::uint32_t>(next_u64())) * bound;
        low = static_cast<std::uint32_t>(m);
      }
    }
    return static_cast<std::uint32_t>(m >> 32);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace pnr::rng
