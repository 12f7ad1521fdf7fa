#pragma once

#include <cstdint>
#include <cstddef>

namespace dtspn {

/// SplitMix64 counter-based generator. Every draw is a pure function of
/// (seed, counter), so streams are identical across platforms and can be
/// split by hashing a stream id into the seed.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  /// Uniform double in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to stay unbiased.
  std::size_t below(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t r;
    do {
      r = (*this)();
    } while (r >= limit);
    return static_cast<std::size_t>(r % n);
  }

  /// Child generator for an independent sub-stream.
  SplitMix64 split(std::uint64_t stream) const { return SplitMix64(mix(state_ ^ mix(stream + 0x632BE59BD9B4E019ULL))); }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Fisher-Yates shuffle driven by SplitMix64 (std::shuffle is not portable).
template <typename It>
void shuffle(It first, It last, SplitMix64& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    using std::swap;
    swap(first[i - 1], first[j]);
  }
}

}  // namespace dtspn
