#pragma once

#include <cstdint>
#include <limits>

namespace koopcert {

/// SplitMix64 finalizer, used to derive independent seeds from (seed, tag) pairs.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

/// PCG-XSL-RR 128/64 (pcg64). Satisfies UniformRandomBitGenerator, so it
/// plugs into the <random> distributions.
class Pcg64 {
 public:
  using result_type = std::uint64_t;

  explicit Pcg64(std::uint64_t seed = 0, std::uint64_t stream = 0) {
    const unsigned __int128 s = (static_cast<unsigned __int128>(splitmix64(seed ^ 0xda3e39cb94b95bdbULL)) << 64) |
                                splitmix64(seed + 1);
    inc_ = ((static_cast<unsigned __int128>(splitmix64(stream)) << 64) | splitmix64(stream + 7)) << 1u | 1u;
    state_ = 0;
    step();
    state_ += s;
    step();
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const unsigned __int128 old = state_;
    step();
    const auto hi = static_cast<std::uint64_t>(old >> 64);
    const auto lo = static_cast<std::uint64_t>(old);
    const std::uint64_t xored = hi ^ lo;
    const unsigned rot = static_cast<unsigned>(old >> 122);
    return (xored >> rot) | (xored << ((64u - rot) & 63u));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static constexpr unsigned __int128 kMultiplier =
      (static_cast<unsigned __int128>(2549297995355413924ULL) << 64) | 4865540595714422341ULL;

  void step() { state_ = state_ * kMultiplier + inc_; }

  unsigned __int128 state_;
  unsigned __int128 inc_;
};

}  // namespace koopcert
