#pragma once

// Counter-based random streams. A stream is addressed by (seed, keys...), so
// draws do not depend on evaluation order and are reproducible bit-for-bit on
// every platform (no std:: distributions involved).

#include <cmath>
#include <cstdint>
#include <numbers>

namespace semidense {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0,
             std::uint64_t d = 0)
      : state_(splitmix64(splitmix64(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b) ^ c) ^ d)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire's multiply-shift; bias is below 2^-32 for
  // the sizes used here.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller (both outputs consumed in pairs).
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stream identifiers so independent quantities never share draws.
enum class Stream : std::uint64_t {
  kPoint = 1,
  kCoarseDescriptor,
  kFineDescriptor,
  kView,
  kQueryView,
  kDropout,
  kObservedCoarse,
  kObservedFine,
  kFineLocation,
  kOutlier,
  kNoiseFloor,
  kWeights,
  kShape,
  kRansac,
  kSubsample,
};

inline CounterRng make_rng(std::uint64_t seed, Stream stream, std::uint64_t a = 0,
                           std::uint64_t b = 0, std::uint64_t c = 0) {
  return CounterRng(seed, static_cast<std::uint64_t>(stream), a, b, c);
}

}  // namespace semidense
