#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace itb {

using Rng = std::mt19937_64;

// Named purposes keep substreams for different consumers of one seed apart.
enum class Purpose : std::uint64_t {
  Generation = 1,
  Split = 2,
  Training = 3,
  Attribution = 4,
  Occlusion = 5,
  RandomBaseline = 6,
  Baseline = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based derivation: the stream depends only on (seed, keys), never on
// the order in which streams are requested, so parallel schedules are
// irrelevant to the output.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_stream(std::uint64_t seed, Purpose purpose, std::initializer_list<std::uint64_t> keys = {}) {
  std::uint64_t h = derive_seed(seed, {static_cast<std::uint64_t>(purpose)});
  return Rng(derive_seed(h, keys));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

// 1 / (2 sqrt 3): standard deviation shared by the occlusion noise and the
// white-noise corruption of the synthetic datasets.
inline constexpr double kNoiseStd = 0.28867513459481287;

}  // namespace itb
