#pragma once

#include <cstdint>
#include <random>

namespace picnet {

// splitmix64; used to derive independent per-sample/per-purpose seeds from one
// run seed so generation order never matters.
inline uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t stream, uint64_t index = 0) {
  return mix_seed(base ^ mix_seed(stream ^ mix_seed(index)));
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double sigma = 1.0) {
  return std::normal_distribution<double>(mean, sigma)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace picnet
