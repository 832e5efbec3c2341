#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace emc {

using Rng = std::mt19937_64;

/// Independent RNG stream keyed by an ordered tuple, e.g. (seed, step, worker).
inline Rng make_stream(std::initializer_list<std::uint64_t> key) {
  std::seed_seq seq(key.begin(), key.end());
  return Rng(seq);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Inclusive integer range.
inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline bool bernoulli(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform(rng, 0.0, 1.0) < p;
}

}  // namespace emc
