#pragma once

#include <cstdint>
#include <random>

namespace smamba {

// All stochastic state in the project flows through one of these.  A Rng is
// constructed from a master seed plus a stream id so different consumers
// (weight init, perturbation, dropout, noise) draw from decorrelated streams
// and any run can be reproduced bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), engine_(mix(seed, stream)) {}

  std::mt19937_64& engine() { return engine_; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uniform_int_distribution<std::int64_t> d(lo, hi);
    return d(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }

  // Derive a decorrelated stream from the same master seed (e.g. one per
  // layer).  Independent of how much this Rng has already been consumed.
  Rng child(std::uint64_t stream) const { return Rng(seed_, stream); }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over (seed, stream) so nearby seeds/streams land
    // far apart in state space.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace smamba
