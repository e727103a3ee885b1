// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace liplab {

// splitmix64 step; used both as a standalone mixer and to seed streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Fixed counter scheme: every component draws its seed from the one
// master seed and a stream id, so components stay independent.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master ^ (0x6c62272e07bb0142ULL + stream * 0x100000001b3ULL);
  return splitmix64(s);
}

// xoshiro256** with a splitmix64-seeded state. The generator and the
// uniform/gaussian mappings below are fully specified, so streams are
// bit-reproducible across platforms (std distributions are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : state_) w = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in the open interval (0,1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; second draw of each pair is cached.
  double gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free modulo is biased for huge n; n here is always tiny
    // (indices, inventory sizes), where the bias is ~2^-64.
    return next_u64() % n;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4]{};
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace liplab
