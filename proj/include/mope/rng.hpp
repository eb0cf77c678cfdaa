// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mope {

/// Seeded random source. All draws go through libstdc++'s distributions, so
/// streams are reproducible for a given toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  /// Normal draw resampled until it lies within two standard deviations.
  double truncated_normal(double stddev) {
    for (;;) {
      const double z = std::normal_distribution<double>(0.0, 1.0)(engine_);
      if (std::abs(z) <= 2.0) return z * stddev;
    }
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  /// Uniform integer in [0, n).
  int uniform_int(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine_); }

  std::uint64_t next_u64() { return engine_(); }

  /// Independent child stream derived from this one.
  Rng fork() { return Rng(engine_()); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mope
