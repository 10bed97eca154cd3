/* Copyright 2026 The fbsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstdint>

namespace fbsim {

// splitmix64; all simulator randomness is built on this so results are
// identical across standard libraries and platforms.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t s = base ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  splitmix64(s);
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    // inclusive bounds
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Exponential with the given rate (events per unit time).
  double exponential(double rate) {
    double u;
    do {
      u = next_double();
    } while (u <= 0.0);
    return -std::log(u) / rate;
  }

  // Standard normal via Box-Muller.
  double normal() {
    double u1;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double lognormal(double mu, double sigma) {
    return std::exp(mu + sigma * normal());
  }

 private:
  std::uint64_t state_;
};

// One deterministic uniform draw in [0,1) keyed by (seed, ordinal); used for
// per-step noise so a step's outcome does not depend on how many draws earlier
// steps consumed.
inline double keyed_uniform(std::uint64_t seed, std::uint64_t ordinal) {
  std::uint64_t s = derive_seed(seed, ordinal);
  return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
}

}  // namespace fbsim
