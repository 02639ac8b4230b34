// Copyright 2026 The enstel Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace enstel {

// Counter-style seeding: every (seed, stream) pair yields an independent,
// reproducible generator, which is what makes per-cycle parallelism
// order-independent.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ (Blackman/Vigna, public domain reference implementation).
// Used instead of std::mt19937_64 in the trial loop: 4-word state makes
// per-cycle re-seeding cheap.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t sm = seed ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL);
    for (auto& word : s_) word = splitmix64(sm);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform() < p;
  }

  // Index of the first success of i.i.d. Bernoulli(p) trials, 1-based.
  // Returns a huge sentinel when p == 0.
  std::uint64_t geometric(double p) {
    if (p <= 0.0) return std::numeric_limits<std::uint64_t>::max();
    if (p >= 1.0) return 1;
    double u = uniform();
    // Round away from zero so k >= 1 even when u happens to be 0.
    double k = std::floor(std::log1p(-u) / std::log1p(-p)) + 1.0;
    if (k >= 9.22e18) return std::numeric_limits<std::uint64_t>::max();
    return static_cast<std::uint64_t>(k);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Multiply-shift rejection-free mapping is fine here; n is tiny (2..6).
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

}  // namespace enstel
