// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace vlmoe {

// xoshiro256** seeded through splitmix64. Self-contained so that streams are
// reproducible independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed);
  explicit Rng(const std::array<uint64_t, 4>& state) : s_(state) {}

  uint64_t next_u64();

  // [0, 1)
  double uniform();
  // [lo, hi)
  double uniform(double lo, double hi);
  // inclusive bounds
  int uniform_int(int lo, int hi);
  // Box-Muller, no second-value caching
  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream; same (seed, tag) always yields the same stream.
  Rng fork(uint64_t tag) const;
  Rng fork(std::string_view tag) const;

  std::array<uint64_t, 4> state() const { return s_; }

 private:
  std::array<uint64_t, 4> s_{};
};

uint64_t splitmix64(uint64_t& state);
uint64_t hash_combine(uint64_t a, uint64_t b);
uint64_t hash_string(std::string_view s);

}  // namespace vlmoe
