// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace catreid::rng {

// splitmix64, Sebastiano Vigna. Used both as the stream generator and to
// expand seeds. Self-contained so draws are bit-stable across compilers
// and standard library versions (std::uniform_*_distribution is not).
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(seed) {
    // decorrelate trivially related seeds
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // inclusive bounds, unbiased via rejection
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit span
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % range);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  bool bernoulli(double p) { return next_double() < p; }

  double normal(double mean = 0.0, double sigma = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + sigma * spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return mean + sigma * u * m;
  }

  // Fisher-Yates
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Named stream derivation: one independent stream per (seed, operation).
// Changing the randomness consumed by one pipeline stage never perturbs
// the draws of another.
inline Stream derive(std::uint64_t seed, std::string_view name) {
  std::uint64_t s = seed ^ 0x6a09e667f3bcc908ULL;
  std::uint64_t mix = fnv1a64(name);
  s ^= mix + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
  return Stream(s);
}

inline Stream derive(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  std::uint64_t s = seed ^ 0x6a09e667f3bcc908ULL;
  std::uint64_t mix = fnv1a64(name);
  s ^= mix + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
  s ^= splitmix64(index) + (s << 13) + (s >> 7);
  return Stream(s);
}

}  // namespace catreid::rng
