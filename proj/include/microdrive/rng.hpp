#pragma once

// Deterministic randomness. std::mt19937_64 is fully specified by the
// standard; the distribution helpers are hand-rolled because the standard
// library's distribution objects are implementation-defined and would break
// bitwise reproducibility across toolchains.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace microdrive {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Carves an independent stream seed out of (seed, tag).
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ splitmix64(tag ^ 0xa5a5a5a5a5a5a5a5ULL));
}

inline uint64_t mix_seed(uint64_t seed, uint64_t tag, uint64_t tag2) {
  return mix_seed(mix_seed(seed, tag), tag2);
}

// Stable string tag for stream derivation (FNV-1a).
inline uint64_t tag_of(const char* s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (; *s; ++s) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(*s));
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t bits() { return eng_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    // rejection sampling to avoid modulo bias
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = eng_();
    } while (v >= limit);
    return v % n;
  }

  int below_int(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

  bool bernoulli(double p) { return uniform01() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // First k elements of a Fisher-Yates pass: a uniform k-subset of [0, n).
  std::vector<int> choose_k(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k && i < n; ++i) {
      const int j = i + below_int(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<size_t>(k < n ? k : n));
    return idx;
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace microdrive
