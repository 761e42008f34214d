#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace gridvla {

// SplitMix64. All randomness in the project flows through this generator so
// results are bit-identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). Rejection-free modulo is fine at our scales.
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; pairs are cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Laplace(0, scale) via inverse CDF.
  double laplace(double scale) {
    double u = next_double() - 0.5;
    double s = u < 0 ? -1.0 : (u > 0 ? 1.0 : 0.0);
    return -scale * s * std::log(1.0 - 2.0 * std::fabs(u));
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over raw bytes; used for config/checkpoint hashes and seed derivation.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

// Order-sensitive mix of a base seed with labels, e.g. per-episode seeds
// derived from (run seed, task id, trial). Independent of execution order.
inline uint64_t mix_seed(uint64_t base, const std::string& label, uint64_t index = 0) {
  uint64_t h = fnv1a(label, 0xcbf29ce484222325ULL ^ base);
  h = fnv1a(&index, sizeof(index), h);
  return h ? h : 0x9e3779b97f4a7c15ULL;
}

}  // namespace gridvla
