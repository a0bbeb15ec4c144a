#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace mtmil {

// Counter-based random stream. A stream is keyed by (seed, tags...); values
// depend only on the key and the draw counter, never on creation order, so
// any parallel schedule reproduces the same sequence. All distributions are
// implemented explicitly to keep output identical across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ kInit)) {}

  Rng(std::uint64_t seed, std::uint64_t tag) : Rng(seed) { fold(tag); }

  Rng(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b)
      : Rng(seed, tag_a) {
    fold(tag_b);
  }

  Rng(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b,
      std::uint64_t tag_c)
      : Rng(seed, tag_a, tag_b) {
    fold(tag_c);
  }

  void fold(std::uint64_t tag) { state_ = mix(state_ ^ mix(tag + kTagSalt)); }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be >= 1.
  std::uint64_t uniform_index(std::uint64_t n) {
    // 128-bit multiply-shift; the bias is below 2^-64 for any practical n.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // Marsaglia-Tsang for shape >= 1, boosted for shape < 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u > 0.0 ? u : 1e-300, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  double beta(double alpha, double beta_param) {
    const double x = gamma(alpha);
    const double y = gamma(beta_param);
    return x / (x + y);
  }

  // Fisher-Yates over 0..n-1; returns the full permutation.
  std::vector<std::uint32_t> permutation(std::uint32_t n) {
    std::vector<std::uint32_t> p(n);
    for (std::uint32_t i = 0; i < n; ++i) p[i] = i;
    for (std::uint32_t i = n; i > 1; --i) {
      const auto j = static_cast<std::uint32_t>(uniform_index(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  // k distinct indices from 0..n-1, uniform over subsets, in draw order.
  std::vector<std::uint32_t> sample_without_replacement(std::uint32_t n,
                                                        std::uint32_t k) {
    std::vector<std::uint32_t> pool(n);
    for (std::uint32_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::uint32_t> out;
    out.reserve(k);
    for (std::uint32_t i = 0; i < k && i < n; ++i) {
      const auto j =
          i + static_cast<std::uint32_t>(uniform_index(n - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

  static std::uint64_t hash_string(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return mix(h);
  }

 private:
  static constexpr std::uint64_t kInit = 0x6d746d696c726e67ULL;
  static constexpr std::uint64_t kTagSalt = 0x517cc1b727220a95ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace mtmil
