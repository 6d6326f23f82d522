#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

#include "vrcv/tensor.hpp"

namespace vrcv {

/// Deterministic seeded generator: xoshiro256++ core seeded through
/// splitmix64, uniform doubles from the top 53 bits, normals via the
/// classic Box-Muller transform with the second value cached. Equal seeds
/// give identical streams. Single-owner: derive independent children with
/// derive() instead of sharing one instance across threads.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& w : state_) w = splitmix64(x);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0,1), 53-bit resolution.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  /// Standard normal draw. Box-Muller: u1 in (0,1], u2 in [0,1),
  /// z0 = sqrt(-2 ln u1) cos(2 pi u2), z1 = the sine twin (cached).
  double next_normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  /// i.i.d. N(0,1) tensor filled in row-major order.
  Tensor normal(std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = next_normal();
    return t;
  }

  Tensor uniform(std::vector<std::size_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = next_uniform(lo, hi);
    return t;
  }

  std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent child stream: mixes the base seed with a label hash.
  /// Does not consume state, so derivation order is irrelevant.
  SeededRng derive(std::string_view tag, std::uint64_t index = 0) const {
    std::uint64_t h = fnv1a(tag) ^ (0x9E3779B97F4A7C15ULL * (index + 1));
    std::uint64_t x = seed_ ^ h;
    return SeededRng(splitmix64(x));
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    return h;
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_ = 0;
  std::array<std::uint64_t, 4> state_{};
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace vrcv
