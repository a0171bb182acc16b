#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "normkit/tensor.hpp"

namespace normkit {

// Counter-based generator: draw n of stream `key` is mix64(key + n * gamma),
// with the SplitMix64 finalizer as the mixing function. Normals come from
// Box-Muller on consecutive uniform pairs, both outputs used.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-ctr/box-muller";

  explicit RngStream(std::uint64_t seed) : seed_(seed), key_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    return mix64(key_ + (counter_++) * kGamma);
  }

  // Uniform in (0, 1].
  double next_uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("next_below: n must be positive");
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  // Independent child stream; does not advance this one.
  RngStream split(std::uint64_t stream_id) const {
    return RngStream(mix64(key_ ^ mix64(stream_id + kGamma)));
  }

  RngStream split(std::string_view name) const { return split(fnv1a(name)); }

  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Tensor4 sample_gaussian(RngStream& rng, Shape shape) {
  Tensor4 out(shape);
  for (double& v : out.data()) v = rng.next_gaussian();
  return out;
}

inline Tensor4 sample_uniform(RngStream& rng, Shape shape, double lo = 0.0,
                              double hi = 1.0) {
  Tensor4 out(shape);
  for (double& v : out.data()) v = lo + (hi - lo) * rng.next_uniform();
  return out;
}

}  // namespace normkit
