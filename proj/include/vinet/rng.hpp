#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace vinet {

// All randomness in the project flows from one master seed through named
// substreams ("data", "init", "shuffle", ...). Substream seeds are derived
// by hashing the stream name into the master seed, so adding a new stream
// never perturbs the draws of an existing one.
//
// Floating-point draws are built from raw 64-bit outputs instead of
// std::uniform_*_distribution, whose sequences are implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) {
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (uses two uniforms per pair).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // avoid log(0)
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniformly distributed rotation matrix (Shoemake's quaternion method).
  Eigen::Matrix3d random_rotation() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double u3 = uniform();
    const double sq1 = std::sqrt(1.0 - u1), sq2 = std::sqrt(u1);
    const double x = sq1 * std::sin(2.0 * M_PI * u2);
    const double y = sq1 * std::cos(2.0 * M_PI * u2);
    const double z = sq2 * std::sin(2.0 * M_PI * u3);
    const double w = sq2 * std::cos(2.0 * M_PI * u3);
    Eigen::Matrix3d m;
    m << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
    return m;
  }

  /// Uniform point on the unit sphere.
  Eigen::Vector3d random_unit_vector() {
    const double z = uniform(-1.0, 1.0);
    const double a = uniform(0.0, 2.0 * M_PI);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(a), r * std::sin(a), z};
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

namespace detail {
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Derive the substream named `name` from `master_seed`.
inline RngStream named_stream(std::uint64_t master_seed, std::string_view name) {
  return RngStream(detail::splitmix64(master_seed ^ detail::fnv1a(name)));
}

}  // namespace vinet
