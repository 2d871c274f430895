#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace specache {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

// Simulated clock, in seconds. The host clock is never consulted.
using SimTime = double;
using Duration = double;

inline constexpr Duration kSecond = 1.0;
inline constexpr Duration kMinute = 60.0;
inline constexpr Duration kHour = 3600.0;

using Vector = std::vector<double>;

/// Raised when an input violates a documented precondition or schema.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a user or item id does not exist.
class LookupError : public std::out_of_range {
 public:
  explicit LookupError(const std::string& what) : std::out_of_range(what) {}
};

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// Sequential draws use std::mt19937_64 (its output sequence is fixed by the
// standard); the transforms to uniform/normal/exponential are done here so the
// results do not depend on the standard library's distribution classes.
// Random-access draws (labels, masks, drift steps) hash their coordinates.
// ---------------------------------------------------------------------------

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename... Ts>
constexpr std::uint64_t hash_coords(std::uint64_t seed, Ts... coords) {
  std::uint64_t h = splitmix64(seed);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(coords))), ...);
  return h;
}

inline std::uint64_t time_bits(SimTime t) { return std::bit_cast<std::uint64_t>(t); }

/// Maps 64 random bits to [0, 1).
constexpr double unit_from_bits(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Standard normal from two independent 64-bit words (Box-Muller).
inline double normal_from_bits(std::uint64_t a, std::uint64_t b) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const double u1 = 1.0 - unit_from_bits(a);  // (0, 1]
  const double u2 = unit_from_bits(b);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

/// Thin wrapper over mt19937_64 with portable transforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return unit_from_bits(engine_()); }
  double normal() {
    const std::uint64_t a = engine_();
    return normal_from_bits(a, engine_());
  }
  double exponential(double mean) { return -mean * std::log(1.0 - uniform()); }
  /// Uniform index in [0, n); n must be positive.
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Small numeric helpers shared across modules.
// ---------------------------------------------------------------------------

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity; zero-norm inputs yield 0.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Binary cross-entropy of one prediction, with p clamped away from {0, 1}.
inline double bce(double p, int label) {
  constexpr double kEps = 1e-12;
  const double q = std::min(std::max(p, kEps), 1.0 - kEps);
  return label ? -std::log(q) : -std::log(1.0 - q);
}

/// 64-bit FNV-1a, used for stable config digests.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace specache
