#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "t2v/errors.hpp"

namespace t2v {

namespace detail {

/// splitmix64 finalizer. Bijective on 64-bit words.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Derives the seed of an independent substream from a master seed and a
/// stream index. Distinct indices give decorrelated streams, so work items
/// can be distributed across workers in any order without changing results.
inline constexpr std::uint64_t substream_seed(std::uint64_t master,
                                              std::uint64_t index) {
  return detail::mix64(detail::mix64(master + 0x9E3779B97F4A7C15ULL) ^
                       detail::mix64(index + 0x632BE59BD9B4E019ULL));
}

/// splitmix64 generator. Small, fast, and freely splittable; every draw
/// sequence is a pure function of the seed, independent of platform.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  Rng(std::uint64_t master, std::uint64_t stream_index)
      : state_(substream_seed(master, stream_index)) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return detail::mix64(state_);
  }

  /// Uniform integer in [0, n). Unbiased via threshold rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw UsageError("uniform_below: bound must be positive");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    std::uint64_t x = next_u64();
    while (x < threshold) x = next_u64();
    return x % n;
  }

  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal deviate via Box-Muller. The paired deviate is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_real();
    while (u1 == 0.0) u1 = uniform_real();
    const double u2 = uniform_real();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Sattolo's algorithm: a uniformly random single n-cycle. Every output
  /// is a derangement (no element maps to itself) for n >= 2.
  std::vector<std::size_t> cyclic_derangement(std::size_t n) {
    if (n < 2) throw UsageError("cyclic_derangement: need at least 2 items");
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(perm[i], perm[j]);
    }
    return perm;
  }

  /// k distinct indices drawn from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k) {
    if (k > n)
      throw UsageError("sample_without_replacement: k exceeds population");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j =
          i + static_cast<std::size_t>(uniform_below(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace t2v
