#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace volsamp {

namespace detail {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based random stream. Output number c of stream (seed, stream) is
/// mix64(key + (c + 1) * golden) with key derived from seed and stream, so
/// the value depends only on (seed, stream, c). Streams with different
/// indices are independent for all practical purposes.
///
/// All samplers take an RngState by reference and consume it sequentially;
/// identical seed and call sequence give bit-identical results on every
/// platform (no std:: distributions are used).
class RngState {
 public:
  using result_type = std::uint64_t;

  explicit RngState(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
      : seed_(seed), stream_(stream), key_(make_key(seed, stream)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t position() const noexcept { return counter_; }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer on [0, n) by rejection (no modulo bias). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  /// p is clamped to [0, 1].
  bool bernoulli(double p) noexcept {
    if (p >= 1.0) return true;
    if (p <= 0.0) return false;
    return uniform() < p;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// A fresh stream for child work item `index`, independent of how much of
  /// this stream has been consumed.
  RngState derive(std::uint64_t index) const noexcept {
    return RngState(detail::mix64(seed_ ^ detail::mix64(stream_ + 1)),
                    index);
  }

 private:
  static constexpr std::uint64_t make_key(std::uint64_t seed,
                                          std::uint64_t stream) noexcept {
    return detail::mix64(seed ^ detail::mix64(stream * detail::kGolden +
                                              0x632BE59BD9B4E019ULL));
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Seed for one cell of an experiment grid. Depends only on its arguments so
/// adding grid cells never perturbs existing ones.
inline std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view tag,
                                 std::uint64_t a, std::uint64_t b) noexcept {
  std::uint64_t h = detail::mix64(root_seed + detail::kGolden);
  h = detail::mix64(h ^ detail::fnv1a(tag));
  h = detail::mix64(h ^ (a * detail::kGolden));
  h = detail::mix64(h ^ (b + 0xD1B54A32D192ED03ULL));
  return h;
}

}  // namespace volsamp
