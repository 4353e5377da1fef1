#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "volsamp/errors.hpp"
#include "volsamp/types.hpp"

namespace volsamp {

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

/// n^k, saturating at uint64 max.
inline std::uint64_t count_sequences(std::uint64_t n, std::uint64_t k) {
  std::uint64_t total = 1;
  for (std::uint64_t j = 0; j < k; ++j) {
    if (n != 0 && total > std::numeric_limits<std::uint64_t>::max() / n) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    total *= n;
  }
  return total;
}

inline void require_enumerable(std::uint64_t n, std::uint64_t k,
                               std::uint64_t cap) {
  const auto total = count_sequences(n, k);
  if (total > cap) {
    fail(ErrorKind::TooLarge, std::to_string(n) + "^" + std::to_string(k) +
                                  " sequences exceed enumeration cap " +
                                  std::to_string(cap));
  }
}

/// Calls fn(seq) for every seq in [n]^k in lexicographic order.
template <class Fn>
void for_each_sequence(Index n, Index k, Fn&& fn,
                       std::uint64_t cap = kDefaultEnumerationCap) {
  require_enumerable(n, k, cap);
  if (n == 0) return;
  std::vector<Index> seq(k, 0);
  while (true) {
    fn(static_cast<const std::vector<Index>&>(seq));
    Index pos = k;
    while (pos > 0) {
      --pos;
      if (++seq[pos] < n) break;
      seq[pos] = 0;
      if (pos == 0) return;
    }
    if (k == 0) return;
  }
}

/// Calls fn(subset) for every sorted k-subset of [n] in lexicographic order.
template <class Fn>
void for_each_subset(Index n, Index k, Fn&& fn) {
  if (k > n) return;
  std::vector<Index> subset(k);
  for (Index j = 0; j < k; ++j) subset[j] = j;
  while (true) {
    fn(static_cast<const std::vector<Index>&>(subset));
    Index pos = k;
    while (pos > 0) {
      --pos;
      if (subset[pos] < n - k + pos) {
        ++subset[pos];
        for (Index j = pos + 1; j < k; ++j) subset[j] = subset[j - 1] + 1;
        break;
      }
      if (pos == 0) return;
    }
    if (k == 0) return;
  }
}

/// Sum of pmf(seq) * stat(seq) over [n]^k. Stat returns anything supporting
/// scalar multiplication and addition (double, Vector, Matrix); `zero` seeds
/// the accumulator. Terms with zero probability are skipped, so stat is never
/// evaluated where it may be undefined.
template <class Pmf, class Stat, class T>
T expectation_over_sequences(Index n, Index k, Pmf&& pmf, Stat&& stat, T zero,
                             std::uint64_t cap = kDefaultEnumerationCap) {
  T acc = zero;
  for_each_sequence(
      n, k,
      [&](const std::vector<Index>& seq) {
        const double p = pmf(seq);
        if (p != 0.0) acc += p * stat(seq);
      },
      cap);
  return acc;
}

template <class Pmf, class Stat, class T>
T expectation_over_subsets(Index n, Index k, Pmf&& pmf, Stat&& stat, T zero) {
  T acc = zero;
  for_each_subset(n, k, [&](const std::vector<Index>& subset) {
    const double p = pmf(subset);
    if (p != 0.0) acc += p * stat(subset);
  });
  return acc;
}

}  // namespace volsamp
