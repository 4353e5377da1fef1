#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace volsamp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = std::size_t;

/// Ordered multiset of row indices drawn with replacement, together with the
/// diagonal of the rescaling matrix: row indices[j] enters the subsampled
/// problem with weight rescale_weights[j] (typically 1 / q_{indices[j]}).
struct SampleSequence {
  std::vector<Index> indices;
  std::vector<double> rescale_weights;

  std::size_t size() const noexcept { return indices.size(); }
  bool operator==(const SampleSequence&) const = default;
};

/// Sorted set of distinct row indices.
struct SubsetSample {
  std::vector<Index> indices;

  std::size_t size() const noexcept { return indices.size(); }
  bool operator==(const SubsetSample&) const = default;
};

}  // namespace volsamp
