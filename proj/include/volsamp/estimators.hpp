#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <variant>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "volsamp/core_linalg.hpp"
#include "volsamp/errors.hpp"
#include "volsamp/types.hpp"

namespace volsamp {

/// Design X (n x d) and responses y (n).
struct RegressionProblem {
  Matrix X;
  Vector y;

  Index n() const noexcept { return static_cast<Index>(X.rows()); }
  Index d() const noexcept { return static_cast<Index>(X.cols()); }
};

/// Checks shape, finiteness, zero rows and full column rank.
inline void validate_problem(const RegressionProblem& p) {
  require_finite(p.X, "design matrix");
  if (p.y.size() != p.X.rows()) {
    fail(ErrorKind::InvalidSize, "response length " + std::to_string(p.y.size()) +
                                     " differs from row count " +
                                     std::to_string(p.X.rows()));
  }
  if (!p.y.allFinite()) fail(ErrorKind::InvalidArgument, "responses are not finite");
  if (const auto z = first_zero_row(p.X); z >= 0) {
    fail(ErrorKind::ZeroRow, "row " + std::to_string(z) + " is all zeros");
  }
  (void)gram_factorize(p.X);
}

using UsedSample = std::variant<std::monostate, SampleSequence, SubsetSample>;

struct EstimatorResult {
  Vector weights;
  double loss = 0.0;
  /// loss / L(w*); 1 when both are zero, +inf when only L(w*) is zero.
  double loss_ratio = 1.0;
  UsedSample sample;
};

/// L(w) = ||X w - y||^2.
inline double total_loss(const RegressionProblem& p, const Vector& w) {
  if (w.size() != p.X.cols()) {
    fail(ErrorKind::InvalidSize, "weight vector has wrong length");
  }
  return (p.X * w - p.y).squaredNorm();
}

inline double loss_ratio(double loss, double optimal_loss) {
  if (optimal_loss > 0.0) return loss / optimal_loss;
  return loss <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
}

namespace detail {

/// Minimum-norm least-squares solution of A w = b.
inline Vector min_norm_solve(const Matrix& A, const Vector& b) {
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  const double scale = A.cwiseAbs().maxCoeff();
  if (scale > 0.0) {
    cod.setThreshold(1e-12 * std::max<double>(A.rows(), A.cols()));
  }
  return cod.solve(b);
}

}  // namespace detail

/// w* = X^+ y on a full-rank design.
inline EstimatorResult full_least_squares(const RegressionProblem& p) {
  validate_problem(p);
  Eigen::ColPivHouseholderQR<Matrix> qr(p.X);
  EstimatorResult r;
  r.weights = qr.solve(p.y);
  r.loss = total_loss(p, r.weights);
  r.loss_ratio = 1.0;
  return r;
}

inline double optimal_loss(const RegressionProblem& p) {
  return full_least_squares(p).loss;
}

/// w_S = (X_S)^+ y_S; loss is measured on all n rows.
inline EstimatorResult subset_estimator(const RegressionProblem& p,
                                        const SubsetSample& S,
                                        double optimal) {
  const auto d = p.X.cols();
  Matrix A(static_cast<Eigen::Index>(S.size()), d);
  Vector b(static_cast<Eigen::Index>(S.size()));
  for (std::size_t j = 0; j < S.size(); ++j) {
    const Index i = S.indices[j];
    if (i >= p.n()) fail(ErrorKind::IndexOutOfRange, "subset index out of range");
    A.row(static_cast<Eigen::Index>(j)) = p.X.row(static_cast<Eigen::Index>(i));
    b(static_cast<Eigen::Index>(j)) = p.y(static_cast<Eigen::Index>(i));
  }
  EstimatorResult r;
  r.weights = S.size() == 0 ? Vector::Zero(d) : detail::min_norm_solve(A, b);
  r.loss = total_loss(p, r.weights);
  r.loss_ratio = loss_ratio(r.loss, optimal);
  r.sample = S;
  return r;
}

inline EstimatorResult subset_estimator(const RegressionProblem& p,
                                        const SubsetSample& S) {
  return subset_estimator(p, S, optimal_loss(p));
}

/// w_pi = argmin sum_j w_j (x_{pi_j}^T w - y_{pi_j})^2, solved on rows scaled
/// by sqrt(w_j); loss is measured on all n rows.
inline EstimatorResult rescaled_estimator(const RegressionProblem& p,
                                          const SampleSequence& pi,
                                          double optimal) {
  if (pi.indices.size() != pi.rescale_weights.size()) {
    fail(ErrorKind::InvalidSize, "indices and rescale weights differ in length");
  }
  const auto d = p.X.cols();
  Matrix A(static_cast<Eigen::Index>(pi.size()), d);
  Vector b(static_cast<Eigen::Index>(pi.size()));
  for (std::size_t j = 0; j < pi.size(); ++j) {
    const Index i = pi.indices[j];
    if (i >= p.n()) fail(ErrorKind::IndexOutOfRange, "sequence index out of range");
    if (!(pi.rescale_weights[j] > 0.0)) {
      fail(ErrorKind::InvalidArgument, "rescale weights must be positive");
    }
    const double s = std::sqrt(pi.rescale_weights[j]);
    A.row(static_cast<Eigen::Index>(j)) = s * p.X.row(static_cast<Eigen::Index>(i));
    b(static_cast<Eigen::Index>(j)) = s * p.y(static_cast<Eigen::Index>(i));
  }
  EstimatorResult r;
  r.weights = pi.size() == 0 ? Vector::Zero(d) : detail::min_norm_solve(A, b);
  r.loss = total_loss(p, r.weights);
  r.loss_ratio = loss_ratio(r.loss, optimal);
  r.sample = pi;
  return r;
}

inline EstimatorResult rescaled_estimator(const RegressionProblem& p,
                                          const SampleSequence& pi) {
  return rescaled_estimator(p, pi, optimal_loss(p));
}

}  // namespace volsamp
