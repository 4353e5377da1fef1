#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "volsamp/errors.hpp"
#include "volsamp/types.hpp"

namespace volsamp {

inline constexpr double kDefaultRankTol = 1e-10;
inline constexpr double kDefaultSymmetryTol = 1e-9;
// Relative eigenvalue floor below which a small PSD matrix is treated as
// singular (its determinant is reported as exactly zero).
inline constexpr double kSingularTol = 1e-12;

/// Factorization of the Gram matrix X^T X of a full-rank design.
struct GramFactorization {
  Matrix gram;      // X^T X
  Matrix inverse;   // (X^T X)^{-1}
  Matrix inv_sqrt;  // (X^T X)^{-1/2}, symmetric
  double log_det = 0.0;

  Eigen::Index dim() const noexcept { return gram.rows(); }
  double det() const { return std::exp(log_det); }
};

inline void require_finite(const Matrix& X, const char* what) {
  if (X.rows() < 1 || X.cols() < 1) {
    fail(ErrorKind::InvalidSize, std::string(what) + " must be non-empty");
  }
  if (!X.allFinite()) {
    fail(ErrorKind::InvalidArgument,
         std::string(what) + " contains non-finite entries");
  }
}

/// Factorizes X^T X through the thin SVD of X. The rank test uses the
/// singular values of X itself, so it does not lose half the precision the
/// way a test on the eigenvalues of X^T X would.
inline GramFactorization gram_factorize(const Matrix& X,
                                        double rank_tol = kDefaultRankTol) {
  require_finite(X, "design matrix");
  if (X.cols() > X.rows()) {
    std::ostringstream msg;
    msg << "design matrix is " << X.rows() << "x" << X.cols()
        << "; rank cannot reach " << X.cols();
    fail(ErrorKind::RankDeficient, msg.str());
  }
  Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  const double smax = sigma.maxCoeff();
  const double smin = sigma.minCoeff();
  if (!(smax > 0.0) || smin <= rank_tol * smax) {
    std::ostringstream msg;
    msg << "smallest singular value " << smin << " <= " << rank_tol
        << " * largest (" << smax << ")";
    fail(ErrorKind::RankDeficient, msg.str());
  }
  const Matrix& V = svd.matrixV();
  GramFactorization f;
  f.gram = X.transpose() * X;
  f.inverse = V * sigma.array().square().inverse().matrix().asDiagonal() *
              V.transpose();
  f.inv_sqrt = V * sigma.array().inverse().matrix().asDiagonal() * V.transpose();
  f.log_det = 2.0 * sigma.array().log().sum();
  return f;
}

/// Index of the first all-zero row, or -1.
inline Eigen::Index first_zero_row(const Matrix& X) {
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if ((X.row(i).array() == 0.0).all()) return i;
  }
  return -1;
}

/// l_i = x_i^T (X^T X)^{-1} x_i.
inline Vector leverage_scores(const Matrix& X, const GramFactorization& fact) {
  if (X.cols() != fact.dim()) {
    fail(ErrorKind::InvalidSize, "factorization does not match matrix");
  }
  if (const auto z = first_zero_row(X); z >= 0) {
    fail(ErrorKind::ZeroRow, "row " + std::to_string(z) + " is all zeros");
  }
  return (X * fact.inv_sqrt).rowwise().squaredNorm();
}

inline Vector leverage_scores(const Matrix& X) {
  return leverage_scores(X, gram_factorize(X));
}

/// U = X (X^T X)^{-1/2}; U^T U = I and span(U) = span(X).
inline Matrix orthogonalize(const Matrix& X, const GramFactorization& fact) {
  if (X.cols() != fact.dim()) {
    fail(ErrorKind::InvalidSize, "factorization does not match matrix");
  }
  return X * fact.inv_sqrt;
}

inline Matrix orthogonalize(const Matrix& X) {
  return orthogonalize(X, gram_factorize(X));
}

/// X^T Q_pi X = sum_j w_j x_{pi_j} x_{pi_j}^T.
inline Matrix weighted_gram(const Matrix& X, const SampleSequence& sample) {
  if (sample.indices.size() != sample.rescale_weights.size()) {
    fail(ErrorKind::InvalidSize, "indices and rescale weights differ in length");
  }
  const auto d = X.cols();
  Matrix M = Matrix::Zero(d, d);
  for (std::size_t j = 0; j < sample.indices.size(); ++j) {
    const Index i = sample.indices[j];
    if (i >= static_cast<Index>(X.rows())) {
      fail(ErrorKind::IndexOutOfRange,
           "index " + std::to_string(i) + " >= " + std::to_string(X.rows()));
    }
    M.noalias() += sample.rescale_weights[j] * X.row(i).transpose() * X.row(i);
  }
  return M;
}

inline void require_symmetric(const Matrix& M, double tol) {
  if (M.rows() != M.cols() || M.rows() < 1) {
    fail(ErrorKind::NotSymmetric, "matrix is not square");
  }
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  const double asym = (M - M.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= tol * scale)) {
    std::ostringstream msg;
    msg << "asymmetry " << asym << " exceeds " << tol << " * " << scale;
    fail(ErrorKind::NotSymmetric, msg.str());
  }
}

inline double min_eigenvalue_sym(const Matrix& M,
                                 double sym_tol = kDefaultSymmetryTol) {
  require_symmetric(M, sym_tol);
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double max_eigenvalue_sym(const Matrix& M,
                                 double sym_tol = kDefaultSymmetryTol) {
  require_symmetric(M, sym_tol);
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(M.rows() - 1);
}

/// log det of a symmetric PSD matrix; -inf when it is numerically singular.
inline double log_det_psd(const Matrix& M, double rel_tol = kSingularTol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  const Vector& ev = es.eigenvalues();
  const double top = ev(ev.size() - 1);
  if (!(top > 0.0) || ev(0) <= rel_tol * top) {
    return -std::numeric_limits<double>::infinity();
  }
  return ev.array().log().sum();
}

inline double det_psd(const Matrix& M, double rel_tol = kSingularTol) {
  return std::exp(log_det_psd(M, rel_tol));
}

inline double log_binomial(double n, double k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// log(k (k-1) ... (k-d+1)) for k >= d.
inline double log_falling_factorial(double k, double d) {
  return std::lgamma(k + 1.0) - std::lgamma(k - d + 1.0);
}

}  // namespace volsamp
