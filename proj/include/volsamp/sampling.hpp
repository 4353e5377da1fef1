#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "volsamp/core_linalg.hpp"
#include "volsamp/enumeration.hpp"
#include "volsamp/errors.hpp"
#include "volsamp/rng.hpp"
#include "volsamp/types.hpp"

namespace volsamp {

inline constexpr std::size_t kDefaultMaxTrials = 1000;
inline constexpr double kRatioSlack = 1e-9;

// ---------------------------------------------------------------------------
// Rescaling distribution
// ---------------------------------------------------------------------------

/// Discrete distribution q over row indices with q_i > 0 and sum 1.
/// Draws use inverse-CDF lookup, O(log n) each.
class RescalingDistribution {
 public:
  static constexpr double kSumTol = 1e-12;

  explicit RescalingDistribution(std::vector<double> weights)
      : weights_(std::move(weights)) {
    if (weights_.empty()) {
      fail(ErrorKind::InvalidSize, "rescaling distribution is empty");
    }
    long double total = 0.0L;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      const double w = weights_[i];
      if (!(w > 0.0) || !std::isfinite(w)) {
        fail(ErrorKind::InvalidArgument,
             "q_" + std::to_string(i) + " must be positive and finite");
      }
      total += w;
    }
    if (std::abs(static_cast<double>(total) - 1.0) > kSumTol) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "weights sum to " << static_cast<double>(total) << ", not 1";
      fail(ErrorKind::InvalidArgument, msg.str());
    }
    cdf_.resize(weights_.size());
    long double run = 0.0L;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      run += weights_[i];
      cdf_[i] = static_cast<double>(run);
    }
  }

  /// Scales positive weights to sum to one.
  static RescalingDistribution normalized(std::span<const double> weights) {
    long double total = 0.0L;
    for (double w : weights) total += w;
    std::vector<double> q(weights.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] = static_cast<double>(weights[i] / total);
    }
    return RescalingDistribution(std::move(q));
  }

  static RescalingDistribution normalized(const Vector& weights) {
    return normalized(std::span<const double>(weights.data(), weights.size()));
  }

  static RescalingDistribution uniform(std::size_t n) {
    return RescalingDistribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  /// q_i = l_i / d (normalized by the computed sum of the scores).
  static RescalingDistribution leveraged(const Vector& leverage) {
    return normalized(leverage);
  }

  std::size_t size() const noexcept { return weights_.size(); }
  double operator[](Index i) const { return weights_[i]; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  Index draw(RngState& rng) const {
    const double u = rng.uniform() * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto pos = static_cast<Index>(it - cdf_.begin());
    return std::min(pos, static_cast<Index>(cdf_.size() - 1));
  }

 private:
  std::vector<double> weights_;
  std::vector<double> cdf_;
};

/// Sequence with rescale weights 1/q_{pi_j}.
inline SampleSequence with_inverse_weights(std::vector<Index> indices,
                                           const RescalingDistribution& q) {
  SampleSequence out;
  out.rescale_weights.reserve(indices.size());
  for (Index i : indices) {
    if (i >= q.size()) {
      fail(ErrorKind::IndexOutOfRange,
           "index " + std::to_string(i) + " >= " + std::to_string(q.size()));
    }
    out.rescale_weights.push_back(1.0 / q[i]);
  }
  out.indices = std::move(indices);
  return out;
}

// ---------------------------------------------------------------------------
// Reverse iterative sampling (standard volume sampling on a row matrix)
// ---------------------------------------------------------------------------

namespace detail {

/// Active row set S with (R_S^T R_S)^{-1} kept current under removals.
/// The inverse is downdated with Sherman-Morrison and rebuilt from the
/// maintained Gram every kRefactorEvery removals; the Gram itself is
/// recomputed from the surviving rows whenever |S| has halved since the last
/// recomputation, which keeps the total cost O(m d^2).
class ShrinkingRowSet {
 public:
  static constexpr std::size_t kRefactorEvery = 50;

  explicit ShrinkingRowSet(const Matrix& rows)
      : rows_(rows), active_(static_cast<std::size_t>(rows.rows())) {
    std::iota(active_.begin(), active_.end(), Index{0});
    position_.resize(active_.size());
    std::iota(position_.begin(), position_.end(), Index{0});
    recompute_gram();
    refactor();
  }

  std::size_t size() const noexcept { return active_.size(); }
  bool contains(Index i) const noexcept { return position_[i] != kGone; }
  Index member(std::size_t pos) const noexcept { return active_[pos]; }
  const std::vector<Index>& members() const noexcept { return active_; }

  /// 1 - r_i^T (R_S^T R_S)^{-1} r_i, i.e. det(G_{S\i}) / det(G_S).
  double removal_weight(Index i) const {
    const auto r = rows_.row(static_cast<Eigen::Index>(i)).transpose();
    return 1.0 - r.dot(inverse_ * r);
  }

  void remove(Index i, double removal_weight) {
    const auto r = rows_.row(static_cast<Eigen::Index>(i)).transpose();
    const Index pos = position_[i];
    const Index last = active_.back();
    active_[pos] = last;
    position_[last] = pos;
    active_.pop_back();
    position_[i] = kGone;

    gram_.noalias() -= r * r.transpose();
    ++since_refactor_;
    if (active_.size() * 2 <= size_at_recompute_) {
      recompute_gram();
      refactor();
    } else if (since_refactor_ >= kRefactorEvery || removal_weight < 1e-8) {
      refactor();
    } else {
      const Vector v = inverse_ * r;
      inverse_.noalias() += (v * v.transpose()) / removal_weight;
    }
  }

 private:
  static constexpr Index kGone = static_cast<Index>(-1);

  void recompute_gram() {
    const auto d = rows_.cols();
    gram_ = Matrix::Zero(d, d);
    for (Index i : active_) {
      const auto r = rows_.row(static_cast<Eigen::Index>(i));
      gram_.noalias() += r.transpose() * r;
    }
    size_at_recompute_ = active_.size();
  }

  void refactor() {
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram_);
    const Vector& ev = es.eigenvalues();
    const double top = ev(ev.size() - 1);
    if (!(top > 0.0) || ev(0) <= kSingularTol * top) {
      fail(ErrorKind::RankDeficient,
           "selected rows do not span the column space");
    }
    inverse_ = es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
               es.eigenvectors().transpose();
    since_refactor_ = 0;
  }

  const Matrix& rows_;
  std::vector<Index> active_;
  std::vector<Index> position_;
  Matrix gram_;
  Matrix inverse_;
  std::size_t since_refactor_ = 0;
  std::size_t size_at_recompute_ = 0;
};

inline void require_volume_size(Index n, Index d, Index k) {
  if (k < d || k > n) {
    fail(ErrorKind::InvalidSize, "volume sampling needs d <= k <= n; got d=" +
                                     std::to_string(d) + " k=" +
                                     std::to_string(k) + " n=" +
                                     std::to_string(n));
  }
}

inline std::size_t removal_trial_cap(std::size_t set_size) {
  return 100000 + 1000 * set_size;
}

}  // namespace detail

/// Standard size-k volume sampling of the rows of `rows`:
/// Pr(S) proportional to det(R_S^T R_S). Rows are removed one at a time; each
/// removal draws a uniform candidate from S and accepts it with probability
/// 1 - r_i^T (R_S^T R_S)^{-1} r_i.
inline SubsetSample volume_sample(const Matrix& rows, Index k, RngState& rng) {
  const auto n = static_cast<Index>(rows.rows());
  const auto d = static_cast<Index>(rows.cols());
  detail::require_volume_size(n, d, k);
  require_finite(rows, "row matrix");
  SubsetSample out;
  if (k == n) {
    out.indices.resize(n);
    std::iota(out.indices.begin(), out.indices.end(), Index{0});
    return out;
  }
  detail::ShrinkingRowSet set(rows);
  while (set.size() > k) {
    std::size_t trials = 0;
    const std::size_t cap = detail::removal_trial_cap(set.size());
    while (true) {
      const Index i = set.member(rng.uniform_index(set.size()));
      const double w = std::clamp(set.removal_weight(i), 0.0, 1.0);
      if (rng.bernoulli(w)) {
        set.remove(i, w);
        break;
      }
      if (++trials > cap) {
        fail(ErrorKind::NonConvergence, "reverse iterative sampling stalled");
      }
    }
  }
  out.indices = set.members();
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

/// Pr(S) = det(X_S^T X_S) / (C(n-d, k-d) det(X^T X)).
inline double volume_sample_pmf(const Matrix& X, const SubsetSample& S) {
  const auto n = static_cast<Index>(X.rows());
  const auto d = static_cast<Index>(X.cols());
  const Index k = S.size();
  detail::require_volume_size(n, d, k);
  std::vector<Index> sorted = S.indices;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    fail(ErrorKind::InvalidArgument, "subset has repeated indices");
  }
  if (!sorted.empty() && sorted.back() >= n) {
    fail(ErrorKind::IndexOutOfRange, "subset index out of range");
  }
  const GramFactorization fact = gram_factorize(X);
  Matrix sub(static_cast<Eigen::Index>(k), X.cols());
  for (Index j = 0; j < k; ++j) {
    sub.row(static_cast<Eigen::Index>(j)) = X.row(static_cast<Eigen::Index>(sorted[j]));
  }
  const double log_num = log_det_psd(sub.transpose() * sub);
  if (std::isinf(log_num)) return 0.0;
  return std::exp(log_num - log_binomial(double(n - d), double(k - d)) -
                  fact.log_det);
}

/// Pr(i in S) = 1 - theta (1 - l_i), theta = (n-k)/(n-d).
inline Vector volume_marginals(const Matrix& X, Index k) {
  const auto n = static_cast<Index>(X.rows());
  const auto d = static_cast<Index>(X.cols());
  detail::require_volume_size(n, d, k);
  const Vector l = leverage_scores(X);
  if (n == d) return Vector::Ones(X.rows());
  const double theta = double(n - k) / double(n - d);
  return (1.0 - theta * (1.0 - l.array())).matrix().cwiseMax(0.0).cwiseMin(1.0);
}

inline double volume_marginal(const Matrix& X, Index k, Index i) {
  if (i >= static_cast<Index>(X.rows())) {
    fail(ErrorKind::IndexOutOfRange, "row index out of range");
  }
  return volume_marginals(X, k)(static_cast<Eigen::Index>(i));
}

// ---------------------------------------------------------------------------
// q-rescaled volume sampling: exact law
// ---------------------------------------------------------------------------

/// The q-rescaled size-k volume sampling law
///   Pr(pi) = det(X^T Q_pi X) prod_j q_{pi_j} / (k(k-1)...(k-d+1) det(X^T X)).
/// Holds the normalizer so repeated pmf evaluations cost O(k d^2).
class RescaledVolumeLaw {
 public:
  RescaledVolumeLaw(const Matrix& X, RescalingDistribution q, Index k)
      : X_(X), q_(std::move(q)), k_(k) {
    if (q_.size() != static_cast<std::size_t>(X.rows())) {
      fail(ErrorKind::InvalidSize, "q does not match the number of rows");
    }
    if (k < static_cast<Index>(X.cols())) {
      fail(ErrorKind::InvalidSize, "rescaled volume sampling needs k >= d");
    }
    const GramFactorization fact = gram_factorize(X);
    log_normalizer_ = log_falling_factorial(double(k), double(X.cols())) + fact.log_det;
  }

  Index k() const noexcept { return k_; }
  Index n() const noexcept { return static_cast<Index>(X_.rows()); }
  Index d() const noexcept { return static_cast<Index>(X_.cols()); }
  const RescalingDistribution& q() const noexcept { return q_; }
  const Matrix& X() const noexcept { return X_; }
  double log_normalizer() const noexcept { return log_normalizer_; }

  /// det(X^T Q_pi X) * prod q_{pi_j}, unnormalized.
  double weight(const std::vector<Index>& seq) const {
    const double lw = log_weight(seq);
    return std::isinf(lw) ? 0.0 : std::exp(lw);
  }

  double pmf(const std::vector<Index>& seq) const {
    if (seq.size() != k_) {
      fail(ErrorKind::InvalidSize, "sequence length differs from k");
    }
    const double lw = log_weight(seq);
    return std::isinf(lw) ? 0.0 : std::exp(lw - log_normalizer_);
  }

  SampleSequence sequence(const std::vector<Index>& seq) const {
    return with_inverse_weights(seq, q_);
  }

 private:
  double log_weight(const std::vector<Index>& seq) const {
    const auto d = X_.cols();
    Matrix M = Matrix::Zero(d, d);
    double log_q = 0.0;
    for (Index i : seq) {
      if (i >= n()) fail(ErrorKind::IndexOutOfRange, "sequence index out of range");
      const auto row = X_.row(static_cast<Eigen::Index>(i));
      M.noalias() += (1.0 / q_[i]) * row.transpose() * row;
      log_q += std::log(q_[i]);
    }
    if (seq.size() < static_cast<std::size_t>(d)) {
      return -std::numeric_limits<double>::infinity();
    }
    return log_det_psd(M) + log_q;
  }

  Matrix X_;
  RescalingDistribution q_;
  Index k_;
  double log_normalizer_ = 0.0;
};

inline double rescaled_pmf(const Matrix& X, const RescalingDistribution& q,
                           Index k, const SampleSequence& pi) {
  if (pi.size() != k) fail(ErrorKind::InvalidSize, "sequence length differs from k");
  return RescaledVolumeLaw(X, q, k).pmf(pi.indices);
}

/// Exact sampler by inverse CDF over all n^k sequences. Test oracle.
inline SampleSequence rescaled_sample_bruteforce(
    const Matrix& X, const RescalingDistribution& q, Index k, RngState& rng,
    std::uint64_t cap = kDefaultEnumerationCap) {
  require_enumerable(static_cast<std::uint64_t>(X.rows()), k, cap);
  const RescaledVolumeLaw law(X, q, k);
  const double u = rng.uniform();
  double run = 0.0;
  std::vector<Index> chosen;
  std::vector<Index> last_positive;
  for_each_sequence(
      law.n(), k,
      [&](const std::vector<Index>& seq) {
        if (!chosen.empty()) return;
        const double p = law.pmf(seq);
        if (p <= 0.0) return;
        last_positive = seq;
        run += p;
        if (u < run) chosen = seq;
      },
      cap);
  // Rounding can leave the total a hair under 1.
  if (chosen.empty()) chosen = last_positive;
  return law.sequence(chosen);
}

// ---------------------------------------------------------------------------
// i.i.d. sampling and composition
// ---------------------------------------------------------------------------

/// k i.i.d. draws from q with rescale weights 1/q.
inline SampleSequence leverage_iid_sample(const RescalingDistribution& q,
                                          Index k, RngState& rng) {
  if (k < 1) fail(ErrorKind::InvalidSize, "k must be at least 1");
  std::vector<Index> idx(k);
  for (auto& i : idx) i = q.draw(rng);
  return with_inverse_weights(std::move(idx), q);
}

namespace detail {

/// Volume-samples k positions of `big` from the rows
/// transformed.row(big_j) * sqrt(weight_j). Any invertible right transform of
/// the design leaves the volume law unchanged, so callers pass a
/// well-conditioned basis (e.g. U = X (X^T X)^{-1/2}).
inline SampleSequence compose_on_rows(const Matrix& transformed,
                                      const SampleSequence& big, Index k,
                                      RngState& rng) {
  const auto d = static_cast<Index>(transformed.cols());
  if (big.size() < k || k < d) {
    fail(ErrorKind::InvalidSize, "composition needs d <= k <= |pi|");
  }
  if (big.size() == k) return big;
  Matrix rows(static_cast<Eigen::Index>(big.size()), transformed.cols());
  for (std::size_t j = 0; j < big.size(); ++j) {
    const Index i = big.indices[j];
    if (i >= static_cast<Index>(transformed.rows())) {
      fail(ErrorKind::IndexOutOfRange, "sequence index out of range");
    }
    rows.row(static_cast<Eigen::Index>(j)) =
        std::sqrt(big.rescale_weights[j]) * transformed.row(static_cast<Eigen::Index>(i));
  }
  const SubsetSample positions = volume_sample(rows, k, rng);
  SampleSequence out;
  out.indices.reserve(k);
  out.rescale_weights.reserve(k);
  for (Index p : positions.indices) {
    out.indices.push_back(big.indices[p]);
    out.rescale_weights.push_back(big.rescale_weights[p]);
  }
  return out;
}

}  // namespace detail

/// Reduces a rescaled sample of size s to size k by standard volume sampling
/// over its rescaled rows x_{pi_j} sqrt(w_j). Output keeps the positional
/// order of pi and inherits its weights.
inline SampleSequence compose_subsample(const Matrix& X,
                                        const SampleSequence& big, Index k,
                                        RngState& rng) {
  return detail::compose_on_rows(X, big, k, rng);
}

/// Same, with the weights of `big` reset to 1/q.
inline SampleSequence compose_subsample(const Matrix& X,
                                        const RescalingDistribution& q,
                                        const SampleSequence& big, Index k,
                                        RngState& rng) {
  return detail::compose_on_rows(X, with_inverse_weights(big.indices, q), k, rng);
}

// ---------------------------------------------------------------------------
// Determinantal rejection sampling
// ---------------------------------------------------------------------------

struct RejectionDiagnostics {
  std::size_t trials = 0;
  std::size_t proposal_size = 0;
  /// Raw (unclamped) acceptance ratio of every proposal.
  std::vector<double> acceptance_ratios;
  double max_raw_ratio = 0.0;

  void record(double ratio) {
    ++trials;
    acceptance_ratios.push_back(ratio);
    max_raw_ratio = std::max(max_raw_ratio, ratio);
  }
};

namespace detail {

/// det((1/s) sum_j c_j z_j z_j^T) for rows z_j = basis.row(idx_j) and
/// coefficients c_j. Zero when the matrix is not positive definite.
inline double scaled_gram_det(const Matrix& basis,
                              const std::vector<Index>& idx,
                              const std::vector<double>& coeff) {
  const auto d = basis.cols();
  Matrix M = Matrix::Zero(d, d);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto z = basis.row(static_cast<Eigen::Index>(idx[j]));
    M.noalias() += coeff[j] * z.transpose() * z;
  }
  M /= static_cast<double>(idx.size());
  Eigen::LLT<Matrix> llt(M);
  if (llt.info() != Eigen::Success) return 0.0;
  const Vector diag = Matrix(llt.matrixL()).diagonal();
  return diag.array().square().prod();
}

inline void require_ratio_bounded(double ratio) {
  if (ratio > 1.0 + kRatioSlack) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "acceptance ratio " << ratio << " exceeds 1 beyond rounding";
    fail(ErrorKind::NonConvergence, msg.str());
  }
}

}  // namespace detail

/// Leveraged volume sampling via determinantal rejection sampling.
/// Construction does the O(n d^2) preprocessing (factorization and leverage
/// scores); each sample() then costs O((s + k) d^2) per trial independent
/// of n, apart from O(log n) index lookups.
class LeveragedVolumeSampler {
 public:
  explicit LeveragedVolumeSampler(const Matrix& X,
                                  std::size_t max_trials = kDefaultMaxTrials)
      : fact_(gram_factorize(X)),
        basis_(orthogonalize(X, fact_)),
        leverage_(leverage_scores(X, fact_)),
        q_(RescalingDistribution::leveraged(leverage_)),
        max_trials_(max_trials) {}

  Index n() const noexcept { return static_cast<Index>(basis_.rows()); }
  Index d() const noexcept { return static_cast<Index>(basis_.cols()); }
  const Vector& leverage() const noexcept { return leverage_; }
  const RescalingDistribution& q() const noexcept { return q_; }
  const GramFactorization& factorization() const noexcept { return fact_; }

  /// s = max(k, 4 d^2).
  std::size_t proposal_size(Index k) const noexcept {
    return std::max<std::size_t>(k, 4 * d() * d());
  }

  /// det((1/s) X^T Q_pi X) / det(X^T X) for an i.i.d. proposal pi, computed
  /// on the orthonormal basis U so the denominator is exactly one.
  double acceptance_ratio(const std::vector<Index>& proposal) const {
    std::vector<double> coeff(proposal.size());
    for (std::size_t j = 0; j < proposal.size(); ++j) coeff[j] = 1.0 / q_[proposal[j]];
    return detail::scaled_gram_det(basis_, proposal, coeff);
  }

  /// Size-s q-rescaled volume sample (the accepted proposal).
  SampleSequence sample_proposal(std::size_t s, RngState& rng,
                                 RejectionDiagnostics* diag = nullptr) const {
    if (diag) diag->proposal_size = s;
    std::vector<Index> proposal(s);
    for (std::size_t trial = 0; trial < max_trials_; ++trial) {
      for (auto& i : proposal) i = q_.draw(rng);
      const double ratio = acceptance_ratio(proposal);
      if (diag) diag->record(ratio);
      detail::require_ratio_bounded(ratio);
      if (rng.bernoulli(std::min(ratio, 1.0))) {
        return with_inverse_weights(proposal, q_);
      }
    }
    fail(ErrorKind::NonConvergence,
         "determinantal rejection sampling exceeded " +
             std::to_string(max_trials_) + " trials");
  }

  SampleSequence sample(Index k, RngState& rng,
                        RejectionDiagnostics* diag = nullptr) const {
    if (k < d()) {
      fail(ErrorKind::InvalidSize, "leveraged volume sampling needs k >= d");
    }
    const SampleSequence big = sample_proposal(proposal_size(k), rng, diag);
    return detail::compose_on_rows(basis_, big, k, rng);
  }

 private:
  GramFactorization fact_;
  Matrix basis_;
  Vector leverage_;
  RescalingDistribution q_;
  std::size_t max_trials_;
};

inline SampleSequence leveraged_volume_sample(const Matrix& X, Index k,
                                              RngState& rng,
                                              RejectionDiagnostics* diag = nullptr) {
  if (k < static_cast<Index>(X.cols())) {
    fail(ErrorKind::InvalidSize, "leveraged volume sampling needs k >= d");
  }
  return LeveragedVolumeSampler(X).sample(k, rng, diag);
}

// ---------------------------------------------------------------------------
// Coupled sampling
// ---------------------------------------------------------------------------

struct CoupledSample {
  SubsetSample volume;   // S, distributed as standard volume sampling
  SubsetSample uniform;  // T, uniform without replacement given |T|; T in S
  std::size_t rejections = 0;
};

/// Runs reverse iterative sampling with candidates drawn uniformly from all
/// of [m]; every candidate is also removed from T. `rejections` counts the
/// candidates in S whose removal was rejected.
inline CoupledSample coupled_sample(const Matrix& rows, Index k, RngState& rng) {
  const auto m = static_cast<Index>(rows.rows());
  const auto d = static_cast<Index>(rows.cols());
  detail::require_volume_size(m, d, k);
  require_finite(rows, "row matrix");
  CoupledSample out;
  std::vector<char> in_t(m, 1);
  if (k < m) {
    detail::ShrinkingRowSet set(rows);
    std::size_t stalled = 0;
    while (set.size() > k) {
      const Index i = rng.uniform_index(m);
      in_t[i] = 0;
      if (!set.contains(i)) continue;
      const double w = std::clamp(set.removal_weight(i), 0.0, 1.0);
      if (rng.bernoulli(w)) {
        set.remove(i, w);
        stalled = 0;
      } else {
        ++out.rejections;
        if (++stalled > detail::removal_trial_cap(set.size())) {
          fail(ErrorKind::NonConvergence, "coupled sampling stalled");
        }
      }
    }
    out.volume.indices = set.members();
    std::sort(out.volume.indices.begin(), out.volume.indices.end());
  } else {
    out.volume.indices.resize(m);
    std::iota(out.volume.indices.begin(), out.volume.indices.end(), Index{0});
  }
  for (Index i = 0; i < m; ++i) {
    if (in_t[i]) out.uniform.indices.push_back(i);
  }
  return out;
}

/// E[R] = sum_{t=k+1}^{m} d / (t - d): each size t contributes the mean of a
/// geometric count of failures with success probability (t - d) / t.
inline double coupled_expected_rejections(Index m, Index d, Index k) {
  double total = 0.0;
  for (Index t = k + 1; t <= m; ++t) total += double(d) / double(t - d);
  return total;
}

// ---------------------------------------------------------------------------
// Fast leveraged volume sampling with approximate leverage scores
// ---------------------------------------------------------------------------

enum class SketchKind { Gaussian, Exact };
enum class WeakEstimateKind { Noisy, Exact, Sketched };

struct FastSamplerOptions {
  SketchKind sketch = SketchKind::Gaussian;
  WeakEstimateKind weak = WeakEstimateKind::Noisy;
  std::size_t max_trials = kDefaultMaxTrials;
  std::size_t sketch_attempts = 5;
  /// Overrides ceil(20 d ln(d+1) / eps^2) when set.
  std::optional<std::size_t> sketch_rows;
};

struct FastDiagnostics : RejectionDiagnostics {
  std::size_t inner_proposals = 0;
  std::size_t inner_accepts = 0;
  double max_inner_parameter = 0.0;
};

/// eps / (1 - eps) <= 1 / (16 d).
inline bool fast_epsilon_admissible(double eps, Index d) {
  return eps >= 0.0 && eps < 1.0 && eps / (1.0 - eps) <= 1.0 / (16.0 * double(d)) + 1e-15;
}

inline std::size_t gaussian_sketch_rows(Index d, double eps) {
  return static_cast<std::size_t>(
      std::ceil(20.0 * double(d) * std::log(double(d) + 1.0) / (eps * eps)));
}

/// Leveraged volume sampling driven by a spectral approximation
/// A = (1 +- eps) X^T X and weak leverage estimates l~ = (1 +- 1/2) l.
/// Indices are drawn from l~ and thinned with probability
/// (1 - eps) l^_i / (2 l~_i) to follow l^_i = x_i^T A^{-1} x_i; the outer
/// rejection step uses det((1/s) X^T Q_pi X) / det(A) with s = max(k, 8 d^2).
/// The result is exactly q-rescaled volume sampling with q proportional to l^.
class FastLeveragedVolumeSampler {
 public:
  FastLeveragedVolumeSampler(const Matrix& X, double eps, RngState& rng,
                             FastSamplerOptions options = {})
      : X_(X), eps_(eps), options_(options) {
    const auto d = static_cast<Index>(X.cols());
    if (!fast_epsilon_admissible(eps, d)) {
      fail(ErrorKind::InvalidArgument,
           "epsilon must satisfy eps/(1-eps) <= 1/(16 d)");
    }
    if (options_.sketch == SketchKind::Gaussian && eps == 0.0 && !options_.sketch_rows) {
      fail(ErrorKind::InvalidArgument, "a Gaussian sketch cannot reach eps = 0");
    }
    exact_ = gram_factorize(X);
    build_approx_gram(rng);
    build_weak_estimates(rng);
  }

  Index n() const noexcept { return static_cast<Index>(X_.rows()); }
  Index d() const noexcept { return static_cast<Index>(X_.cols()); }
  double epsilon() const noexcept { return eps_; }
  const Matrix& approx_gram() const noexcept { return approx_gram_; }
  const std::vector<double>& weak_estimates() const noexcept { return weak_.weights(); }
  std::size_t sketch_rows_used() const noexcept { return sketch_rows_used_; }
  /// Extreme eigenvalues of (X^T X)^{-1/2} A (X^T X)^{-1/2}.
  std::pair<double, double> spectral_bounds() const noexcept { return bounds_; }

  std::size_t proposal_size(Index k) const noexcept {
    return std::max<std::size_t>(k, 8 * d() * d());
  }

  /// l^_i = x_i^T A^{-1} x_i.
  double approx_leverage(Index i) const {
    return whiten(i).squaredNorm();
  }

  SampleSequence sample(Index k, RngState& rng, FastDiagnostics* diag = nullptr) const {
    if (k < d()) fail(ErrorKind::InvalidSize, "fast leveraged volume sampling needs k >= d");
    const std::size_t s = proposal_size(k);
    if (diag) diag->proposal_size = s;
    const double dd = static_cast<double>(d());
    Matrix z(static_cast<Eigen::Index>(s), X_.cols());
    std::vector<Index> proposal(s);
    std::vector<double> coeff(s);
    for (std::size_t trial = 0; trial < options_.max_trials; ++trial) {
      std::size_t filled = 0;
      std::size_t inner = 0;
      const std::size_t inner_cap = 1000 * s + 100000;
      while (filled < s) {
        const Index i = weak_.draw(rng);
        const Vector zi = whiten(i);
        const double lhat = zi.squaredNorm();
        const double p = (1.0 - eps_) * lhat / (2.0 * weak_raw_[i]);
        if (diag) {
          ++diag->inner_proposals;
          diag->max_inner_parameter = std::max(diag->max_inner_parameter, p);
        }
        if (p > 1.0 + kRatioSlack) {
          fail(ErrorKind::SketchFailure,
               "weak leverage estimate for row " + std::to_string(i) +
                   " is below half the true score");
        }
        if (rng.bernoulli(p)) {
          proposal[filled] = i;
          coeff[filled] = dd / lhat;
          z.row(static_cast<Eigen::Index>(filled)) = zi.transpose();
          ++filled;
          if (diag) ++diag->inner_accepts;
        }
        if (++inner > inner_cap) {
          fail(ErrorKind::NonConvergence, "inner thinning loop stalled");
        }
      }
      // det((1/s) X^T Q_pi X) / det(A), on whitened rows z = L^{-1} x.
      std::vector<Index> pos(s);
      std::iota(pos.begin(), pos.end(), Index{0});
      const double ratio = detail::scaled_gram_det(z, pos, coeff);
      if (diag) diag->record(ratio);
      detail::require_ratio_bounded(ratio);
      if (rng.bernoulli(std::min(ratio, 1.0))) {
        SampleSequence big{proposal, coeff};
        if (big.size() == k) return big;
        // Volume sampling is invariant to the whitening transform.
        SampleSequence local{pos, coeff};
        const SampleSequence chosen = detail::compose_on_rows(z, local, k, rng);
        SampleSequence out;
        for (std::size_t j = 0; j < chosen.size(); ++j) {
          out.indices.push_back(proposal[chosen.indices[j]]);
          out.rescale_weights.push_back(chosen.rescale_weights[j]);
        }
        return out;
      }
    }
    fail(ErrorKind::NonConvergence,
         "fast determinantal rejection sampling exceeded " +
             std::to_string(options_.max_trials) + " trials");
  }

 private:
  Vector whiten(Index i) const {
    return approx_llt_.matrixL().solve(
        X_.row(static_cast<Eigen::Index>(i)).transpose());
  }

  void build_approx_gram(RngState& rng) {
    const auto d = X_.cols();
    const auto n = X_.rows();
    const std::size_t attempts =
        options_.sketch == SketchKind::Exact ? 1 : std::max<std::size_t>(1, options_.sketch_attempts);
    for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
      if (options_.sketch == SketchKind::Exact) {
        approx_gram_ = exact_.gram;
        sketch_rows_used_ = 0;
      } else {
        const std::size_t m =
            options_.sketch_rows ? *options_.sketch_rows : gaussian_sketch_rows(d, eps_);
        sketch_rows_used_ = m;
        // Rows of the sketch are generated and consumed one at a time:
        // A = sum_r (g_r^T X)^T (g_r^T X) / m with g_r ~ N(0, I_n).
        approx_gram_ = Matrix::Zero(d, d);
        Vector sketched(d);
        for (std::size_t r = 0; r < m; ++r) {
          sketched.setZero();
          for (Eigen::Index i = 0; i < n; ++i) {
            sketched.noalias() += rng.normal() * X_.row(i).transpose();
          }
          approx_gram_.noalias() += sketched * sketched.transpose();
        }
        approx_gram_ /= static_cast<double>(m);
      }
      const Matrix rel = exact_.inv_sqrt * approx_gram_ * exact_.inv_sqrt;
      Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (rel + rel.transpose()),
                                               Eigen::EigenvaluesOnly);
      bounds_ = {es.eigenvalues()(0), es.eigenvalues()(d - 1)};
      const double tol = 1e-10;
      if (bounds_.first >= 1.0 - eps_ - tol && bounds_.second <= 1.0 + eps_ + tol) {
        approx_llt_.compute(approx_gram_);
        if (approx_llt_.info() == Eigen::Success) return;
      }
    }
    std::ostringstream msg;
    msg << "sketched Gram has relative spectrum [" << bounds_.first << ", "
        << bounds_.second << "], outside 1 +- " << eps_;
    fail(ErrorKind::SketchFailure, msg.str());
  }

  void build_weak_estimates(RngState& rng) {
    const Vector exact_l = leverage_scores(X_, exact_);
    const auto n = X_.rows();
    Vector est(n);
    switch (options_.weak) {
      case WeakEstimateKind::Exact:
        est = exact_l;
        break;
      case WeakEstimateKind::Noisy:
        for (Eigen::Index i = 0; i < n; ++i) est(i) = exact_l(i) * rng.uniform(0.75, 1.25);
        break;
      case WeakEstimateKind::Sketched: {
        // JL estimate of ||L^{-1} x_i||^2 with r Gaussian directions.
        const auto r = static_cast<Eigen::Index>(
            std::ceil(32.0 * std::log(2.0 * double(n) + 2.0)));
        Matrix proj(X_.cols(), r);
        for (Eigen::Index a = 0; a < proj.rows(); ++a)
          for (Eigen::Index b = 0; b < r; ++b) proj(a, b) = rng.normal();
        const Matrix L = approx_llt_.matrixL();
        const Matrix right = L.transpose().triangularView<Eigen::Upper>().solve(proj);
        est = (X_ * right).rowwise().squaredNorm() / static_cast<double>(r);
        break;
      }
    }
    weak_raw_.assign(est.data(), est.data() + est.size());
    weak_ = RescalingDistribution::normalized(est);
  }

  Matrix X_;
  double eps_;
  FastSamplerOptions options_;
  GramFactorization exact_;
  Matrix approx_gram_;
  Eigen::LLT<Matrix> approx_llt_;
  std::pair<double, double> bounds_{1.0, 1.0};
  std::size_t sketch_rows_used_ = 0;
  std::vector<double> weak_raw_;
  RescalingDistribution weak_ = RescalingDistribution::uniform(1);
};

inline SampleSequence fast_leveraged_volume_sample(const Matrix& X, Index k,
                                                   double eps, RngState& rng,
                                                   FastSamplerOptions options = {}) {
  return FastLeveragedVolumeSampler(X, eps, rng, options).sample(k, rng);
}

}  // namespace volsamp
