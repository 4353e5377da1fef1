#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include "json.hpp"

#include "volsamp/core_linalg.hpp"
#include "volsamp/enumeration.hpp"
#include "volsamp/estimators.hpp"
#include "volsamp/parallel.hpp"
#include "volsamp/rng.hpp"
#include "volsamp/sampling.hpp"

namespace volsamp {

/// Outcome of one identity or statistical check. `detail` states the
/// tolerance semantics so observed/expected can be recomputed by hand.
struct CheckReport {
  std::string name;
  bool passed = false;
  double observed = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

inline nlohmann::json to_json(const CheckReport& r) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return nullptr;
    return v > 0 ? "inf" : "-inf";
  };
  return nlohmann::json{{"name", r.name},         {"passed", r.passed},
                        {"observed", num(r.observed)}, {"expected", num(r.expected)},
                        {"tolerance", num(r.tolerance)}, {"detail", r.detail}};
}

namespace check {

inline CheckReport relative(std::string name, double observed, double expected,
                            double tol, std::string detail = {}) {
  CheckReport r{std::move(name), false, observed, expected, tol, std::move(detail)};
  const double scale = std::max(std::abs(expected), 1e-300);
  r.passed = std::abs(observed - expected) <= tol * scale;
  r.detail = "relative: |observed-expected| <= tol*|expected|" +
             (r.detail.empty() ? std::string() : "; " + r.detail);
  return r;
}

/// observed is a nonnegative deviation; passes when it is at most tol.
inline CheckReport deviation(std::string name, double observed, double tol,
                             std::string detail) {
  CheckReport r{std::move(name), false, observed, 0.0, tol, std::move(detail)};
  r.passed = observed <= tol;
  return r;
}

inline CheckReport at_most(std::string name, double observed, double bound,
                           double slack, std::string detail) {
  CheckReport r{std::move(name), false, observed, bound, slack, std::move(detail)};
  r.passed = observed <= bound + slack;
  return r;
}

inline CheckReport at_least(std::string name, double observed, double bound,
                            double slack, std::string detail) {
  CheckReport r{std::move(name), false, observed, bound, slack, std::move(detail)};
  r.passed = observed >= bound - slack;
  return r;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

}  // namespace check

struct MeanAndError {
  double mean = 0.0;
  double stderr_ = 0.0;
  double stddev = 0.0;
};

inline MeanAndError mean_and_stderr(const std::vector<double>& values) {
  MeanAndError out;
  const auto n = values.size();
  if (n == 0) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(n);
  if (n < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / double(n - 1));
  out.stderr_ = out.stddev / std::sqrt(double(n));
  return out;
}

/// Linear-interpolated empirical quantile, p in [0, 1].
inline double quantile(std::vector<double> values, double p) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const double pos = p * double(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

struct ChiSquareResult {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  std::size_t hits_in_null_cells = 0;
};

/// Pearson goodness of fit. Cells with zero probability are excluded from
/// the statistic; any count landing in one is reported separately.
inline ChiSquareResult chi_square_gof(const std::vector<double>& probs,
                                      const std::vector<std::size_t>& counts) {
  ChiSquareResult res;
  const double total = double(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  std::size_t cells = 0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (probs[c] <= 0.0) {
      res.hits_in_null_cells += counts[c];
      continue;
    }
    const double expected = total * probs[c];
    const double diff = double(counts[c]) - expected;
    res.statistic += diff * diff / expected;
    ++cells;
  }
  res.dof = cells > 1 ? double(cells - 1) : 1.0;
  boost::math::chi_squared dist(res.dof);
  res.p_value = boost::math::cdf(boost::math::complement(dist, res.statistic));
  return res;
}

inline double total_variation(const std::vector<double>& p,
                              const std::vector<double>& q) {
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

/// Base-n code of a sequence (first element most significant).
inline std::size_t sequence_code(const std::vector<Index>& seq, Index n) {
  std::size_t code = 0;
  for (Index i : seq) code = code * n + i;
  return code;
}

// ---------------------------------------------------------------------------
// Enumeration oracles
// ---------------------------------------------------------------------------

/// Sum over [n]^k of det(X^T Q_pi X) prod q against k(k-1)..(k-d+1) det(X^T X).
inline CheckReport check_cauchy_binet(const Matrix& X, const RescalingDistribution& q,
                                      Index k, double tol = 1e-8,
                                      std::uint64_t cap = kDefaultEnumerationCap) {
  require_enumerable(static_cast<std::uint64_t>(X.rows()), k, cap);
  const RescaledVolumeLaw law(X, q, k);
  double sum = 0.0;
  for_each_sequence(law.n(), k, [&](const std::vector<Index>& seq) { sum += law.weight(seq); }, cap);
  return check::relative("cauchy_binet", sum, std::exp(law.log_normalizer()), tol,
                         "n=" + std::to_string(law.n()) + " d=" + std::to_string(law.d()) +
                             " k=" + std::to_string(k));
}

/// Sum of the rescaled pmf over all sequences.
inline CheckReport check_rescaled_normalization(const Matrix& X, const RescalingDistribution& q,
                                                Index k, double tol = 1e-8) {
  const RescaledVolumeLaw law(X, q, k);
  double sum = 0.0;
  for_each_sequence(law.n(), k, [&](const std::vector<Index>& seq) { sum += law.pmf(seq); });
  return check::relative("rescaled_pmf_normalization", sum, 1.0, tol);
}

inline CheckReport check_volume_normalization(const Matrix& X, Index k, double tol = 1e-8) {
  double sum = 0.0;
  for_each_subset(static_cast<Index>(X.rows()), k, [&](const std::vector<Index>& s) {
    sum += volume_sample_pmf(X, SubsetSample{s});
  });
  return check::relative("volume_pmf_normalization", sum, 1.0, tol);
}

namespace detail {

inline double scaled_gap(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::abs(b));
}

inline Vector enumerated_q_diagonal(const RescaledVolumeLaw& law) {
  const auto n = law.n();
  return expectation_over_sequences(
      n, law.k(), [&](const std::vector<Index>& s) { return law.pmf(s); },
      [&](const std::vector<Index>& s) {
        Vector v = Vector::Zero(static_cast<Eigen::Index>(n));
        for (Index i : s) v(static_cast<Eigen::Index>(i)) += 1.0 / law.q()[i];
        return v;
      },
      Vector(Vector::Zero(static_cast<Eigen::Index>(n))));
}

}  // namespace detail

/// E[(Q_pi)_ii] = (k - d) + l_i / q_i for every i.
inline CheckReport check_marginal_expectation(const Matrix& X, const RescalingDistribution& q,
                                              Index k, double tol = 1e-8) {
  const RescaledVolumeLaw law(X, q, k);
  const Vector diag = detail::enumerated_q_diagonal(law);
  const Vector l = leverage_scores(X);
  double worst = 0.0;
  double sample_obs = 0.0, sample_exp = 0.0;
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    const double formula = double(k) - double(law.d()) + l(i) / q[static_cast<Index>(i)];
    const double gap = detail::scaled_gap(diag(i), formula);
    if (gap >= worst) {
      worst = gap;
      sample_obs = diag(i);
      sample_exp = formula;
    }
  }
  return check::deviation("marginal_expectation", worst, tol,
                          "max_i |E[Q_ii] - ((k-d) + l_i/q_i)| / max(1, formula); worst entry " +
                              check::fmt(sample_obs) + " vs " + check::fmt(sample_exp));
}

/// cov[(Q_pi)_ii, (Q_pi)_jj] = 1{i=j} E[(Q_pi)_ii]/q_i - (k-d) - (x_i^T G^{-1} x_j)^2/(q_i q_j).
inline CheckReport check_pairwise_covariance(const Matrix& X, const RescalingDistribution& q,
                                             Index k, double tol = 1e-8) {
  const RescaledVolumeLaw law(X, q, k);
  const auto n = static_cast<Eigen::Index>(law.n());
  const Matrix second = expectation_over_sequences(
      law.n(), k, [&](const std::vector<Index>& s) { return law.pmf(s); },
      [&](const std::vector<Index>& s) {
        Vector v = Vector::Zero(n);
        for (Index i : s) v(static_cast<Eigen::Index>(i)) += 1.0 / q[i];
        return Matrix(v * v.transpose());
      },
      Matrix(Matrix::Zero(n, n)));
  const Vector first = detail::enumerated_q_diagonal(law);
  const GramFactorization fact = gram_factorize(X);
  const Matrix hat = X * fact.inverse * X.transpose();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double cov = second(i, j) - first(i) * first(j);
      const double qi = q[static_cast<Index>(i)], qj = q[static_cast<Index>(j)];
      const double formula = (i == j ? first(i) / qi : 0.0) - (double(k) - double(law.d())) -
                             hat(i, j) * hat(i, j) / (qi * qj);
      worst = std::max(worst, detail::scaled_gap(cov, formula));
    }
  }
  return check::deviation("pairwise_covariance", worst, tol,
                          "max_ij |enumerated cov - formula| / max(1, |formula|)");
}

/// ||E[w_pi] - w*|| under q-rescaled volume sampling.
inline CheckReport check_unbiasedness(const RegressionProblem& p, const RescalingDistribution& q,
                                      Index k, double tol = 1e-8) {
  const RescaledVolumeLaw law(p.X, q, k);
  const EstimatorResult full = full_least_squares(p);
  const Vector mean = expectation_over_sequences(
      law.n(), k, [&](const std::vector<Index>& s) { return law.pmf(s); },
      [&](const std::vector<Index>& s) {
        return rescaled_estimator(p, law.sequence(s), full.loss).weights;
      },
      Vector(Vector::Zero(p.X.cols())));
  const double scale = std::max(1.0, full.weights.norm());
  return check::deviation("unbiasedness_rescaled", (mean - full.weights).norm() / scale, tol,
                          "||E[w_pi] - w*|| / max(1, ||w*||)");
}

/// ||E[w_S] - w*|| under standard volume sampling.
inline CheckReport check_volume_unbiasedness(const RegressionProblem& p, Index k,
                                             double tol = 1e-8) {
  const EstimatorResult full = full_least_squares(p);
  const Vector mean = expectation_over_subsets(
      p.n(), k, [&](const std::vector<Index>& s) { return volume_sample_pmf(p.X, SubsetSample{s}); },
      [&](const std::vector<Index>& s) {
        return subset_estimator(p, SubsetSample{s}, full.loss).weights;
      },
      Vector(Vector::Zero(p.X.cols())));
  const double scale = std::max(1.0, full.weights.norm());
  return check::deviation("unbiasedness_volume", (mean - full.weights).norm() / scale, tol,
                          "||E[w_S] - w*|| / max(1, ||w*||)");
}

/// lambda_min((X^T X)^{-1}/(k-d+1) - E[(X^T Q_pi X)^{-1}]) >= -tol.
inline CheckReport check_square_inverse_bound(const Matrix& X, const RescalingDistribution& q,
                                              Index k, double tol = 1e-8) {
  const RescaledVolumeLaw law(X, q, k);
  const auto d = X.cols();
  const Matrix expect = expectation_over_sequences(
      law.n(), k, [&](const std::vector<Index>& s) { return law.pmf(s); },
      [&](const std::vector<Index>& s) {
        return Matrix(weighted_gram(X, law.sequence(s)).inverse());
      },
      Matrix(Matrix::Zero(d, d)));
  const GramFactorization fact = gram_factorize(X);
  const Matrix bound = fact.inverse / (double(k) - double(d) + 1.0);
  Matrix gap = bound - expect;
  gap = 0.5 * (gap + gap.transpose());
  const double lam = min_eigenvalue_sym(gap);
  return check::at_least("square_inverse_bound", lam, 0.0, tol,
                         "lambda_min(G^{-1}/(k-d+1) - E[(X^T Q X)^{-1}]) >= -tol");
}

/// E[(X_S^T X_S)^{-1}] = (n-d+1)/(k-d+1) (X^T X)^{-1} for rows in general position.
inline CheckReport check_volume_square_inverse(const Matrix& X, Index k, double tol = 1e-8) {
  const auto n = static_cast<Index>(X.rows());
  const auto d = X.cols();
  const Matrix expect = expectation_over_subsets(
      n, k, [&](const std::vector<Index>& s) { return volume_sample_pmf(X, SubsetSample{s}); },
      [&](const std::vector<Index>& s) {
        Matrix sub(static_cast<Eigen::Index>(s.size()), d);
        for (std::size_t j = 0; j < s.size(); ++j)
          sub.row(static_cast<Eigen::Index>(j)) = X.row(static_cast<Eigen::Index>(s[j]));
        return Matrix((sub.transpose() * sub).inverse());
      },
      Matrix(Matrix::Zero(d, d)));
  const GramFactorization fact = gram_factorize(X);
  const Matrix target = fact.inverse * (double(n) - double(d) + 1.0) / (double(k) - double(d) + 1.0);
  const double scale = std::max(1.0, target.cwiseAbs().maxCoeff());
  return check::deviation("volume_square_inverse_identity",
                          (expect - target).cwiseAbs().maxCoeff() / scale, tol,
                          "max entry |E[(X_S^T X_S)^{-1}] - (n-d+1)/(k-d+1) G^{-1}| / max(1, max|target|)");
}

/// Enumerated Pr(i in S) against 1 - theta (1 - l_i).
inline CheckReport check_volume_marginals(const Matrix& X, Index k, double tol = 1e-10) {
  const auto n = static_cast<Index>(X.rows());
  Vector enumerated = Vector::Zero(X.rows());
  for_each_subset(n, k, [&](const std::vector<Index>& s) {
    const double p = volume_sample_pmf(X, SubsetSample{s});
    for (Index i : s) enumerated(static_cast<Eigen::Index>(i)) += p;
  });
  const Vector formula = volume_marginals(X, k);
  return check::deviation("volume_marginals", (enumerated - formula).cwiseAbs().maxCoeff(), tol,
                          "max_i |enumerated Pr(i in S) - (1 - theta (1 - l_i))|");
}

/// Law of pi_S (pi ~ size-s rescaled, S ~ size-k volume on rescaled rows of pi)
/// against the size-k rescaled law.
inline CheckReport check_composition_closure(const Matrix& X, const RescalingDistribution& q,
                                             Index s, Index k, double tol = 1e-8) {
  const RescaledVolumeLaw big(X, q, s);
  const RescaledVolumeLaw small(X, q, k);
  const auto n = big.n();
  const auto d = big.d();
  std::vector<double> composed(count_sequences(n, k), 0.0);
  for_each_sequence(n, s, [&](const std::vector<Index>& pi) {
    const double p_big = big.pmf(pi);
    if (p_big == 0.0) return;
    Matrix rows(static_cast<Eigen::Index>(s), X.cols());
    for (Index j = 0; j < s; ++j)
      rows.row(static_cast<Eigen::Index>(j)) = X.row(static_cast<Eigen::Index>(pi[j])) / std::sqrt(q[pi[j]]);
    const double log_total = log_det_psd(rows.transpose() * rows) +
                             log_binomial(double(s - d), double(k - d));
    for_each_subset(s, k, [&](const std::vector<Index>& pos) {
      Matrix sub(static_cast<Eigen::Index>(k), X.cols());
      std::vector<Index> seq(k);
      for (Index j = 0; j < k; ++j) {
        sub.row(static_cast<Eigen::Index>(j)) = rows.row(static_cast<Eigen::Index>(pos[j]));
        seq[j] = pi[pos[j]];
      }
      const double ld = log_det_psd(sub.transpose() * sub);
      if (std::isinf(ld)) return;
      composed[sequence_code(seq, n)] += p_big * std::exp(ld - log_total);
    });
  });
  double worst = 0.0;
  for_each_sequence(n, k, [&](const std::vector<Index>& seq) {
    worst = std::max(worst, std::abs(composed[sequence_code(seq, n)] - small.pmf(seq)));
  });
  return check::deviation("composition_closure", worst, tol,
                          "max over sequences |two-stage law - size-k rescaled pmf|; s=" +
                              std::to_string(s) + " k=" + std::to_string(k));
}

// ---------------------------------------------------------------------------
// Statistical checks
// ---------------------------------------------------------------------------

inline constexpr double kChiSquareSignificance = 1e-3;

inline CheckReport chi_square_report(std::string name, const std::vector<double>& probs,
                                     const std::vector<std::size_t>& counts) {
  const ChiSquareResult res = chi_square_gof(probs, counts);
  CheckReport r{std::move(name), false, res.p_value, kChiSquareSignificance, 0.0, {}};
  r.passed = res.p_value >= kChiSquareSignificance && res.hits_in_null_cells == 0;
  r.detail = "chi-square p-value >= significance; statistic=" + check::fmt(res.statistic) +
             " dof=" + check::fmt(res.dof) +
             " draws in zero-probability cells=" + std::to_string(res.hits_in_null_cells);
  return r;
}

/// Reverse iterative volume sampling against the exact subset pmf.
inline CheckReport check_volume_sampler(const Matrix& X, Index k, std::size_t draws,
                                        RngState& rng) {
  const auto n = static_cast<Index>(X.rows());
  std::map<std::vector<Index>, std::size_t> cell;
  std::vector<double> probs;
  for_each_subset(n, k, [&](const std::vector<Index>& s) {
    cell.emplace(s, probs.size());
    probs.push_back(volume_sample_pmf(X, SubsetSample{s}));
  });
  std::vector<std::size_t> counts(probs.size(), 0);
  for (std::size_t t = 0; t < draws; ++t) ++counts[cell.at(volume_sample(X, k, rng).indices)];
  return chi_square_report("volume_sampler_chi_square", probs, counts);
}

struct SequenceHistogram {
  std::vector<double> probs;
  std::vector<std::size_t> counts;

  std::vector<double> empirical() const {
    const double total = double(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    std::vector<double> e(counts.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = double(counts[i]) / total;
    return e;
  }
};

/// Histogram of a sequence sampler against the exact law (sequences of
/// length k over [n], coded in base n).
template <class Sampler>
SequenceHistogram sequence_histogram(const RescaledVolumeLaw& law, std::size_t draws,
                                     Sampler&& sampler) {
  SequenceHistogram h;
  const auto n = law.n();
  h.probs.assign(count_sequences(n, law.k()), 0.0);
  for_each_sequence(n, law.k(), [&](const std::vector<Index>& seq) {
    h.probs[sequence_code(seq, n)] = law.pmf(seq);
  });
  h.counts.assign(h.probs.size(), 0);
  for (std::size_t t = 0; t < draws; ++t) {
    const SampleSequence pi = sampler();
    ++h.counts[sequence_code(pi.indices, n)];
  }
  return h;
}

inline std::vector<CheckReport> check_leveraged_sampler(const Matrix& X, Index k,
                                                        std::size_t draws, RngState& rng) {
  const LeveragedVolumeSampler sampler(X);
  const RescaledVolumeLaw law(X, sampler.q(), k);
  const SequenceHistogram h =
      sequence_histogram(law, draws, [&] { return sampler.sample(k, rng); });
  std::vector<CheckReport> out;
  out.push_back(chi_square_report("leveraged_sampler_chi_square", h.probs, h.counts));
  out.push_back(check::deviation("leveraged_sampler_tv", total_variation(h.empirical(), h.probs),
                                 0.02, "total variation to the exact rescaled pmf"));
  return out;
}

/// Acceptance ratios of i.i.d. leverage proposals: every ratio <= 1 and mean
/// >= 3/4 (exact mean is s(s-1)..(s-d+1)/s^d).
inline std::vector<CheckReport> check_acceptance_rate(const Matrix& X, Index k,
                                                      std::size_t proposals, RngState& rng) {
  const LeveragedVolumeSampler sampler(X);
  const std::size_t s = sampler.proposal_size(k);
  std::vector<double> ratios;
  ratios.reserve(proposals);
  std::vector<Index> pi(s);
  double max_ratio = 0.0;
  for (std::size_t t = 0; t < proposals; ++t) {
    for (auto& i : pi) i = sampler.q().draw(rng);
    const double r = sampler.acceptance_ratio(pi);
    ratios.push_back(r);
    max_ratio = std::max(max_ratio, r);
  }
  const MeanAndError m = mean_and_stderr(ratios);
  const double exact = std::exp(log_falling_factorial(double(s), double(sampler.d())) -
                                double(sampler.d()) * std::log(double(s)));
  std::vector<CheckReport> out;
  out.push_back(check::at_least("acceptance_mean", m.mean, 0.75, 3.0 * m.stderr_,
                                "mean ratio >= 3/4 - 3 stderr; s=" + std::to_string(s) +
                                    " exact mean=" + check::fmt(exact) +
                                    " stderr=" + check::fmt(m.stderr_)));
  out.push_back(check::at_most("acceptance_ratio_max", max_ratio, 1.0, kRatioSlack,
                               "largest raw ratio over " + std::to_string(proposals) +
                                   " proposals <= 1 + 1e-9"));
  return out;
}

/// Coupled sampling: T subset of S, S ~ volume sampling, and the rejection
/// count R against its exact mean and tail bound.
inline std::vector<CheckReport> check_coupled_sampling(const Matrix& U, Index k, std::size_t runs,
                                                       RngState& rng) {
  const auto m = static_cast<Index>(U.rows());
  const auto d = static_cast<Index>(U.cols());
  std::map<std::vector<Index>, std::size_t> cell;
  std::vector<double> probs;
  for_each_subset(m, k, [&](const std::vector<Index>& s) {
    cell.emplace(s, probs.size());
    probs.push_back(volume_sample_pmf(U, SubsetSample{s}));
  });
  std::vector<std::size_t> counts(probs.size(), 0);
  std::vector<double> rejections;
  std::size_t subset_violations = 0;
  for (std::size_t t = 0; t < runs; ++t) {
    const CoupledSample cs = coupled_sample(U, k, rng);
    if (!std::includes(cs.volume.indices.begin(), cs.volume.indices.end(),
                       cs.uniform.indices.begin(), cs.uniform.indices.end())) {
      ++subset_violations;
    }
    ++counts[cell.at(cs.volume.indices)];
    rejections.push_back(double(cs.rejections));
  }
  const MeanAndError r = mean_and_stderr(rejections);
  const double exact = coupled_expected_rejections(m, d, k);
  const double log_bound = double(d) * std::log(double(m - d) / double(k - d));
  std::size_t tail = 0;
  for (double v : rejections) tail += v >= 4.0 * exact ? 1 : 0;
  const double tail_frac = double(tail) / double(runs);
  const double tail_bound = std::exp(2.0) * double(k - d) / double(m - d);
  const double tail_se = std::sqrt(std::max(tail_bound * (1 - std::min(tail_bound, 1.0)), 1e-12) / double(runs));

  std::vector<CheckReport> out;
  out.push_back(check::deviation("coupled_t_subset_s", double(subset_violations), 0.0,
                                 "runs where T is not a subset of S"));
  out.push_back(chi_square_report("coupled_s_chi_square", probs, counts));
  out.push_back(check::relative("coupled_rejections_mean", r.mean, exact,
                                3.0 * r.stderr_ / std::max(exact, 1e-300),
                                "|mean R - sum d/(t-d)| <= 3 stderr; stderr=" + check::fmt(r.stderr_)));
  out.push_back(check::at_most("coupled_rejections_log_bound", r.mean, log_bound, 3.0 * r.stderr_,
                               "mean R <= d ln((m-d)/(k-d)) + 3 stderr"));
  out.push_back(check::at_most("coupled_rejections_tail", tail_frac, tail_bound, 3.0 * tail_se,
                               "Pr(R >= 4 E[R]) <= e^2 (k-d)/(m-d) + 3 stderr"));
  return out;
}

/// E||(1/k) U^T Q_pi r - U^T r||^2 <= (d/k + d^2/k^2) ||r||^2 under leveraged
/// volume sampling on an orthonormal U.
inline CheckReport check_matrix_multiplication(const Matrix& U, const Vector& r, Index k,
                                               std::size_t trials, RngState& rng) {
  const auto d = double(U.cols());
  const LeveragedVolumeSampler sampler(U);
  const Vector target = U.transpose() * r;
  std::vector<double> stats;
  stats.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    const SampleSequence pi = sampler.sample(k, rng);
    Vector est = Vector::Zero(U.cols());
    for (std::size_t j = 0; j < pi.size(); ++j) {
      const auto i = static_cast<Eigen::Index>(pi.indices[j]);
      est.noalias() += pi.rescale_weights[j] * r(i) * U.row(i).transpose();
    }
    stats.push_back((est / double(k) - target).squaredNorm());
  }
  const MeanAndError m = mean_and_stderr(stats);
  const double bound = (d / double(k) + d * d / (double(k) * double(k))) * r.squaredNorm();
  return check::at_most("matrix_multiplication_k" + std::to_string(k), m.mean, bound,
                        3.0 * m.stderr_,
                        "mean statistic <= (d/k + d^2/k^2)||r||^2 + 3 stderr; stderr=" +
                            check::fmt(m.stderr_));
}

inline Index k_embed(Index d) {
  return static_cast<Index>(std::ceil(10.0 * double(d) * std::log(double(d) + 2.0)));
}

/// Fraction of trials with lambda_min((1/k) U^T Q_pi U) <= 1/8.
inline CheckReport check_subspace_embedding(const Matrix& U, Index k, std::size_t trials,
                                            RngState& rng, double delta = 0.05) {
  const LeveragedVolumeSampler sampler(U);
  std::size_t failures = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    const SampleSequence pi = sampler.sample(k, rng);
    Matrix M = weighted_gram(U, pi) / double(k);
    M = 0.5 * (M + M.transpose());
    const double lam = min_eigenvalue_sym(M);
    worst = std::min(worst, lam);
    if (lam <= 0.125) ++failures;
  }
  return check::at_most("subspace_embedding_d" + std::to_string(U.cols()) + "_k" +
                            std::to_string(k),
                        double(failures) / double(trials), delta, 0.0,
                        "failure fraction (lambda_min <= 1/8) <= delta; smallest lambda_min=" +
                            check::fmt(worst));
}

inline constexpr double kLossBoundConstant = 8.0;

/// epsilon implied by k = C (d ln d + d / eps); +inf when k is too small.
inline double implied_epsilon(Index d, Index k, double c = kLossBoundConstant) {
  const double dd = double(d);
  const double room = double(k) / c - dd * std::log(dd);
  return room > 0.0 ? dd / room : std::numeric_limits<double>::infinity();
}

/// 90th percentile of L(w_pi)/L(w*) under leveraged volume sampling <= 1 + eps.
inline CheckReport check_loss_bound(const RegressionProblem& p, Index k, std::size_t trials,
                                    RngState& rng) {
  const EstimatorResult full = full_least_squares(p);
  // Rounding leaves a consistent system with a tiny positive loss.
  if (!(full.loss > 1e-12 * p.y.squaredNorm())) {
    fail(ErrorKind::DegenerateLoss, "optimal loss is zero; the loss ratio is undefined");
  }
  const LeveragedVolumeSampler sampler(p.X);
  std::vector<double> ratios;
  ratios.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    ratios.push_back(rescaled_estimator(p, sampler.sample(k, rng), full.loss).loss_ratio);
  }
  const double eps = implied_epsilon(p.d(), k);
  const double p90 = quantile(ratios, 0.9);
  const MeanAndError m = mean_and_stderr(ratios);
  return check::at_most("loss_bound_k" + std::to_string(k), p90, 1.0 + eps, 0.0,
                        "90th percentile loss ratio <= 1 + eps with k = 8 (d ln d + d/eps); "
                        "median=" + check::fmt(quantile(ratios, 0.5)) +
                            " mean=" + check::fmt(m.mean));
}

/// Outer acceptance ratios of the fast sampler: all <= 1 and mean >= 3/4.
inline std::vector<CheckReport> check_fast_acceptance(const FastLeveragedVolumeSampler& sampler,
                                                      Index k, std::size_t samples,
                                                      RngState& rng) {
  FastDiagnostics diag;
  for (std::size_t t = 0; t < samples; ++t) (void)sampler.sample(k, rng, &diag);
  const MeanAndError m = mean_and_stderr(diag.acceptance_ratios);
  std::vector<CheckReport> out;
  out.push_back(check::at_most("fast_acceptance_ratio_max", diag.max_raw_ratio, 1.0, kRatioSlack,
                               "largest raw outer ratio over " +
                                   std::to_string(diag.trials) + " proposals"));
  out.push_back(check::at_least("fast_acceptance_mean", m.mean, 0.75, 3.0 * m.stderr_,
                                "mean outer ratio >= 3/4 - 3 stderr; eps=" +
                                    check::fmt(sampler.epsilon()) + " s=" +
                                    std::to_string(diag.proposal_size)));
  out.push_back(check::at_most("fast_inner_parameter_max", diag.max_inner_parameter, 1.0,
                               kRatioSlack, "largest inner Bernoulli parameter"));
  return out;
}

/// Fast sampler with exact inputs (eps = 0, A = X^T X, l~ = l) against the
/// leveraged rescaled law.
inline CheckReport check_fast_exact_distribution(const Matrix& X, Index k, std::size_t draws,
                                                 RngState& rng) {
  FastSamplerOptions opt;
  opt.sketch = SketchKind::Exact;
  opt.weak = WeakEstimateKind::Exact;
  const FastLeveragedVolumeSampler fast(X, 0.0, rng, opt);
  const RescaledVolumeLaw law(X, RescalingDistribution::leveraged(leverage_scores(X)), k);
  const SequenceHistogram h = sequence_histogram(law, draws, [&] { return fast.sample(k, rng); });
  return check::deviation("fast_exact_tv", total_variation(h.empirical(), h.probs), 0.02,
                          "total variation to the leveraged rescaled pmf");
}

// ---------------------------------------------------------------------------
// Built-in instances and suites
// ---------------------------------------------------------------------------

struct ToyInstance {
  std::string name;
  Matrix X;
  Vector y;
  std::vector<double> q;
};

/// Gaussian design (rank checked) with responses and a random q bounded
/// away from zero.
inline ToyInstance random_instance(RngState& rng, Index n, Index d, std::string name = "random") {
  ToyInstance t;
  t.name = std::move(name);
  while (true) {
    t.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < t.X.rows(); ++i)
      for (Eigen::Index j = 0; j < t.X.cols(); ++j) t.X(i, j) = rng.normal();
    try {
      (void)gram_factorize(t.X);
      if (first_zero_row(t.X) < 0) break;
    } catch (const Error&) {
    }
  }
  t.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < t.y.size(); ++i) t.y(i) = rng.normal();
  std::vector<double> w(n);
  for (auto& v : w) v = rng.uniform(0.2, 1.0);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= total;
  t.q = RescalingDistribution::normalized(std::span<const double>(w)).weights();
  return t;
}

inline Matrix toy_three_by_two() {
  Matrix X(3, 2);
  X << 1, 0, 0, 1, 1, 1;
  return X;
}

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  /// Replaces every identity tolerance with a negative value so all identity
  /// checks fail; exercises the failure path of the runner.
  bool inject_tolerance_failure = false;
};

inline std::vector<CheckReport> identity_suite(const VerifyOptions& opt) {
  const double tol8 = opt.inject_tolerance_failure ? -1.0 : 1e-8;
  const double tol10 = opt.inject_tolerance_failure ? -1.0 : 1e-10;
  std::vector<CheckReport> out;
  auto tag = [](CheckReport r, const std::string& instance) {
    r.name += "[" + instance + "]";
    return r;
  };

  Matrix two(2, 1);
  two << 1, 1;
  const auto half = RescalingDistribution::uniform(2);
  out.push_back(tag(check_cauchy_binet(two, half, 2, tol8), "2x1"));
  out.push_back(tag(check_rescaled_normalization(two, half, 2, tol8), "2x1"));
  out.push_back(tag(check_marginal_expectation(two, half, 2, tol8), "2x1"));
  out.push_back(tag(check_pairwise_covariance(two, half, 2, tol8), "2x1"));
  out.push_back(tag(check_square_inverse_bound(two, half, 1, tol8), "2x1"));

  const Matrix toy = toy_three_by_two();
  out.push_back(tag(check_volume_normalization(toy, 2, tol8), "3x2"));
  out.push_back(tag(check_volume_marginals(toy, 2, tol10), "3x2"));
  out.push_back(tag(check_composition_closure(toy, RescalingDistribution::uniform(3), 3, 2, tol8),
                    "3x2"));

  RngState rng(opt.seed, 1);
  for (int rep = 0; rep < 6; ++rep) {
    const Index n = 3 + Index(rep % 3);
    const Index d = 1 + Index(rep % 2);
    const ToyInstance t = random_instance(rng, n, d);
    const RescalingDistribution q(t.q);
    const std::string name = "random" + std::to_string(rep) + " n=" + std::to_string(n) +
                             " d=" + std::to_string(d);
    const RegressionProblem p{t.X, t.y};
    for (Index k = d; k <= std::min<Index>(d + 2, 4); ++k) {
      out.push_back(tag(check_cauchy_binet(t.X, q, k, tol8), name));
      out.push_back(tag(check_marginal_expectation(t.X, q, k, tol8), name));
      out.push_back(tag(check_pairwise_covariance(t.X, q, k, tol8), name));
      out.push_back(tag(check_unbiasedness(p, q, k, tol8), name));
      out.push_back(tag(check_square_inverse_bound(t.X, q, k, tol8), name));
    }
    out.push_back(tag(check_volume_unbiasedness(p, std::min<Index>(d + 1, n), tol8), name));
    out.push_back(tag(check_volume_marginals(t.X, std::min<Index>(d + 1, n), tol10), name));
  }
  const ToyInstance gp = random_instance(rng, 4, 2, "general_position");
  out.push_back(tag(check_volume_square_inverse(gp.X, 3, tol8), "n=4 d=2"));
  const ToyInstance comp = random_instance(rng, 3, 1);
  out.push_back(tag(check_composition_closure(comp.X, RescalingDistribution(comp.q), 3, 2, tol8),
                    "n=3 d=1"));
  return out;
}

/// Orthonormal basis of a Gaussian n x d design.
inline Matrix random_orthonormal(RngState& rng, Index n, Index d) {
  return orthogonalize(random_instance(rng, n, d).X);
}

inline std::vector<CheckReport> statistical_suite(const VerifyOptions& opt) {
  using Task = std::function<std::vector<CheckReport>(RngState&)>;
  std::vector<Task> tasks;
  tasks.push_back([](RngState& rng) {
    const Matrix X = random_instance(rng, 6, 2).X;
    return std::vector<CheckReport>{check_volume_sampler(X, 3, 100000, rng)};
  });
  tasks.push_back([](RngState& rng) {
    const Matrix X = random_instance(rng, 4, 2).X;
    return check_leveraged_sampler(X, 2, 200000, rng);
  });
  tasks.push_back([](RngState& rng) {
    std::vector<CheckReport> out;
    for (Index d = 1; d <= 4; ++d) {
      const Matrix X = random_instance(rng, 40, d).X;
      for (auto& r : check_acceptance_rate(X, d, 2000, rng)) {
        r.name += "[d=" + std::to_string(d) + "]";
        out.push_back(std::move(r));
      }
    }
    return out;
  });
  tasks.push_back([](RngState& rng) {
    const Matrix U = random_orthonormal(rng, 8, 2);
    return check_coupled_sampling(U, 4, 10000, rng);
  });
  tasks.push_back([](RngState& rng) {
    const Matrix U = random_orthonormal(rng, 32, 2);
    Vector r(32);
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = rng.normal();
    std::vector<CheckReport> out;
    for (Index k : {Index(8), Index(16)}) out.push_back(check_matrix_multiplication(U, r, k, 2000, rng));
    return out;
  });
  tasks.push_back([](RngState& rng) {
    std::vector<CheckReport> out;
    for (Index d : {Index(2), Index(4)}) {
      const Matrix U = random_orthonormal(rng, 64, d);
      out.push_back(check_subspace_embedding(U, k_embed(d), 500, rng));
    }
    return out;
  });
  tasks.push_back([](RngState& rng) {
    const ToyInstance t = random_instance(rng, 200, 3);
    return std::vector<CheckReport>{check_loss_bound({t.X, t.y}, 120, 300, rng)};
  });
  tasks.push_back([](RngState& rng) {
    const Matrix X = random_instance(rng, 20, 2).X;
    const FastLeveragedVolumeSampler fast(X, 1.0 / 33.0, rng);
    return check_fast_acceptance(fast, 2, 2000, rng);
  });
  tasks.push_back([](RngState& rng) {
    const Matrix X = random_instance(rng, 4, 2).X;
    return std::vector<CheckReport>{check_fast_exact_distribution(X, 2, 200000, rng)};
  });

  std::vector<std::vector<CheckReport>> results(tasks.size());
  const RngState root(opt.seed, 2);
  parallel_for(tasks.size(), opt.jobs, [&](std::size_t i) {
    RngState rng = root.derive(i);
    results[i] = tasks[i](rng);
  });
  std::vector<CheckReport> out;
  for (auto& group : results)
    for (auto& r : group) out.push_back(std::move(r));
  return out;
}

}  // namespace volsamp
