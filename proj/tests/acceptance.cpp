// Acceptance criteria: one [PASS]/[FAIL] line each, nonzero exit on any failure.
// Enumeration criteria are checked twice: by the library's verification
// routines and by the brute-force oracles in oracles.hpp, which normalize by
// summation instead of the closed forms.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "volsamp/experiments.hpp"
#include "volsamp/verification.hpp"

using namespace volsamp;

namespace {

int failures = 0;

void report(const std::string& id, bool pass, const std::string& what, double seconds) {
  std::printf("[%s] %s %s (%.2fs)\n", pass ? "PASS" : "FAIL", id.c_str(), what.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

template <class Fn>
void criterion(const std::string& id, Fn&& fn, double budget_seconds = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string what;
  bool pass = false;
  try {
    pass = fn(what);
  } catch (const std::exception& e) {
    what = std::string("threw: ") + e.what();
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_seconds > 0 && s > budget_seconds) {
    pass = false;
    what += "; exceeded " + check::fmt(budget_seconds) + "s budget";
  }
  report(id, pass, what, s);
}

struct Instance {
  Matrix X;
  Vector y;
  std::vector<double> q;
  int k;
};

/// Random instances with n <= 5, d <= 2, k <= 4, random (non-leveraged) q.
std::vector<Instance> instances(std::uint64_t seed, int count) {
  std::mt19937_64 gen(seed);
  std::vector<Instance> out;
  for (int i = 0; i < count; ++i) {
    const int d = 1 + i % 2;
    const int n = d + 1 + static_cast<int>(gen() % (5 - d));
    const int k = d + static_cast<int>(gen() % (5 - d));
    Instance inst{oracle::gaussian(gen, n, d), oracle::gaussian(gen, n, 1), oracle::random_q(gen, n), k};
    out.push_back(inst);
  }
  return out;
}

std::string worst(const std::string& label, double v) { return label + "=" + check::fmt(v); }

}  // namespace

int main() {
  const auto set50 = instances(101, 50);
  const auto set20 = instances(202, 20);

  criterion("AC1", [&](std::string& what) {
    bool ok = true;
    double dev = 0;
    for (const auto& in : set50) {
      const RescalingDistribution q(in.q);
      ok &= check_cauchy_binet(in.X, q, in.k).passed;
      double total = 0;
      (void)oracle::sequence_law(in.X, in.q, in.k, &total);
      double closed = (in.X.transpose() * in.X).determinant();
      for (int j = 0; j < in.X.cols(); ++j) closed *= (in.k - j);
      dev = std::max(dev, std::abs(total - closed) / closed);
    }
    what = "Cauchy-Binet sum on 50 instances; max relative deviation " + check::fmt(dev);
    return ok && dev <= 1e-8;
  }, 10);

  criterion("AC2", [&](std::string& what) {
    bool ok = true;
    double dev = 0;
    for (const auto& in : set20) {
      const RegressionProblem p{in.X, in.y};
      const RescalingDistribution q(in.q);
      const int d = static_cast<int>(in.X.cols()), n = static_cast<int>(in.X.rows());
      const Vector wstar = full_least_squares(p).weights;
      for (int k = d; k <= std::min(4, d + 2); ++k) {
        ok &= check_unbiasedness(p, q, k).passed;
        Vector mean = Vector::Zero(d);
        for (const auto& [s, prob] : oracle::sequence_law(in.X, in.q, k)) {
          if (prob <= 0) continue;
          std::vector<double> w(k);
          for (int j = 0; j < k; ++j) w[j] = 1.0 / in.q[s[j]];
          mean += prob * oracle::weighted_solve(in.X, in.y, s, w);
        }
        dev = std::max(dev, (mean - wstar).norm() / std::max(1.0, wstar.norm()));
      }
      for (int k = d; k <= n; ++k) {
        ok &= check_volume_unbiasedness(p, k).passed;
        Vector mean = Vector::Zero(d);
        for (const auto& [s, prob] : oracle::subset_law(in.X, k)) {
          if (prob <= 0) continue;
          mean += prob * oracle::weighted_solve(in.X, in.y, s, std::vector<double>(k, 1.0));
        }
        dev = std::max(dev, (mean - wstar).norm() / std::max(1.0, wstar.norm()));
      }
    }
    what = "E[w] = w* (rescaled and subset) on 20 instances; " + worst("max deviation", dev);
    return ok && dev <= 1e-8;
  }, 30);

  criterion("AC3", [&](std::string& what) {
    bool ok = true;
    double dev = 0;
    for (const auto& in : set20) {
      const RescalingDistribution q(in.q);
      ok &= check_marginal_expectation(in.X, q, in.k).passed;
      ok &= check_pairwise_covariance(in.X, q, in.k).passed;
      const int n = static_cast<int>(in.X.rows()), d = static_cast<int>(in.X.cols());
      Vector m1 = Vector::Zero(n);
      Matrix m2 = Matrix::Zero(n, n);
      for (const auto& [s, prob] : oracle::sequence_law(in.X, in.q, in.k)) {
        Vector diag = Vector::Zero(n);
        for (auto i : s) diag(i) += 1.0 / in.q[i];
        m1 += prob * diag;
        m2 += prob * diag * diag.transpose();
      }
      const Matrix H = in.X * (in.X.transpose() * in.X).inverse() * in.X.transpose();
      for (int i = 0; i < n; ++i) {
        const double mean_formula = (in.k - d) + H(i, i) / in.q[i];
        dev = std::max(dev, std::abs(m1(i) - mean_formula) / std::max(1.0, mean_formula));
        for (int j = 0; j < n; ++j) {
          const double cov = m2(i, j) - m1(i) * m1(j);
          const double formula = (i == j ? m1(i) / in.q[i] : 0.0) - (in.k - d) -
                                 H(i, j) * H(i, j) / (in.q[i] * in.q[j]);
          dev = std::max(dev, std::abs(cov - formula) / std::max(1.0, std::abs(formula)));
        }
      }
    }
    what = "marginals and pairwise covariance entrywise; " + worst("max deviation", dev);
    return ok && dev <= 1e-8;
  });

  criterion("AC4", [&](std::string& what) {
    bool ok = true;
    double gap = std::numeric_limits<double>::infinity();
    for (const auto& in : set20) {
      const auto r = check_square_inverse_bound(in.X, RescalingDistribution(in.q), in.k);
      ok &= r.passed;
      gap = std::min(gap, r.observed);
    }
    std::mt19937_64 gen(303);
    const Matrix X = oracle::gaussian(gen, 4, 2);
    const auto eq = check_volume_square_inverse(X, 3);
    // Oracle: E[(X_S^T X_S)^{-1}] over the enumerated subset law.
    Matrix e = Matrix::Zero(2, 2);
    for (const auto& [s, p] : oracle::subset_law(X, 3)) {
      Matrix sub(3, 2);
      for (int j = 0; j < 3; ++j) sub.row(j) = X.row(s[j]);
      e += p * (sub.transpose() * sub).inverse();
    }
    const Matrix target = (X.transpose() * X).inverse() * (4.0 - 2 + 1) / (3.0 - 2 + 1);
    const double dev = (e - target).cwiseAbs().maxCoeff();
    what = "min eigen-gap " + check::fmt(gap) + "; equality case deviation " + check::fmt(dev);
    return ok && gap >= -1e-8 && eq.passed && dev <= 1e-8;
  });

  criterion("AC5", [&](std::string& what) {
    RngState rng(505);
    const Matrix X4 = random_instance(rng, 4, 2).X;
    const auto lev = check_leveraged_sampler(X4, 2, 200000, rng);
    const Matrix X6 = random_instance(rng, 6, 2).X;
    const auto vol = check_volume_sampler(X6, 3, 200000, rng);
    what = "chi-square p-values: leveraged " + check::fmt(lev[0].observed) + ", volume " +
           check::fmt(vol.observed) + " (threshold 1e-3)";
    return lev[0].passed && vol.passed;
  }, 120);

  criterion("AC6", [&](std::string& what) {
    RngState rng(606);
    bool ok = true;
    std::ostringstream s;
    for (Index d = 1; d <= 4; ++d) {
      for (int rep = 0; rep < 3; ++rep) {
        const Matrix X = random_instance(rng, 25 + 10 * rep, d).X;
        const auto r = check_acceptance_rate(X, d + rep, 2000, rng);
        ok &= r[0].passed && r[1].passed;
        if (rep == 0) s << " d=" << d << " mean=" << check::fmt(r[0].observed) << " max=" << check::fmt(r[1].observed);
      }
    }
    what = "acceptance ratios:" + s.str();
    return ok;
  });

  ExperimentConfig lb;
  lb.dataset = "lowerbound";
  lb.lowerbound = {100, 10, 2.0 / 3.0, std::nullopt};
  lb.repetitions = 1000;
  lb.root_seed = 707;

  criterion("AC7", [&](std::string& what) {
    const auto r = run_lower_bound(100, 10, 2.0 / 3.0, 50, 1000, 707);
    what = "Pr(L >= 1.5 L*) = " + check::fmt(r.probability_ratio_ge_1_5) + ", mean ratio " +
           check::fmt(r.mean_ratio) + " (gamma->0 prediction " + check::fmt(r.predicted_mean_ratio) + ")";
    return r.failures == 0 && r.probability_ratio_ge_1_5 > 0.25 && r.mean_ratio >= 1.4;
  }, 120);

  criterion("AC8", [&](std::string& what) {
    ExperimentConfig cfg = lb;
    cfg.methods = {Method::Volume, Method::LeveragedVolume};
    cfg.k_grid = {20, 30, 40, 50};
    const auto res = run_loss_curves(cfg);
    const auto rows = aggregate(res.records);
    std::map<std::pair<Method, Index>, SummaryRow> by;
    for (const auto& r : rows) by[{r.method, r.k}] = r;
    const auto& v50 = by.at({Method::Volume, 50});
    const auto& l50 = by.at({Method::LeveragedVolume, 50});
    bool monotone = true;
    std::ostringstream s;
    for (std::size_t i = 0; i < cfg.k_grid.size(); ++i) {
      const auto& cur = by.at({Method::LeveragedVolume, cfg.k_grid[i]});
      s << " k=" << cfg.k_grid[i] << ":" << check::fmt(cur.mean_ratio);
      if (i > 0) {
        const auto& prev = by.at({Method::LeveragedVolume, cfg.k_grid[i - 1]});
        monotone &= cur.mean_ratio <= prev.mean_ratio + prev.ratio_stderr + cur.ratio_stderr;
      }
    }
    what = "leveraged mean ratios" + s.str() + "; volume at k=50: " + check::fmt(v50.mean_ratio);
    return res.failures.empty() && l50.mean_ratio < v50.mean_ratio && monotone;
  });

  criterion("AC9", [&](std::string& what) {
    RngState rng(909);
    const Matrix U = random_orthonormal(rng, 32, 2);
    Vector r(32);
    for (int i = 0; i < 32; ++i) r(i) = rng.normal();
    const auto a = check_matrix_multiplication(U, r, 8, 2000, rng);
    const auto b = check_matrix_multiplication(U, r, 16, 2000, rng);
    what = "k=8 mean " + check::fmt(a.observed) + " vs bound " + check::fmt(a.expected) +
           "; k=16 mean " + check::fmt(b.observed) + " vs bound " + check::fmt(b.expected);
    return a.passed && b.passed;
  });

  criterion("AC10", [&](std::string& what) {
    RngState rng(1010);
    bool ok = true;
    std::ostringstream s;
    for (Index d : {Index(2), Index(4)}) {
      const Matrix U = random_orthonormal(rng, 64, d);
      const auto r = check_subspace_embedding(U, k_embed(d), 500, rng);
      ok &= r.passed;
      s << " d=" << d << " k=" << k_embed(d) << " failure fraction " << check::fmt(r.observed) << ";";
    }
    what = "subspace embedding" + s.str();
    return ok;
  });

  criterion("AC11", [&](std::string& what) {
    RngState rng(1111);
    const Matrix U = random_orthonormal(rng, 8, 2);
    const auto r = check_coupled_sampling(U, 4, 10000, rng);
    bool ok = true;
    std::ostringstream s;
    for (const auto& c : r) {
      ok &= c.passed;
      s << " " << c.name << "=" << check::fmt(c.observed) << " (vs " << check::fmt(c.expected) << ")";
    }
    what = "coupled sampling over 10000 runs:" + s.str();
    return ok;
  });

  criterion("AC12", [&](std::string& what) {
    RngState rng(1212);
    bool ok = true;
    std::ostringstream s;
    for (Index d : {Index(1), Index(2)}) {
      const Matrix X = random_instance(rng, 30, d).X;
      const double eps = default_fast_epsilon(d);
      const FastLeveragedVolumeSampler fast(X, eps, rng);
      const auto [lo, hi] = fast.spectral_bounds();
      const bool contained = lo >= 1 - eps - 1e-10 && hi <= 1 + eps + 1e-10;
      const auto r = check_fast_acceptance(fast, d + 1, 3000, rng);
      ok &= contained && r[0].passed && r[1].passed && r[2].passed;
      s << " d=" << d << " eps=" << check::fmt(eps) << " spectrum=[" << check::fmt(lo) << ","
        << check::fmt(hi) << "] max ratio=" << check::fmt(r[0].observed)
        << " mean=" << check::fmt(r[1].observed) << ";";
    }
    const Matrix X4 = random_instance(rng, 4, 2).X;
    const auto tv = check_fast_exact_distribution(X4, 2, 200000, rng);
    s << " exact-input TV=" << check::fmt(tv.observed);
    what = "fast variant:" + s.str();
    return ok && tv.passed;
  });

  criterion("RUNTIME", [&](std::string& what) {
    // Per-sample time after preprocessing at fixed d for growing n.
    const Index d = 5, k = 10;
    std::vector<double> times;
    std::ostringstream s;
    for (Index n : {Index(1000), Index(10000), Index(100000)}) {
      RngState rng(1313 + n);
      const Matrix X = random_instance(rng, n, d).X;
      const LeveragedVolumeSampler sampler(X);
      double best = std::numeric_limits<double>::infinity();
      for (int round = 0; round < 5; ++round) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int t = 0; t < 200; ++t) (void)sampler.sample(k, rng);
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      times.push_back(best);
      s << " n=" << n << ":" << check::fmt(best * 1e3 / 200) << "ms";
    }
    const double ratio = *std::max_element(times.begin(), times.end()) /
                         *std::min_element(times.begin(), times.end());
    what = "per-sample time" + s.str() + "; max/min ratio " + check::fmt(ratio);
    return ratio < 1.5;
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
