#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "volsamp/experiments.hpp"
#include "volsamp/verification.hpp"

using namespace volsamp;

namespace {

Matrix two_by_one() {
  Matrix X(2, 1);
  X << 1, 1;
  return X;
}

}  // namespace

TEST(CauchyBinet, Examples) {
  const auto r = check_cauchy_binet(two_by_one(), RescalingDistribution::uniform(2), 2);
  EXPECT_TRUE(r.passed);
  EXPECT_NEAR(r.observed, 4.0, 1e-12);
  EXPECT_NEAR(r.expected, 4.0, 1e-12);

  std::mt19937_64 gen(1);
  const Matrix X = oracle::gaussian(gen, 5, 2);
  const RescalingDistribution q(oracle::random_q(gen, 5));
  const auto k2 = check_cauchy_binet(X, q, 2);
  EXPECT_TRUE(k2.passed);
  EXPECT_NEAR(k2.expected, 2.0 * (X.transpose() * X).determinant(), 1e-9 * k2.expected);
  EXPECT_TRUE(check_cauchy_binet(X, q, 3).passed);
}

TEST(CauchyBinet, EnumerationCap) {
  try {
    (void)check_cauchy_binet(Matrix::Identity(10, 2), RescalingDistribution::uniform(10), 7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooLarge);
  }
}

TEST(MarginalExpectation, Examples) {
  EXPECT_TRUE(check_marginal_expectation(two_by_one(), RescalingDistribution::uniform(2), 2).passed);

  // Leveraged q: the diagonal is k everywhere.
  std::mt19937_64 gen(2);
  const Matrix X = oracle::gaussian(gen, 4, 2);
  const auto lev = RescalingDistribution::leveraged(leverage_scores(X));
  const RescaledVolumeLaw law(X, lev, 3);
  const Vector diag = detail::enumerated_q_diagonal(law);
  EXPECT_TRUE(diag.isApprox(Vector::Constant(4, 3.0), 1e-9));
  EXPECT_TRUE(check_marginal_expectation(X, lev, 3).passed);

  // Off-target q: the diagonal is no longer constant, but the identity holds.
  const RescalingDistribution skew(std::vector<double>{0.7, 0.1, 0.1, 0.1});
  const Vector off = detail::enumerated_q_diagonal(RescaledVolumeLaw(X, skew, 3));
  EXPECT_GT((off - Vector::Constant(4, 3.0)).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_TRUE(check_marginal_expectation(X, skew, 3).passed);
}

TEST(PairwiseCovariance, HandComputedToyValue) {
  // Sequences of the 2x1 instance, each with probability 1/4:
  // Q_11 in {4, 2, 2, 0}, Q_22 in {0, 2, 2, 4} -> cov = 8/4 - 4 = -2.
  const Matrix X = two_by_one();
  const auto q = RescalingDistribution::uniform(2);
  const RescaledVolumeLaw law(X, q, 2);
  double e1 = 0, e2 = 0, e12 = 0;
  for_each_sequence(2, 2, [&](const std::vector<Index>& s) {
    double a = 0, b = 0;
    for (Index i : s) (i == 0 ? a : b) += 2.0;
    const double p = law.pmf(s);
    e1 += p * a;
    e2 += p * b;
    e12 += p * a * b;
  });
  EXPECT_NEAR(e12 - e1 * e2, -2.0, 1e-12);
  const auto r = check_pairwise_covariance(X, q, 2);
  EXPECT_TRUE(r.passed) << r.observed;
}

TEST(PairwiseCovariance, RandomAndDegenerate) {
  std::mt19937_64 gen(3);
  const Matrix X = oracle::gaussian(gen, 4, 2);
  EXPECT_TRUE(check_pairwise_covariance(X, RescalingDistribution(oracle::random_q(gen, 4)), 3).passed);
  EXPECT_TRUE(check_pairwise_covariance(Matrix::Ones(1, 1), RescalingDistribution::uniform(1), 3).passed);
}

TEST(Unbiasedness, RescaledAndVolume) {
  std::mt19937_64 gen(4);
  const RegressionProblem p{oracle::gaussian(gen, 5, 2), oracle::gaussian(gen, 5, 1)};
  const RescalingDistribution q(oracle::random_q(gen, 5));
  for (Index k = 2; k <= 4; ++k) EXPECT_TRUE(check_unbiasedness(p, q, k).passed);
  EXPECT_TRUE(check_volume_unbiasedness(p, 3).passed);
}

TEST(SquareInverseBound, Examples) {
  const auto r = check_square_inverse_bound(two_by_one(), RescalingDistribution::uniform(2), 1);
  EXPECT_TRUE(r.passed);
  EXPECT_NEAR(r.observed, 0.0, 1e-12);  // expectation 1/2 equals the bound 1/2

  std::mt19937_64 gen(5);
  const Matrix X = oracle::gaussian(gen, 5, 2);
  const auto gap = check_square_inverse_bound(X, RescalingDistribution(oracle::random_q(gen, 5)), 3);
  EXPECT_TRUE(gap.passed);
  EXPECT_GE(gap.observed, -1e-8);

  EXPECT_TRUE(check_volume_square_inverse(oracle::gaussian(gen, 4, 2), 3).passed);
}

TEST(VolumeIdentities, MarginalsAndNormalization) {
  std::mt19937_64 gen(6);
  const Matrix X = oracle::gaussian(gen, 6, 2);
  EXPECT_TRUE(check_volume_marginals(X, 3).passed);
  EXPECT_TRUE(check_volume_normalization(X, 4).passed);
  EXPECT_TRUE(check_rescaled_normalization(X, RescalingDistribution::uniform(6), 3).passed);
}

TEST(CompositionClosure, SmallInstance) {
  std::mt19937_64 gen(7);
  const Matrix X = oracle::gaussian(gen, 3, 1);
  const auto r = check_composition_closure(X, RescalingDistribution(oracle::random_q(gen, 3)), 3, 2);
  EXPECT_TRUE(r.passed) << r.observed;
}

TEST(MatrixMultiplication, ZeroResidualAndOrdering) {
  RngState rng(8);
  const Matrix U = random_orthonormal(rng, 32, 2);
  const auto zero = check_matrix_multiplication(U, Vector::Zero(32), 8, 200, rng);
  EXPECT_TRUE(zero.passed);
  EXPECT_EQ(zero.observed, 0.0);

  // Uniform-leverage design: rows (cos, sin) of equally spaced angles.
  Matrix V(32, 2);
  for (int i = 0; i < 32; ++i) {
    const double a = 2 * M_PI * i / 32;
    V(i, 0) = std::cos(a) / 4;
    V(i, 1) = std::sin(a) / 4;
  }
  const Vector r = V.col(0) * 3 + V.col(1);
  const auto k8 = check_matrix_multiplication(V, r, 8, 2000, rng);
  const auto k16 = check_matrix_multiplication(V, r, 16, 2000, rng);
  EXPECT_TRUE(k8.passed);
  EXPECT_TRUE(k16.passed);
  EXPECT_LT(k16.observed, k8.observed);
}

TEST(SubspaceEmbedding, Examples) {
  // Every row exactly once with uniform q on a uniform-leverage design.
  Matrix V(16, 2);
  for (int i = 0; i < 16; ++i) {
    V(i, 0) = std::cos(2 * M_PI * i / 16) / std::sqrt(8.0);
    V(i, 1) = std::sin(2 * M_PI * i / 16) / std::sqrt(8.0);
  }
  SampleSequence all;
  for (Index i = 0; i < 16; ++i) {
    all.indices.push_back(i);
    all.rescale_weights.push_back(16.0);
  }
  EXPECT_NEAR(min_eigenvalue_sym(weighted_gram(V, all) / 16.0), 1.0, 1e-12);

  RngState rng(9);
  const Matrix U = random_orthonormal(rng, 64, 4);
  EXPECT_EQ(k_embed(4), 72u);
  EXPECT_EQ(k_embed(2), 28u);
  EXPECT_TRUE(check_subspace_embedding(U, k_embed(4), 500, rng).passed);
  // k = d: reported, not asserted.
  const auto minimal = check_subspace_embedding(U, 4, 100, rng);
  EXPECT_GE(minimal.observed, 0.0);
  EXPECT_LE(minimal.observed, 1.0);
}

TEST(LossBound, DegenerateAndConvergence) {
  RngState rng(10);
  const Matrix X = random_instance(rng, 10, 2).X;
  try {
    (void)check_loss_bound({X, X * Vector::Ones(2)}, 4, 10, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateLoss);
  }

  const auto inst = lower_bound_instance(100, 10, solve_gamma_for_loss(100, 10, 2.0 / 3.0));
  const LeveragedVolumeSampler s(inst.problem.X);
  double previous = std::numeric_limits<double>::infinity();
  for (Index k : {Index(40), Index(80), Index(160)}) {
    std::vector<double> ratios;
    for (int t = 0; t < 200; ++t)
      ratios.push_back(rescaled_estimator(inst.problem, s.sample(k, rng), inst.optimal_loss).loss_ratio);
    const double p90 = quantile(ratios, 0.9);
    EXPECT_TRUE(std::isfinite(p90));
    EXPECT_LT(p90, previous);
    previous = p90;
  }
  EXPECT_LT(previous, 1.5);
}

TEST(Statistics, ChiSquareAndHelpers) {
  const auto ok = chi_square_gof({0.5, 0.5}, {50, 50});
  EXPECT_NEAR(ok.statistic, 0.0, 1e-12);
  EXPECT_NEAR(ok.p_value, 1.0, 1e-12);
  // 1 dof, statistic 4 -> p = erfc(sqrt(2)).
  const auto four = chi_square_gof({0.5, 0.5}, {60, 40});
  EXPECT_NEAR(four.statistic, 4.0, 1e-12);
  EXPECT_NEAR(four.p_value, std::erfc(std::sqrt(2.0)), 1e-10);
  EXPECT_EQ(chi_square_gof({1.0, 0.0}, {5, 1}).hits_in_null_cells, 1u);
  EXPECT_NEAR(quantile({1, 2, 3, 4, 5}, 0.5), 3.0, 1e-15);
  EXPECT_NEAR(quantile({1, 2, 3, 4, 5}, 0.9), 4.6, 1e-12);
  const auto m = mean_and_stderr({1.0, 3.0});
  EXPECT_NEAR(m.mean, 2.0, 1e-15);
  EXPECT_NEAR(m.stderr_, 1.0, 1e-15);
  EXPECT_NEAR(implied_epsilon(2, 120), 2.0 / (15.0 - 2.0 * std::log(2.0)), 1e-15);
  EXPECT_TRUE(std::isinf(implied_epsilon(10, 50)));
}

TEST(Suites, IdentitiesPassAndInjectionFails) {
  VerifyOptions opt;
  opt.seed = 3;
  const auto reports = identity_suite(opt);
  ASSERT_FALSE(reports.empty());
  for (const auto& r : reports) EXPECT_TRUE(r.passed) << r.name << " " << r.detail;
  opt.inject_tolerance_failure = true;
  for (const auto& r : identity_suite(opt)) EXPECT_FALSE(r.passed) << r.name;
}

TEST(Suites, StatisticalDeterministicAcrossJobs) {
  VerifyOptions one;
  one.seed = 11;
  VerifyOptions two = one;
  two.jobs = 3;
  const auto a = statistical_suite(one);
  const auto b = statistical_suite(two);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].observed, b[i].observed);
    EXPECT_TRUE(a[i].passed) << a[i].name << " " << a[i].detail;
  }
}

TEST(Reports, JsonFields) {
  const auto j = to_json(check::at_most("x", 1.0, std::numeric_limits<double>::infinity(), 0.0, "d"));
  EXPECT_EQ(j["name"], "x");
  EXPECT_EQ(j["expected"], "inf");
  EXPECT_EQ(j["passed"], true);
}
