#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "volsamp/core_linalg.hpp"
#include "volsamp/enumeration.hpp"
#include "volsamp/rng.hpp"

using namespace volsamp;

namespace {

Matrix toy() {
  Matrix X(3, 2);
  X << 1, 0, 0, 1, 1, 1;
  return X;
}

}  // namespace

TEST(GramFactorize, Identity) {
  const auto f = gram_factorize(Matrix::Identity(2, 2));
  EXPECT_TRUE(f.gram.isApprox(Matrix::Identity(2, 2)));
  EXPECT_NEAR(f.log_det, 0.0, 1e-14);
}

TEST(GramFactorize, TwoByOne) {
  Matrix X(2, 1);
  X << 1, 1;
  const auto f = gram_factorize(X);
  EXPECT_NEAR(f.gram(0, 0), 2.0, 1e-14);
  EXPECT_NEAR(f.inverse(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(f.log_det, std::log(2.0), 1e-14);
}

TEST(GramFactorize, ThreeByTwo) {
  const auto f = gram_factorize(toy());
  Matrix g(2, 2);
  g << 2, 1, 1, 2;
  EXPECT_TRUE(f.gram.isApprox(g, 1e-14));
  EXPECT_NEAR(f.det(), 3.0, 1e-12);
  EXPECT_TRUE((f.inverse * f.gram).isApprox(Matrix::Identity(2, 2), 1e-12));
  EXPECT_TRUE((f.inv_sqrt * f.inv_sqrt).isApprox(f.inverse, 1e-12));
}

TEST(GramFactorize, RankDeficientAndWide) {
  Matrix X(2, 2);
  X << 1, 1, 2, 2;
  try {
    (void)gram_factorize(X);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RankDeficient);
  }
  EXPECT_THROW((void)gram_factorize(Matrix::Ones(1, 2)), Error);
}

TEST(GramFactorize, NonFinite) {
  Matrix X = Matrix::Identity(2, 2);
  X(0, 1) = std::nan("");
  EXPECT_THROW((void)gram_factorize(X), Error);
}

TEST(LeverageScores, Examples) {
  EXPECT_TRUE(leverage_scores(Matrix::Identity(3, 3)).isApprox(Vector::Ones(3), 1e-14));
  Matrix X(2, 1);
  X << 1, 1;
  EXPECT_TRUE(leverage_scores(X).isApprox(Vector::Constant(2, 0.5), 1e-14));
  EXPECT_TRUE(leverage_scores(toy()).isApprox(Vector::Constant(3, 2.0 / 3.0), 1e-14));
}

TEST(LeverageScores, ZeroRowRejected) {
  Matrix X = toy();
  X.conservativeResize(4, 2);
  X.row(3).setZero();
  try {
    (void)leverage_scores(X);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroRow);
  }
}

TEST(LeverageScores, MatchHatMatrixAndSumToD) {
  std::mt19937_64 gen(11);
  for (int d = 1; d <= 5; ++d) {
    const Matrix X = oracle::gaussian(gen, 12, d);
    const Vector l = leverage_scores(X);
    EXPECT_NEAR(l.sum(), double(d), 1e-8);
    EXPECT_TRUE(l.isApprox(oracle::hat_diagonal(X), 1e-10));
    // Basis invariance.
    EXPECT_TRUE(leverage_scores(orthogonalize(X)).isApprox(l, 1e-8));
  }
}

TEST(Orthogonalize, Examples) {
  std::mt19937_64 qgen(3);
  const Matrix Q = Eigen::HouseholderQR<Matrix>(oracle::gaussian(qgen, 6, 3)).householderQ() *
                   Matrix::Identity(6, 3);
  const Matrix U = orthogonalize(Q);
  EXPECT_TRUE(U.isApprox(Q, 1e-10));
  Matrix D(2, 2);
  D << 2, 0, 0, 3;
  EXPECT_TRUE(orthogonalize(D).isApprox(Matrix::Identity(2, 2), 1e-12));
  std::mt19937_64 gen(5);
  const Matrix X = oracle::gaussian(gen, 20, 4);
  const Matrix V = orthogonalize(X);
  EXPECT_LT((V.transpose() * V - Matrix::Identity(4, 4)).norm(), 1e-10);
}

TEST(WeightedGram, Examples) {
  Matrix X(2, 1);
  X << 1, 1;
  EXPECT_NEAR(weighted_gram(X, {{0, 1}, {2.0, 2.0}})(0, 0), 4.0, 1e-14);
  EXPECT_NEAR(weighted_gram(X, {{0, 0}, {2.0, 2.0}})(0, 0), 4.0, 1e-14);
  EXPECT_TRUE(weighted_gram(X, {}).isZero());
  EXPECT_THROW((void)weighted_gram(X, {{2}, {1.0}}), Error);
}

TEST(WeightedGram, FullCoverUniform) {
  std::mt19937_64 gen(8);
  const Matrix X = oracle::gaussian(gen, 7, 3);
  SampleSequence all;
  for (Index i = 0; i < 7; ++i) {
    all.indices.push_back(i);
    all.rescale_weights.push_back(7.0);
  }
  EXPECT_TRUE(weighted_gram(X, all).isApprox(7.0 * X.transpose() * X, 1e-10));
}

TEST(LogDet, MatchesDirectRatio) {
  std::mt19937_64 gen(21);
  for (int d = 1; d <= 6; ++d) {
    const Matrix X = oracle::gaussian(gen, 10, d);
    SampleSequence pi;
    for (Index j = 0; j < 8; ++j) {
      pi.indices.push_back(j % 10);
      pi.rescale_weights.push_back(1.0 + 0.1 * double(j));
    }
    const Matrix M = weighted_gram(X, pi);
    const double via_log = std::exp(log_det_psd(M) - gram_factorize(X).log_det);
    const double direct = M.determinant() / (X.transpose() * X).determinant();
    EXPECT_NEAR(via_log / direct, 1.0, 1e-8);
  }
}

TEST(LogDet, SingularIsMinusInfinity) {
  EXPECT_TRUE(std::isinf(log_det_psd(Matrix::Zero(2, 2))));
  Matrix S(2, 2);
  S << 1, 1, 1, 1;
  EXPECT_EQ(det_psd(S), 0.0);
}

TEST(Eigenvalues, Examples) {
  EXPECT_NEAR(min_eigenvalue_sym(Matrix::Identity(3, 3)), 1.0, 1e-14);
  Matrix D = Matrix::Zero(2, 2);
  D.diagonal() << 3, 0.2;
  EXPECT_NEAR(min_eigenvalue_sym(D), 0.2, 1e-14);
  Matrix M(2, 2);
  M << 2, 1, 1, 2;
  EXPECT_NEAR(min_eigenvalue_sym(M), 1.0, 1e-14);
  EXPECT_NEAR(max_eigenvalue_sym(M), 3.0, 1e-14);
  Matrix A(2, 2);
  A << 1, 2, 0, 1;
  try {
    (void)min_eigenvalue_sym(A);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotSymmetric);
  }
}

TEST(Combinatorics, LogBinomialAndFallingFactorial) {
  EXPECT_NEAR(std::exp(log_binomial(5, 2)), 10.0, 1e-10);
  EXPECT_NEAR(std::exp(log_binomial(7, 0)), 1.0, 1e-12);
  EXPECT_NEAR(std::exp(log_falling_factorial(4, 2)), 12.0, 1e-10);
  EXPECT_NEAR(std::exp(log_falling_factorial(3, 3)), 6.0, 1e-10);
}

TEST(Enumeration, SequencesAndSubsets) {
  EXPECT_EQ(count_sequences(3, 2), 9u);
  std::vector<std::vector<Index>> seen;
  for_each_sequence(2, 2, [&](const std::vector<Index>& s) { seen.push_back(s); });
  const std::vector<std::vector<Index>> want{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  EXPECT_EQ(seen, want);
  std::size_t subsets = 0;
  for_each_subset(5, 3, [&](const std::vector<Index>&) { ++subsets; });
  EXPECT_EQ(subsets, 10u);
  try {
    for_each_sequence(10, 7, [](const std::vector<Index>&) {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooLarge);
  }
  const double total = expectation_over_sequences(
      3, 2, [](const std::vector<Index>&) { return 1.0 / 9.0; },
      [](const std::vector<Index>& s) { return double(s[0] + s[1]); }, 0.0);
  EXPECT_NEAR(total, 2.0, 1e-14);
}

TEST(Rng, DeterministicAndIndependentStreams) {
  RngState a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  RngState a2(42);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a2.next_u64() == c.next_u64();
  EXPECT_EQ(same, 0);
  EXPECT_NE(derive_seed(1, "volume", 10, 0), derive_seed(1, "volume", 10, 1));
  EXPECT_NE(derive_seed(1, "volume", 10, 0), derive_seed(1, "leveraged_volume", 10, 0));
  EXPECT_EQ(derive_seed(9, "x", 1, 2), derive_seed(9, "x", 1, 2));
}

TEST(Rng, DistributionMoments) {
  RngState r(7);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) {
    su += r.uniform();
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
    ++counts[r.uniform_index(5)];
  }
  EXPECT_NEAR(su / n, 0.5, 5 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(sn / n, 0.0, 5 / std::sqrt(double(n)));
  EXPECT_NEAR(sn2 / n, 1.0, 5 * std::sqrt(2.0 / n));
  for (int c : counts) EXPECT_NEAR(c, n / 5.0, 5 * std::sqrt(n * 0.2 * 0.8));
}
