#include <gtest/gtest.h>

#include <cmath>

#include "truncflow/truncflow.hpp"

using namespace truncflow;

TEST(OneDimFlow, LadderForTwoPoints) {
  const OneDimSolution sol = one_dim_flow({1.0, 2.0}, 5.0, 1.0, 2);
  EXPECT_FALSE(sol.frozen);
  ASSERT_EQ(sol.event_times.size(), 1U);
  EXPECT_NEAR(sol.event_times[0], 2.0 * std::log(4.0 / 3.0), 1e-15);
  ASSERT_EQ(sol.segments.size(), 2U);
  EXPECT_DOUBLE_EQ(sol.segments[0].rate, 0.5);
  EXPECT_DOUBLE_EQ(sol.segments[1].rate, 1.0);
  EXPECT_NEAR(sol.bias(sol.event_times[0]), 2.0, 1e-14);
  EXPECT_NEAR(sol.gap(sol.event_times[0] + 1.0), 3.0 * std::exp(-1.0), 1e-14);
}

TEST(OneDimFlow, GapIsContinuousAndDecreasing) {
  const OneDimSolution sol = one_dim_flow({-1.0, 0.2, 0.9, 2.5}, 4.0, -0.5, 4);
  ASSERT_EQ(sol.event_times.size(), 3U);
  for (double s : sol.event_times) EXPECT_NEAR(sol.gap(s - 1e-12), sol.gap(s), 1e-10);
  double prev = sol.gap(0.0);
  for (int k = 1; k <= 100; ++k) {
    const double g = sol.gap(0.1 * k);
    EXPECT_LT(g, prev);
    prev = g;
  }
}

TEST(OneDimFlow, FrozenWhenNothingTruncated) {
  const OneDimSolution sol = one_dim_flow({1.0, 2.0}, 5.0, 0.5, 2);
  EXPECT_TRUE(sol.frozen);
  EXPECT_TRUE(sol.event_times.empty());
  EXPECT_DOUBLE_EQ(sol.bias(10.0), 0.5);
}

TEST(OneDimFlow, RejectsBadInput) {
  EXPECT_THROW(one_dim_flow({2.0, 1.0}, 5.0, 0.0, 2), BadOrdering);
  EXPECT_THROW(one_dim_flow({1.0, 1.0}, 5.0, 0.0, 2), BadOrdering);
  EXPECT_THROW(one_dim_flow({}, 5.0, 0.0, 0), BadOrdering);
  EXPECT_THROW(one_dim_flow({1.0, 2.0}, 1.5, 0.0, 2), LabelInsideData);
  EXPECT_THROW(one_dim_flow({1.0, 2.0}, 5.0, 0.0, 3), DimensionMismatch);
}

TEST(ClusteredExplicit, IdentityDataFormula) {
  Rng rng(41);
  for (Eigen::Index q = 1; q <= 4; ++q) {
    const Matrix w0 = gaussian_matrix(rng, q, q);
    const Matrix y = gaussian_matrix(rng, q, q);
    const Matrix x = Matrix::Identity(q, q);
    for (double s : {0.0, 0.5, 3.0, 10.0}) {
      const double e = std::exp(-s / static_cast<double>(q));
      EXPECT_LE((clustered_explicit(w0, x, y, s) - (e * w0 + (1.0 - e) * y)).norm(), 1e-12);
    }
    EXPECT_LE((range_projector(x) - x).norm(), 1e-14);
  }
}

TEST(ClusteredExplicit, MatchesReferenceOde) {
  Rng rng(42);
  for (int k = 0; k < 10; ++k) {
    const Eigen::Index q = 2 + k % 3;
    const Eigen::Index n = q + k % 4;
    const Matrix x = gaussian_matrix(rng, q, n);
    const Matrix w0 = gaussian_matrix(rng, q, q);
    const Matrix y = gaussian_matrix(rng, q, n);
    const std::function<Matrix(const Matrix&)> f = [&](const Matrix& w) { return clustered_rhs(w, x, y); };
    Matrix ref = w0;
    for (int j = 1; j <= 8; ++j) {
      ref = reference_integrate(f, ref, 0.5);
      EXPECT_LE((clustered_explicit(w0, x, y, 0.5 * j) - ref).norm(), 1e-6);
    }
  }
}

TEST(ClusteredExplicit, LimitIsFixedPointOfTheRhs) {
  Rng rng(43);
  const Matrix x = gaussian_matrix(rng, 3, 5);
  const Matrix y = gaussian_matrix(rng, 3, 5);
  const Matrix limit = y * range_projector(x);
  EXPECT_LE(clustered_rhs(limit, x, y).norm(), 1e-12);
  EXPECT_LE((clustered_explicit(gaussian_matrix(rng, 3, 3), x, y, 2000.0) - limit).norm(), 1e-10);
  EXPECT_LE((clustered_explicit(limit, x, y, 3.0) - limit).norm(), 1e-12);
}

TEST(ClusteredExplicit, RejectsSingularGramAndShapes) {
  Matrix x(2, 3);
  x << 1, 2, 3, 2, 4, 6;
  EXPECT_THROW(clustered_explicit(Matrix::Identity(2, 2), x, Matrix::Zero(2, 3), 1.0), SingularGram);
  EXPECT_THROW(range_projector(Matrix::Zero(2, 2)), SingularGram);
  EXPECT_THROW(clustered_explicit(Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Zero(2, 3), 1.0),
               DimensionMismatch);
  EXPECT_THROW(clustered_explicit(Matrix::Identity(3, 3), Matrix::Identity(2, 2), Matrix::Zero(2, 2), 1.0),
               DimensionMismatch);
}
