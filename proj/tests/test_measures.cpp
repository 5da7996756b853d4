#include <gtest/gtest.h>

#include "truncflow/truncflow.hpp"

using namespace truncflow;

TEST(Pushforward, IdentityZeroAndIsometry) {
  const Cluster c{vec2(1, 2), vec2(-3, 0.5)};
  const auto same = pushforward_points(LayerParams(OrthogonalMatrix::identity(2), Vector::Zero(2)), c);
  EXPECT_EQ((same[0] - c[0]).norm() + (same[1] - c[1]).norm(), 0.0);

  Rng rng(21);
  const OrthogonalMatrix r = random_orthogonal(rng, 2);
  EXPECT_LE(pushforward_points(LayerParams(r, -c[0]), Cluster{c[0]})[0].norm(), 1e-15);

  const LayerParams lp(r, vec2(0.4, -0.9));
  const auto z = pushforward_points(lp, c);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(z[i].norm(), (c[i] + lp.beta).norm(), 1e-14);
}

TEST(Moments, PositiveAndNegativeSectors) {
  const Cluster c{vec2(1, 2), vec2(3, 1), vec2(2, 2)};
  const Moments pos = compute_moments(LayerParams(OrthogonalMatrix::identity(2), Vector::Zero(2)), c);
  EXPECT_EQ((pos.j0 - Vector::Ones(2)).norm(), 0.0);
  EXPECT_EQ(pos.j0_perp.norm(), 0.0);
  ASSERT_EQ(pos.j1_by_sector.size(), 1U);
  EXPECT_TRUE(pos.j1_by_sector.begin()->first.all_positive());
  EXPECT_LE((pos.j1_by_sector.begin()->second - pos.i1).norm(), 1e-15);

  const Moments neg = compute_moments(LayerParams(OrthogonalMatrix::identity(2), vec2(-5, -5)), c);
  EXPECT_EQ((neg.j0_perp - Vector::Ones(2)).norm(), 0.0);
  EXPECT_THROW(compute_moments(LayerParams(OrthogonalMatrix::identity(2), Vector::Zero(2)), {}), EmptyCluster);
}

TEST(Moments, TruncatedFractionIsCountOverN) {
  // four points, three with first coordinate <= 0 (one exactly on the boundary)
  const Cluster c{vec2(-1, 1), vec2(0, 2), vec2(-2, -1), vec2(3, 1)};
  const Moments m = compute_moments(LayerParams(OrthogonalMatrix::identity(2), Vector::Zero(2)), c);
  EXPECT_DOUBLE_EQ(m.j0_perp(0), 0.75);
  EXPECT_DOUBLE_EQ(m.j0_perp(1), 0.25);
  EXPECT_EQ(m.truncated_counts[0], 3U);
}

TEST(Moments, InvariantsOnRandomConfigurations) {
  Rng rng(22);
  for (int k = 0; k < 200; ++k) {
    const Eigen::Index q = 1 + k % 5;
    const std::size_t n = 1 + static_cast<std::size_t>(k % 9);
    Cluster c;
    for (std::size_t i = 0; i < n; ++i) c.push_back(gaussian_matrix(rng, q, 1).col(0));
    const LayerParams lp(random_orthogonal(rng, q), 0.5 * gaussian_matrix(rng, q, 1).col(0));
    const Moments m = compute_moments(lp, c);
    EXPECT_EQ(m.i0, 1.0);
    EXPECT_LE((m.j0 + m.j0_perp - Vector::Constant(q, m.i0)).norm(), 1e-15);
    EXPECT_GE(m.j0_perp.minCoeff(), 0.0);
    EXPECT_LE(m.j0_perp.maxCoeff(), 1.0);
    for (Eigen::Index r = 0; r < q; ++r)
      EXPECT_DOUBLE_EQ(m.j0_perp(r), static_cast<double>(m.truncated_counts[static_cast<std::size_t>(r)]) / static_cast<double>(n));
    Vector sum = Vector::Zero(q);
    for (const auto& [nu, v] : m.j1_by_sector) sum += v;
    EXPECT_LE((sum - m.i1).norm(), 1e-13 * (1.0 + m.i1.norm()));
    EXPECT_LE(m.j1_by_sector.size(), n);

    // sector partition: each pushed-forward point lands in exactly one key
    std::size_t seen = 0;
    for (const auto& [nu, v] : m.j1_by_sector) {
      Vector part = Vector::Zero(q);
      for (const auto& z : pushforward_points(lp, c))
        if (heaviside_mask(z) == nu) {
          part += z / static_cast<double>(n);
          ++seen;
        }
      EXPECT_LE((part - v).norm(), 1e-13 * (1.0 + v.norm()));
    }
    EXPECT_EQ(seen, n);
  }
}

TEST(Separation, PositiveSectorsAndOneViolation) {
  const TrainingSet data(2, {{vec2(5, 5), vec2(6, 5)}, {vec2(5, 6), vec2(6, 6)}});
  const LayerParams wide(OrthogonalMatrix::identity(2), vec2(1, 1));
  const ModelState st({wide, wide}, Matrix::Identity(2, 2), {vec2(0, 0), vec2(0, 0)});
  EXPECT_TRUE(check_cluster_separation(st, data).separated);

  // layer 0 now cuts the first point of cluster 1
  const ModelState cut({LayerParams(OrthogonalMatrix::identity(2), vec2(-5.5, 1)), wide}, Matrix::Identity(2, 2),
                       {vec2(0, 0), vec2(0, 0)});
  const SeparationReport rep = check_cluster_separation(cut, data);
  EXPECT_FALSE(rep.separated);
  ASSERT_EQ(rep.violations.size(), 1U);
  EXPECT_EQ(rep.violations[0].layer, 0U);
  EXPECT_EQ(rep.violations[0].cluster, 1U);
  EXPECT_EQ(rep.violations[0].index, 0U);
}

TEST(Separation, GeneratedConfigurationsAreSeparated) {
  Rng rng(23);
  for (int k = 0; k < 30; ++k) {
    const Configuration cfg = random_separated_configuration(rng, 2 + k % 3, 5, 0.5, LabelPlacement::NearCluster);
    EXPECT_TRUE(check_cluster_separation(cfg.state, cfg.data).separated);
  }
}
