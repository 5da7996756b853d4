#include <gtest/gtest.h>

#include <cmath>

#include "truncflow/truncflow.hpp"

using namespace truncflow;

TEST(FdGradBeta, FullyTruncatedClusterGivesGap) {
  const TrainingSet data(2, {{vec2(-3.0, -2.0), vec2(-2.5, -3.1), vec2(-4.0, -2.2)}});
  const Vector beta = vec2(0.4, -0.3);
  const Vector y = vec2(1.0, 2.0);
  const ModelState st({LayerParams(OrthogonalMatrix::identity(2), beta)}, Matrix::Identity(2, 2), {y});
  EXPECT_LE((fd_grad_beta(st, data, 0) - (beta + y)).norm(), 1e-8);
  EXPECT_LE(fd_grad_rotation(st, data, 0).norm(), 1e-8);
}

TEST(FdGradBeta, AllPositiveClusterGivesZero) {
  const TrainingSet data(2, {{vec2(1, 2), vec2(2, 1)}});
  const ModelState st({LayerParams(OrthogonalMatrix::identity(2), vec2(0.5, 0.5))}, Matrix::Identity(2, 2), {vec2(3, -1)});
  EXPECT_LE(fd_grad_beta(st, data, 0).norm(), 1e-9);
  EXPECT_LE(fd_grad_rotation(st, data, 0).norm(), 1e-9);
}

TEST(KinkGuard, RaisesNearBoundary) {
  const TrainingSet data(2, {{vec2(1e-7, 2.0)}});
  const ModelState st({LayerParams(OrthogonalMatrix::identity(2), Vector::Zero(2))}, Matrix::Identity(2, 2), {vec2(0, 0)});
  EXPECT_THROW(require_kink_free(st, data, 1e-5), NearKink);
  EXPECT_THROW(fd_grad_beta(st, data, 0), NearKink);
  EXPECT_THROW(fd_grad_rotation(st, data, 0), NearKink);
  EXPECT_NO_THROW(require_kink_free(st, TrainingSet(2, {{vec2(1.0, 2.0)}}), 1e-5));
}

TEST(FdSettings, Validation) {
  EXPECT_THROW(FDSettings{0.5}.validate(), ConfigError);
  EXPECT_THROW(FDSettings{1e-12}.validate(), ConfigError);
  EXPECT_NO_THROW(FDSettings{1e-4}.validate());
  const Configuration cfg = collapse_scenario();
  EXPECT_THROW(fd_grad_beta(cfg.state, cfg.data, 7), IndexRange);
}

TEST(FdGradRotation, SecondOrderConvergence) {
  Rng rng(51);
  int checked = 0;
  for (int k = 0; k < 40 && checked < 10; ++k) {
    const Configuration cfg = random_general_configuration(rng, 3, 2, 2, 3);
    try {
      require_kink_free(cfg.state, cfg.data, 1e-3);
    } catch (const NearKink&) {
      continue;
    }
    const Matrix an = general_rhs(cfg.state, cfg.data)[0].omega.matrix();
    const double e1 = (fd_grad_rotation(cfg.state, cfg.data, 0, {}, FDSettings{1e-3}).matrix() - an).norm();
    const double e2 = (fd_grad_rotation(cfg.state, cfg.data, 0, {}, FDSettings{5e-4}).matrix() - an).norm();
    if (e1 < 1e-9) continue;
    EXPECT_NEAR(e1 / e2, 4.0, 1.0);
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(FdGradCollapsed, MatchesAnalyticGradient) {
  Rng rng(52);
  for (int k = 0; k < 20; ++k) {
    const Eigen::Index q = 1 + k % 4;
    const CollapsedState cs(gaussian_matrix(rng, q, q), gaussian_matrix(rng, q, q), gaussian_matrix(rng, q, q));
    const CollapsedGradient g = fd_grad_collapsed(cs);
    const CollapsedRhs r = collapsed_rhs(cs);
    EXPECT_LE((g.b_grad + r.b_dot).norm(), 1e-6 * std::max(1.0, r.b_dot.norm()));
    EXPECT_LE((g.w_grad + r.w_dot).norm(), 1e-6 * std::max(1.0, r.w_dot.norm()));
  }
  // W = 0 leaves only the W gradient, -Y B^T
  const CollapsedState z(Matrix::Identity(2, 2), Matrix::Zero(2, 2), (Matrix(2, 2) << 1, 2, 3, 4).finished());
  const CollapsedGradient gz = fd_grad_collapsed(z);
  EXPECT_LE(gz.b_grad.norm(), 1e-9);
  EXPECT_LE((gz.w_grad - z.y_matrix).norm(), 1e-8);
}

TEST(ReferenceIntegrate, EquilibriumStaysPut) {
  const TrainingSet data(2, {{vec2(1, 2), vec2(2, 1)}});
  const ModelState st({LayerParams(OrthogonalMatrix::identity(2), vec2(0.5, 0.5))}, Matrix::Identity(2, 2), {vec2(3, -1)});
  const LayerFieldFn f = [&](const ModelState& s) { return general_rhs(s, data); };
  const ModelState end = reference_integrate(f, st, 1.0, 1e-2);
  EXPECT_EQ((end.layer(0).beta - st.layer(0).beta).norm(), 0.0);
  EXPECT_EQ((end.layer(0).r() - st.layer(0).r()).norm(), 0.0);
}

TEST(ReferenceIntegrate, MatrixRk4IsExactOnExponential) {
  const std::function<Matrix(const Matrix&)> f = [](const Matrix& m) { return Matrix(-m); };
  const Matrix end = reference_integrate(f, Matrix::Identity(2, 2), 1.0);
  EXPECT_NEAR(end(0, 0), std::exp(-1.0), 1e-14);
  EXPECT_EQ(end(0, 1), 0.0);
}
