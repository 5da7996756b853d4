#include <gtest/gtest.h>

#include <cmath>

#include "truncflow/truncflow.hpp"

using namespace truncflow;

namespace {

// Relative error with a unit floor, so vanishing gradients are compared absolutely.
double rel_err(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

Configuration kink_free_separated(Rng& rng, Eigen::Index q, std::size_t n) {
  for (;;) {
    Configuration cfg = random_separated_configuration(rng, q, n);
    try {
      require_kink_free(cfg.state, cfg.data, 1e-5);
      return cfg;
    } catch (const NearKink&) {
    }
  }
}

}  // namespace

TEST(EffectiveRhs, AllPositiveClusterIsEquilibrium) {
  const TrainingSet data(2, {{vec2(1, 2), vec2(2, 1)}});
  const ModelState st({LayerParams(OrthogonalMatrix::identity(2), vec2(0.5, 0.5))}, Matrix::Identity(2, 2), {vec2(3, -1)});
  const LayerRhs r = effective_rhs(st, data, 0);
  EXPECT_EQ(r.beta_dot.norm(), 0.0);
  EXPECT_EQ(r.omega.norm(), 0.0);
}

TEST(EffectiveRhs, FullyTruncatedClusterRelaxesBias) {
  Rng rng(3);
  const OrthogonalMatrix r = random_orthogonal(rng, 3);
  Vector beta(3);
  beta << 0.2, -0.4, 0.9;
  Cluster c;
  for (int i = 0; i < 4; ++i) {
    const Vector z = -uniform_vector(rng, 3, 0.5, 2.0);
    c.push_back(r.matrix().transpose() * z - beta);
  }
  Vector y(3);
  y << 1.0, 2.0, -1.0;
  const ModelState st({LayerParams(r, beta)}, Matrix::Identity(3, 3), {y});
  const LayerRhs out = effective_rhs(st, TrainingSet(3, {c}), 0);
  EXPECT_LT((out.beta_dot + (beta + y)).norm(), 1e-13);
  EXPECT_EQ(out.omega.norm(), 0.0);
}

TEST(EffectiveRhs, BiasRateVanishesAtPulledLabel) {
  // At beta = -ytilde the cost is (1/2N) sum |H z|^2, which still depends on R;
  // only the bias rate vanishes.
  Rng rng(5);
  for (int k = 0; k < 10; ++k) {
    const Configuration cfg = random_general_configuration(rng, 3, 1, 1, 6);
    const ModelState st =
        cfg.state.with_layers({LayerParams(cfg.state.layer(0).rotation, Vector(-cfg.state.pulled_label(0)))});
    const LayerRhs r = effective_rhs(st, cfg.data, 0);
    EXPECT_EQ(r.beta_dot.norm(), 0.0);
    try {
      EXPECT_LT(rel_err(r.omega.matrix(), fd_grad_rotation(st, cfg.data, 0).matrix()), 1e-5);
    } catch (const NearKink&) {
    }
  }
}

TEST(EffectiveRhs, SinglePointHandExpansion) {
  // nu = (1, 0): [H, M - z z^T / 2]_12 = (z1 w2 + w1 z2 - z1 z2) / 2.
  const Vector x = vec2(2.0, -1.0);
  const Vector beta = vec2(0.0, 0.0);
  const Vector y = vec2(1.0, 3.0);
  const ModelState st({LayerParams(OrthogonalMatrix::identity(2), beta)}, Matrix::Identity(2, 2), {y});
  const LayerRhs r = effective_rhs(st, TrainingSet(2, {{x}}), 0);
  const double expected = 0.5 * (2.0 * 3.0 + 1.0 * -1.0 - 2.0 * -1.0);
  EXPECT_DOUBLE_EQ(r.omega.matrix()(0, 1), expected);
  EXPECT_DOUBLE_EQ(r.omega.matrix()(1, 0), -expected);
  EXPECT_DOUBLE_EQ(r.beta_dot(1), -(beta(1) + y(1)));
  EXPECT_DOUBLE_EQ(r.beta_dot(0), 0.0);
}

TEST(EffectiveRhs, MatchesFiniteDifferences) {
  Rng rng(17);
  for (int k = 0; k < 30; ++k) {
    const Eigen::Index q = 2 + k % 3;
    const Configuration cfg = kink_free_separated(rng, q, 1 + k % 5);
    for (std::size_t l = 0; l < cfg.state.num_layers(); ++l) {
      const LayerRhs r = effective_rhs(cfg.state, cfg.data, l);
      EXPECT_LT(rel_err(r.beta_dot, -fd_grad_beta(cfg.state, cfg.data, l)), 1e-5) << "case " << k;
      EXPECT_LT(rel_err(r.omega.matrix(), fd_grad_rotation(cfg.state, cfg.data, l).matrix()), 1e-5) << "case " << k;
    }
  }
}

TEST(EffectiveRhs, EmptyClusterAndBadLayer) {
  const TrainingSet data(2, {{vec2(1, 1)}});
  const ModelState st({LayerParams(OrthogonalMatrix::identity(2), vec2(0, 0))}, Matrix::Identity(2, 2), {vec2(0, 0)});
  EXPECT_THROW(effective_rhs(st, data, 1), IndexRange);
}

TEST(MomentForm, AgreesWithPointwiseForm) {
  Rng rng(23);
  for (int k = 0; k < 200; ++k) {
    const Eigen::Index q = 2 + k % 4;
    const Configuration cfg = random_general_configuration(rng, q, static_cast<std::size_t>(q), static_cast<std::size_t>(q), 1 + k % 8);
    for (std::size_t l = 0; l < cfg.state.num_layers(); ++l) {
      const LayerRhs a = effective_rhs(cfg.state, cfg.data, l);
      const LayerRhs b = moment_form_rhs(cfg.state, cfg.data, l);
      EXPECT_LE((a.beta_dot - b.beta_dot).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LE((a.omega.matrix() - b.omega.matrix()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(ChainedProjectors, TrivialCases) {
  const std::vector<LayerParams> layers{LayerParams(OrthogonalMatrix::identity(2), vec2(1, 1))};
  const ChainProjectors pos = chained_projectors(layers, vec2(1, 1), 0, 1);
  EXPECT_EQ((pos.p_plus - Matrix::Identity(2, 2)).norm(), 0.0);
  EXPECT_EQ(pos.p_minus[0].norm(), 0.0);
  const ChainProjectors neg = chained_projectors(layers, vec2(-3, -2), 0, 1);
  EXPECT_EQ(neg.p_plus.norm(), 0.0);
  EXPECT_EQ((neg.p_minus[0] - Matrix::Identity(2, 2)).norm(), 0.0);
  EXPECT_THROW(chained_projectors(layers, vec2(0, 0), 0, 2), IndexRange);
  EXPECT_THROW(chained_projectors(layers, vec2(0, 0), 1, 0), IndexRange);
}

TEST(ChainedProjectors, ReconstructChainedTruncation) {
  Rng rng(29);
  for (int k = 0; k < 200; ++k) {
    const Eigen::Index q = 2 + k % 4;
    const std::size_t nl = 1 + static_cast<std::size_t>(k % 5);
    const Configuration cfg = random_general_configuration(rng, q, nl, 1, 1);
    const Vector x = cfg.data.cluster(0)[0];
    const std::size_t from = static_cast<std::size_t>(k) % nl;
    const ChainProjectors cp = chained_projectors(cfg.state.layers(), x, from, nl);
    Vector recon = cp.p_plus * x;
    for (std::size_t j = 0; j < cp.p_minus.size(); ++j) recon -= cp.p_minus[j] * cfg.state.layer(from + j).beta;
    EXPECT_LT((recon - chained_truncation(cfg.state.layers(), x, from, nl)).norm(), 1e-10);
  }
}

TEST(GeneralRhs, EqualsEffectiveOnSeparatedData) {
  Rng rng(31);
  for (int k = 0; k < 40; ++k) {
    const Configuration cfg = random_separated_configuration(rng, 2 + k % 3, 1 + k % 6);
    const std::vector<LayerRhs> g = general_rhs(cfg.state, cfg.data);
    for (std::size_t l = 0; l < g.size(); ++l) {
      const LayerRhs e = effective_rhs(cfg.state, cfg.data, l);
      EXPECT_LE((g[l].beta_dot - e.beta_dot).norm(), 1e-10);
      EXPECT_LE((g[l].omega.matrix() - e.omega.matrix()).norm(), 1e-10);
    }
  }
}

TEST(GeneralRhs, AllPositiveDataIsEquilibrium) {
  Rng rng(37);
  Configuration cfg = random_general_configuration(rng, 3, 3, 2, 5);
  const ModelState st = cfg.state.with_layers(init_all_positive(cfg.data, 3));
  for (const auto& r : general_rhs(st, cfg.data)) {
    EXPECT_EQ(r.beta_dot.norm(), 0.0);
    EXPECT_EQ(r.omega.norm(), 0.0);
  }
}

TEST(GeneralRhs, MatchesFiniteDifferencesOnOverlappingData) {
  Rng rng(41);
  int checked = 0;
  while (checked < 40) {
    const Eigen::Index q = 2 + checked % 3;
    const Configuration cfg = random_general_configuration(rng, q, 1 + checked % 3, 1 + checked % 3, 1 + checked % 6);
    try {
      require_kink_free(cfg.state, cfg.data, 1e-5);
    } catch (const NearKink&) {
      continue;
    }
    const std::vector<LayerRhs> g = general_rhs(cfg.state, cfg.data);
    for (std::size_t l = 0; l < g.size(); ++l) {
      EXPECT_LT(rel_err(g[l].beta_dot, -fd_grad_beta(cfg.state, cfg.data, l)), 1e-5);
      EXPECT_LT(rel_err(g[l].omega.matrix(), fd_grad_rotation(cfg.state, cfg.data, l).matrix()), 1e-5);
    }
    ++checked;
  }
}

TEST(CollapsedRhs, ClosedFormsAndGradient) {
  Rng rng(43);
  const Matrix b = gaussian_matrix(rng, 3, 3);
  const Matrix y = gaussian_matrix(rng, 3, 3);
  const CollapsedRhs zero_w = collapsed_rhs(CollapsedState(b, Matrix::Zero(3, 3), y));
  EXPECT_EQ(zero_w.b_dot.norm(), 0.0);
  EXPECT_LT((zero_w.w_dot + y * b.transpose()).norm(), 1e-14);

  const Matrix w = gaussian_matrix(rng, 3, 3);
  const CollapsedRhs at_min = collapsed_rhs(CollapsedState(b, w, Matrix(-w * b)));
  EXPECT_LT(at_min.b_dot.norm() + at_min.w_dot.norm(), 1e-13);

  const CollapsedState cs(b, w, y);
  const CollapsedRhs r = collapsed_rhs(cs);
  const CollapsedGradient g = fd_grad_collapsed(cs);
  EXPECT_LT(rel_err(r.b_dot, -g.b_grad), 1e-6);
  EXPECT_LT(rel_err(r.w_dot, -g.w_grad), 1e-6);
}

TEST(ConservedQuantity, Values) {
  Rng rng(47);
  const Matrix o = random_orthogonal(rng, 3).matrix();
  EXPECT_LT(conserved_quantity(CollapsedState(o, o, Matrix::Zero(3, 3))).norm(), 1e-14);
  const Matrix i3 = conserved_quantity(CollapsedState(2 * Matrix::Identity(3, 3), Matrix::Identity(3, 3), Matrix::Zero(3, 3)));
  EXPECT_EQ((i3 - 3 * Matrix::Identity(3, 3)).norm(), 0.0);
  const Matrix c = conserved_quantity(CollapsedState(gaussian_matrix(rng, 3, 3), gaussian_matrix(rng, 3, 3), Matrix::Zero(3, 3)));
  EXPECT_EQ((c - c.transpose()).norm(), 0.0);
}

TEST(DescentDirection, RotationDerivativeMatchesTraceForm) {
  Rng rng(53);
  for (int k = 0; k < 20; ++k) {
    Configuration cfg = random_separated_configuration(rng, 3, 4);
    try {
      require_kink_free(cfg.state, cfg.data, 1e-4);
    } catch (const NearKink&) {
      continue;
    }
    const AntisymmetricMatrix w = random_antisymmetric(rng, 3);
    const LayerRhs r = effective_rhs(cfg.state, cfg.data, 0);
    const FDSettings fd;
    const double h = fd.step;
    const auto cost_at = [&](double e) {
      std::vector<LayerParams> layers = cfg.state.layers();
      layers[0] = LayerParams(retract(layers[0].rotation, w, e), layers[0].beta);
      return euclidean_cost(cfg.state.with_layers(layers), cfg.data);
    };
    const double deriv = (cost_at(h) - cost_at(-h)) / (2 * h);
    const double trace = (w.matrix() * r.omega.matrix()).trace();
    EXPECT_NEAR(deriv, trace, 1e-5 * std::max(1.0, std::abs(trace)));
  }
}
