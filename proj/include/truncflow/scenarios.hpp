#pragma once

// Seeded generators for configurations used by tests, the verifier and the CLI.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "truncflow/measures.hpp"
#include "truncflow/model.hpp"
#include "truncflow/rhs.hpp"

namespace truncflow {

using Rng = std::mt19937_64;

inline Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

inline Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

inline Vector uniform_vector(Rng& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

/// Haar-distributed element of O(Q): Q factor of a Gaussian matrix with the sign of diag(R) fixed.
inline OrthogonalMatrix random_orthogonal(Rng& rng, Eigen::Index q) {
  const Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(rng, q, q));
  Matrix qm = qr.householderQ() * Matrix::Identity(q, q);
  const Matrix r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q; ++j)
    if (r(j, j) < 0.0) qm.col(j) *= -1.0;
  return reorthogonalize(OrthogonalMatrix(qm));
}

inline AntisymmetricMatrix random_antisymmetric(Rng& rng, Eigen::Index q, double scale = 1.0) {
  return antisym_project(scale * gaussian_matrix(rng, q, q));
}

/// Well-conditioned output map: rotation times diag in [0.5, 2].
inline Matrix random_output_map(Rng& rng, Eigen::Index q) {
  const Vector d = uniform_vector(rng, q, 0.5, 2.0);
  return random_orthogonal(rng, q).matrix() * d.asDiagonal() * random_orthogonal(rng, q).matrix();
}

struct Configuration {
  ModelState state;
  TrainingSet data;
};

/// Q clusters centred at 6 e_l with box noise, one layer per cluster. Layer l
/// cuts through cluster l along the unit normal pointing away from the other
/// clusters' centroid; its remaining hyperplanes sit 25-35 units away, so every
/// other cluster (and the truncated image of cluster l) stays in S+.
/// Resamples until the chained separation check passes. Requires Q >= 2.
/// Random: Gaussian labels. NearCluster: the pulled label of cluster l sits on
/// layer l's truncating hyperplane next to the centre, plus 0.1 noise, so the
/// flow moves slowly and separation survives long runs.
enum class LabelPlacement { Random, NearCluster };

inline Configuration random_separated_configuration(Rng& rng, Eigen::Index q, std::size_t points_per_cluster,
                                                    double spread = 0.5,
                                                    LabelPlacement placement = LabelPlacement::Random) {
  if (q < 2) throw ConfigError("random_separated_configuration: Q >= 2 required");
  if (points_per_cluster < 1) throw ConfigError("random_separated_configuration: empty clusters");
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<Cluster> clusters(static_cast<std::size_t>(q));
    std::vector<Vector> centres;
    for (Eigen::Index l = 0; l < q; ++l) {
      centres.push_back(6.0 * Vector::Unit(q, l));
      for (std::size_t i = 0; i < points_per_cluster; ++i)
        clusters[static_cast<std::size_t>(l)].push_back(centres.back() + uniform_vector(rng, q, -spread, spread));
    }
    std::vector<LayerParams> layers;
    for (Eigen::Index l = 0; l < q; ++l) {
      Vector others = Vector::Zero(q);
      for (Eigen::Index k = 0; k < q; ++k)
        if (k != l) others += centres[static_cast<std::size_t>(k)];
      others /= static_cast<double>(q - 1);
      const Vector n = (others - centres[static_cast<std::size_t>(l)]).normalized();
      // First row n, the rest a random orthonormal completion.
      Matrix basis(q, q);
      basis.col(0) = n;
      basis.rightCols(q - 1) = gaussian_matrix(rng, q, q - 1);
      const Eigen::HouseholderQR<Matrix> qr(basis);
      Matrix qm = qr.householderQ() * Matrix::Identity(q, q);
      if (qm.col(0).dot(n) < 0.0) qm.col(0) *= -1.0;
      const Matrix r = qm.transpose();
      Vector target(q);
      const Vector& c = centres[static_cast<std::size_t>(l)];
      target(0) = -r.row(0).dot(c) + uniform_vector(rng, 1, -0.5 * spread, 0.5 * spread)(0);
      for (Eigen::Index j = 1; j < q; ++j) target(j) = -r.row(j).dot(c) + uniform_vector(rng, 1, 25.0, 35.0)(0);
      layers.emplace_back(OrthogonalMatrix(r), Vector(r.transpose() * target));
    }
    const Matrix w_out = random_output_map(rng, q);
    std::vector<Vector> labels;
    for (Eigen::Index l = 0; l < q; ++l) {
      if (placement == LabelPlacement::Random) {
        labels.push_back(gaussian_matrix(rng, q, 1).col(0));
        continue;
      }
      const LayerParams& lp = layers[static_cast<std::size_t>(l)];
      const Vector& c = centres[static_cast<std::size_t>(l)];
      const Vector n = lp.r().row(0).transpose();
      const Vector pulled = c - n.dot(c + lp.beta) * n + 0.1 * gaussian_matrix(rng, q, 1).col(0);
      labels.push_back(w_out * pulled);
    }
    Configuration cfg{ModelState(std::move(layers), w_out, std::move(labels)), TrainingSet(q, std::move(clusters))};
    if (check_cluster_separation(cfg.state, cfg.data).separated) return cfg;
  }
  throw ConfigError("random_separated_configuration: no separated sample in 100 attempts");
}

/// Overlapping Gaussian clusters around the origin with random layers; sectors
/// mix freely across layers and clusters.
inline Configuration random_general_configuration(Rng& rng, Eigen::Index q, std::size_t layers_count,
                                                  std::size_t clusters_count, std::size_t points_per_cluster) {
  std::vector<Cluster> clusters(clusters_count);
  for (auto& c : clusters) {
    const Vector centre = gaussian_matrix(rng, q, 1).col(0);
    for (std::size_t i = 0; i < points_per_cluster; ++i) c.push_back(centre + 0.7 * gaussian_matrix(rng, q, 1).col(0));
  }
  std::vector<LayerParams> layers;
  for (std::size_t l = 0; l < layers_count; ++l)
    layers.emplace_back(random_orthogonal(rng, q), Vector(0.5 * gaussian_matrix(rng, q, 1).col(0)));
  std::vector<Vector> labels;
  for (std::size_t c = 0; c < clusters_count; ++c) labels.push_back(gaussian_matrix(rng, q, 1).col(0));
  return Configuration{ModelState(std::move(layers), random_output_map(rng, q), std::move(labels)),
                       TrainingSet(q, std::move(clusters))};
}

// ---- named initial states ---------------------------------------------------

enum class InitKind { Identity, RandomOrthogonal, FullyTruncated, AllPositive };

/// R = 1, beta = 0.
inline std::vector<LayerParams> init_identity(Eigen::Index q, std::size_t layers) {
  return std::vector<LayerParams>(layers, LayerParams(OrthogonalMatrix::identity(q), Vector::Zero(q)));
}

/// Haar R per layer from the seed, beta = 0.
inline std::vector<LayerParams> init_random_orthogonal(Eigen::Index q, std::size_t layers, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LayerParams> out;
  for (std::size_t l = 0; l < layers; ++l) out.emplace_back(random_orthogonal(rng, q), Vector::Zero(q));
  return out;
}

/// R = 1 and beta_l = -(coordinatewise max of cluster l) - margin: cluster l lies in S- of layer l.
inline std::vector<LayerParams> init_fully_truncated(const TrainingSet& data, std::size_t layers, double margin = 1.0) {
  const Eigen::Index q = data.dim();
  std::vector<LayerParams> out;
  for (std::size_t l = 0; l < layers; ++l) {
    const Cluster& c = data.cluster(std::min(l, data.num_clusters() - 1));
    Vector hi = c.front();
    for (const auto& x : c) hi = hi.cwiseMax(x);
    out.emplace_back(OrthogonalMatrix::identity(q), Vector(-hi - Vector::Constant(q, margin)));
  }
  return out;
}

/// R = 1 and beta = -(coordinatewise min over all data) + margin: every point in S+ of every layer.
inline std::vector<LayerParams> init_all_positive(const TrainingSet& data, std::size_t layers, double margin = 1.0) {
  const Eigen::Index q = data.dim();
  Vector lo = data.cluster(0).front();
  for (const auto& c : data.clusters())
    for (const auto& x : c) lo = lo.cwiseMin(x);
  return std::vector<LayerParams>(layers, LayerParams(OrthogonalMatrix::identity(q), Vector(-lo + Vector::Constant(q, margin))));
}

// ---- collapse scenario ------------------------------------------------------

struct CollapseParams {
  double eta0 = 0.05;
  double eta1 = 0.09;
  double gamma = 0.09;
};

/// Q = 2, two clusters, W_out = 1. Layer 0: R = 1, beta = (1.5, 0), ytilde = 0;
/// 39 points near (-6, -6) are fully truncated, one point at (-1, -1) sits in
/// an off-diagonal sector. Layer 1 keeps cluster 1 near (5, 5) and everything
/// else in S+ (an equilibrium).
inline Configuration collapse_scenario(std::uint64_t seed = 7) {
  Rng rng(seed);
  Cluster c0;
  for (int i = 0; i < 39; ++i) c0.push_back(vec2(-6.0, -6.0) + uniform_vector(rng, 2, -0.3, 0.3));
  c0.push_back(vec2(-1.0, -1.0));
  Cluster c1;
  for (int i = 0; i < 10; ++i) c1.push_back(vec2(5.0, 5.0) + uniform_vector(rng, 2, -0.3, 0.3));
  std::vector<LayerParams> layers{LayerParams(OrthogonalMatrix::identity(2), vec2(1.5, 0.0)),
                                  LayerParams(OrthogonalMatrix::identity(2), vec2(100.0, 100.0))};
  return Configuration{ModelState(std::move(layers), Matrix::Identity(2, 2), {Vector::Zero(2), vec2(5.0, 5.0)}),
                       TrainingSet(2, {std::move(c0), std::move(c1)})};
}

struct CollapseHypotheses {
  double eta1_prime = 0.0;
  double eta2 = 0.0;               // larger of the two admissible radii
  double min_truncated_mass = 1.0;  // min over samples and coordinates of J0perp
  double max_offdiag_moment = 0.0;  // max over samples of the off-diagonal first moment
  bool collapse_region_negative = true;
  std::size_t samples = 0;
  bool satisfied = false;
};

/// Samples the neighbourhoods {|beta + ytilde| <= 1.1 |beta0 + ytilde|,
/// |R - R0|_op < eta2} and {|beta + ytilde| < gamma |beta0 + ytilde|} (half
/// the samples on the outer boundary) and evaluates the three hypotheses.
/// eta2 is the larger of eta1 log(1/gamma)/(1 - eta0 - eta1') and
/// eta1' log(1/gamma)/(1 - eta0 - eta1).
inline CollapseHypotheses check_collapse_hypotheses(const ModelState& state, const TrainingSet& data,
                                                    std::size_t layer, const CollapseParams& p,
                                                    std::size_t samples = 4000, std::uint64_t seed = 11) {
  CollapseHypotheses h;
  const Eigen::Index q = state.dim();
  const LayerParams& lp0 = state.layer(layer);
  const Vector& yt = state.pulled_label(layer);
  const Cluster& cluster = data.cluster(layer);
  const double gap0 = (lp0.beta + yt).norm();
  h.eta1_prime = 1.1 * gap0 * p.eta1;
  const double log_g = std::log(1.0 / p.gamma);
  const double d1 = 1.0 - p.eta0 - h.eta1_prime;
  const double d2 = 1.0 - p.eta0 - p.eta1;
  if (!(p.eta0 > 0 && p.eta0 < 0.1 && p.eta1 > 0 && p.eta1 < 0.1 && p.gamma > 0 && p.gamma < 0.1) || !(d1 > 0.0)) {
    return h;
  }
  h.eta2 = std::max(p.eta1 * log_g / d1, h.eta1_prime * log_g / d2);

  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto sample_rotation = [&](bool boundary) {
    for (;;) {
      const AntisymmetricMatrix a = random_antisymmetric(rng, q);
      const Matrix e = expm(a.matrix());
      const double op = (e - Matrix::Identity(q, q)).jacobiSvd().singularValues()(0);
      if (op <= 0.0) continue;
      // ||exp(t a) - 1||_op = 2 sin(t theta / 2) along a one-parameter group; scale t by bisection.
      const double target = (boundary ? 0.999 : u01(rng)) * h.eta2;
      double lo = 0.0, hi = 1.0;
      while ((expm(hi * a.matrix()) - Matrix::Identity(q, q)).jacobiSvd().singularValues()(0) < target && hi < 64.0)
        hi *= 2.0;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if ((expm(mid * a.matrix()) - Matrix::Identity(q, q)).jacobiSvd().singularValues()(0) < target)
          lo = mid;
        else
          hi = mid;
      }
      return Matrix(expm(lo * a.matrix()) * lp0.r());
    }
  };
  const auto sample_beta = [&](double radius, bool boundary) {
    Vector d = gaussian_matrix(rng, q, 1).col(0).normalized();
    const double r = boundary ? 0.999 * radius : radius * std::pow(u01(rng), 1.0 / static_cast<double>(q));
    return Vector(-yt + r * d);
  };

  const double inv_n = 1.0 / static_cast<double>(cluster.size());
  for (std::size_t k = 0; k < samples; ++k) {
    const bool boundary = (k % 2) == 0;
    const Matrix r = sample_rotation(boundary);
    const Vector beta = sample_beta(1.1 * gap0, boundary);
    Vector perp = Vector::Zero(q);
    double moment = 0.0;
    for (const auto& x : cluster) {
      const Vector z = r * (x + beta);
      const SectorMask nu = heaviside_mask(z);
      for (Eigen::Index i = 0; i < q; ++i)
        if (!nu[static_cast<std::size_t>(i)]) perp(i) += inv_n;
      if (nu.off_diagonal()) moment += inv_n * z.norm();
    }
    h.min_truncated_mass = std::min(h.min_truncated_mass, perp.minCoeff());
    h.max_offdiag_moment = std::max(h.max_offdiag_moment, moment);

    const Vector beta_in = sample_beta(p.gamma * gap0, boundary);
    for (const auto& x : cluster)
      if (!heaviside_mask(r * (x + beta_in)).all_truncated()) h.collapse_region_negative = false;
    ++h.samples;
  }
  h.satisfied = h.min_truncated_mass > 1.0 - p.eta0 && h.max_offdiag_moment < p.eta1 && h.collapse_region_negative;
  return h;
}

}  // namespace truncflow
