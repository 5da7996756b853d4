#pragma once

// Training clusters as empirical measures, and the free / sector-constrained
// moments of a cluster pushed forward by a_{R,beta}(x) = R (x + beta).

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "truncflow/model.hpp"
#include "truncflow/training_set.hpp"

namespace truncflow {

/// {R (x + beta)} for every point of the cluster.
inline std::vector<Vector> pushforward_points(const LayerParams& layer, const Cluster& cluster) {
  std::vector<Vector> out;
  out.reserve(cluster.size());
  for (const auto& x : cluster) out.push_back(layer.r() * (x + layer.beta));
  return out;
}

struct Moments {
  double i0 = 0.0;
  Vector i1;
  Vector j0;       // diagonal of J0
  Vector j0_perp;  // diagonal of J0perp = i0 * 1 - J0
  std::vector<std::size_t> truncated_counts;  // n_r
  std::map<SectorMask, Vector> j1_by_sector;  // occupied sectors only
  std::map<SectorMask, Matrix> j2_by_sector;  // second moments, occupied sectors only
};

inline Moments compute_moments(const LayerParams& layer, const Cluster& cluster) {
  if (cluster.empty()) throw EmptyCluster("compute_moments: empty cluster");
  const Eigen::Index q = layer.dim();
  const double inv_n = 1.0 / static_cast<double>(cluster.size());
  Moments m;
  m.i1 = Vector::Zero(q);
  m.truncated_counts.assign(static_cast<std::size_t>(q), 0);
  for (const auto& z : pushforward_points(layer, cluster)) {
    const SectorMask nu = heaviside_mask(z);
    for (std::size_t r = 0; r < nu.size(); ++r)
      if (!nu[r]) ++m.truncated_counts[r];
    m.i1 += z;
    auto [it1, fresh1] = m.j1_by_sector.try_emplace(nu, Vector::Zero(q));
    it1->second += z;
    auto [it2, fresh2] = m.j2_by_sector.try_emplace(nu, Matrix::Zero(q, q));
    it2->second += z * z.transpose();
  }
  m.i0 = 1.0;
  m.i1 *= inv_n;
  for (auto& [nu, v] : m.j1_by_sector) v *= inv_n;
  for (auto& [nu, v] : m.j2_by_sector) v *= inv_n;
  m.j0_perp.resize(q);
  m.j0.resize(q);
  for (Eigen::Index r = 0; r < q; ++r) {
    m.j0_perp(r) = static_cast<double>(m.truncated_counts[static_cast<std::size_t>(r)]) * inv_n;
    m.j0(r) = m.i0 - m.j0_perp(r);
  }
  return m;
}

/// Layer l touches a point of cluster c != l (evaluated at the iterate the
/// point has when it reaches layer l in the chain).
struct SeparationViolation {
  std::size_t layer = 0;
  std::size_t cluster = 0;
  std::size_t index = 0;
};

struct SeparationReport {
  bool separated = true;
  std::vector<SeparationViolation> violations;
};

/// Cluster-separated truncations: every layer l acts as the identity on every
/// cluster c != l. Points are followed through the chain, so the truncated
/// image tau_c(x) must also lie in the positive sector of the layers after c.
inline SeparationReport check_cluster_separation(const ModelState& state, const TrainingSet& data) {
  SeparationReport rep;
  for (std::size_t c = 0; c < data.num_clusters(); ++c) {
    for (std::size_t i = 0; i < data.count(c); ++i) {
      Vector x = data.cluster(c)[i];
      for (std::size_t l = 0; l < state.num_layers(); ++l) {
        if (l != c && !classify_sector(state.layer(l), x).all_positive()) {
          rep.separated = false;
          rep.violations.push_back({l, c, i});
        }
        x = truncation_map(state.layer(l), x);
      }
    }
  }
  return rep;
}

}  // namespace truncflow
