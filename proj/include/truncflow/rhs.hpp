#pragma once

// Vector fields of the gradient flows.
//
// Sign convention: Omega = -pi_-((dC/dR) R^T) and dR/ds = Omega R, so that
// d/de C(exp(e w) R) at e = 0 equals tr(w Omega) and the flow descends.
//
// Every field accepts an optional frozen activation pattern. With a pattern
// supplied, the Heaviside factors are taken from it instead of from the
// current state; this is the smooth extension of one piece of the
// piecewise-smooth field, used by the integrator to step up to a crossing.

#include <cstddef>
#include <string>
#include <vector>

#include "truncflow/measures.hpp"
#include "truncflow/model.hpp"

namespace truncflow {

struct LayerRhs {
  Vector beta_dot;
  AntisymmetricMatrix omega;
};

/// masks[layer][point]. For the effective flow the points of layer l are the
/// points of cluster l; for the general flow they are all points, flat-indexed.
using ActivationPattern = std::vector<std::vector<SectorMask>>;

namespace detail {

inline void check_effective_layer(const ModelState& state, const TrainingSet& data, std::size_t layer) {
  if (layer >= state.num_layers() || layer >= data.num_clusters() || layer >= state.pulled_labels().size())
    throw IndexRange("effective_rhs: layer " + std::to_string(layer) + " has no matching cluster/label");
  if (data.dim() != state.dim()) throw DimensionMismatch("effective_rhs: data dimension != Q");
}

// Strict upper triangle filled, lower mirrored with opposite sign.
inline AntisymmetricMatrix mirror_upper(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    m(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) m(j, i) = -m(i, j);
  }
  return AntisymmetricMatrix(std::move(m));
}

}  // namespace detail

/// Masks of cluster l's pushed-forward points under layer l, for every l.
inline ActivationPattern effective_pattern(const ModelState& state, const TrainingSet& data) {
  ActivationPattern p(state.num_layers());
  for (std::size_t l = 0; l < state.num_layers() && l < data.num_clusters(); ++l)
    for (const auto& x : data.cluster(l)) p[l].push_back(classify_sector(state.layer(l), x));
  return p;
}

/// Cluster-separated flow for one layer:
///   beta_dot = -R^T J0perp R (beta + ytilde)
///   Omega    = (1/N) sum_{z off-diagonal} [H(z), M(z) - z z^T / 2],
/// z = R(x + beta), w = R(beta + ytilde), M(z) = (z w^T + w z^T)/2.
inline LayerRhs effective_rhs(const ModelState& state, const TrainingSet& data, std::size_t layer,
                              const std::vector<SectorMask>* frozen = nullptr) {
  detail::check_effective_layer(state, data, layer);
  const Cluster& cluster = data.cluster(layer);
  if (cluster.empty()) throw EmptyCluster("effective_rhs: empty cluster");
  if (frozen != nullptr && frozen->size() != cluster.size())
    throw DimensionMismatch("effective_rhs: frozen pattern size mismatch");
  const LayerParams& lp = state.layer(layer);
  const Matrix& r = lp.r();
  const Eigen::Index q = state.dim();
  const Vector w = r * (lp.beta + state.pulled_label(layer));

  Vector j0_perp = Vector::Zero(q);
  Matrix upper = Matrix::Zero(q, q);
  for (std::size_t i = 0; i < cluster.size(); ++i) {
    const Vector z = r * (cluster[i] + lp.beta);
    const SectorMask nu = frozen ? (*frozen)[i] : heaviside_mask(z);
    for (Eigen::Index a = 0; a < q; ++a)
      if (!nu[static_cast<std::size_t>(a)]) j0_perp(a) += 1.0;
    if (!nu.off_diagonal()) continue;
    for (Eigen::Index a = 0; a < q; ++a) {
      for (Eigen::Index b = a + 1; b < q; ++b) {
        const double dnu = static_cast<double>(nu[static_cast<std::size_t>(a)]) -
                           static_cast<double>(nu[static_cast<std::size_t>(b)]);
        if (dnu == 0.0) continue;
        upper(a, b) += dnu * 0.5 * (z(a) * w(b) + w(a) * z(b) - z(a) * z(b));
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(cluster.size());
  j0_perp *= inv_n;
  upper *= inv_n;
  return LayerRhs{-(r.transpose() * j0_perp.cwiseProduct(w)), detail::mirror_upper(std::move(upper))};
}

/// effective_rhs evaluated through the moments J0perp, J1_nu, J2_nu:
///   [Omega]_ij = sum_nu (nu_i - nu_j) ((J1)_i w_j + w_i (J1)_j - (J2)_ij) / 2.
inline LayerRhs moment_form_rhs(const ModelState& state, const TrainingSet& data, std::size_t layer) {
  detail::check_effective_layer(state, data, layer);
  const LayerParams& lp = state.layer(layer);
  const Moments m = compute_moments(lp, data.cluster(layer));
  const Eigen::Index q = state.dim();
  const Vector w = lp.r() * (lp.beta + state.pulled_label(layer));
  Matrix upper = Matrix::Zero(q, q);
  for (const auto& [nu, j1] : m.j1_by_sector) {
    if (!nu.off_diagonal()) continue;
    const Matrix& j2 = m.j2_by_sector.at(nu);
    for (Eigen::Index a = 0; a < q; ++a) {
      for (Eigen::Index b = a + 1; b < q; ++b) {
        const double dnu = static_cast<double>(nu[static_cast<std::size_t>(a)]) -
                           static_cast<double>(nu[static_cast<std::size_t>(b)]);
        upper(a, b) += dnu * 0.5 * (j1(a) * w(b) + w(a) * j1(b) - j2(a, b));
      }
    }
  }
  return LayerRhs{-(lp.r().transpose() * m.j0_perp.cwiseProduct(w)), detail::mirror_upper(std::move(upper))};
}

struct ChainProjectors {
  Matrix p_plus;                  // P+_{from,to} = A_{to-1} ... A_from
  std::vector<Matrix> p_minus;    // p_minus[k - from] = A_{to-1} ... A_{k+1} A_perp_k
  std::vector<Vector> inputs;     // inputs[k - from]: iterate fed to layer k
  std::vector<SectorMask> masks;  // masks[k - from]: H at layer k
};

/// Projector expansion of the chained truncation over layers [from, to):
///   tau_{to-1} o ... o tau_from (x) = P+ x - sum_k P-_k beta_k,
/// with A_k = R_k^T H_k R_k and A_perp_k = R_k^T (1 - H_k) R_k, H_k evaluated
/// along the chain started at x (or taken from `frozen`, one mask per layer).
inline ChainProjectors chained_projectors(const std::vector<LayerParams>& layers, const Vector& x, std::size_t from,
                                          std::size_t to, const std::vector<SectorMask>* frozen = nullptr) {
  if (from > to || to > layers.size())
    throw IndexRange("chained_projectors: range [" + std::to_string(from) + ", " + std::to_string(to) +
                     ") outside [0, " + std::to_string(layers.size()) + ")");
  if (frozen != nullptr && frozen->size() != to - from)
    throw DimensionMismatch("chained_projectors: frozen mask count mismatch");
  const Eigen::Index q = x.size();
  ChainProjectors out;
  Vector it = x;
  for (std::size_t k = from; k < to; ++k) {
    const LayerParams& lp = layers[k];
    const Vector z = lp.r() * (it + lp.beta);
    SectorMask nu = frozen ? (*frozen)[k - from] : heaviside_mask(z);
    out.inputs.push_back(it);
    it = lp.r().transpose() * apply_mask(nu, z) - lp.beta;
    out.masks.push_back(std::move(nu));
  }
  const std::size_t n = to - from;
  out.p_minus.assign(n, Matrix());
  Matrix suffix = Matrix::Identity(q, q);
  for (std::size_t j = n; j-- > 0;) {
    const Matrix& r = layers[from + j].r();
    const Vector h = mask_vector(out.masks[j]);
    const Matrix a = r.transpose() * h.asDiagonal() * r;
    const Matrix a_perp = r.transpose() * (Vector::Ones(q) - h).asDiagonal() * r;
    out.p_minus[j] = suffix * a_perp;
    suffix = suffix * a;
  }
  out.p_plus = std::move(suffix);
  return out;
}

/// Masks at every layer for every point (flat index), along the chain.
inline ActivationPattern general_pattern(const ModelState& state, const TrainingSet& data) {
  ActivationPattern p(state.num_layers(), std::vector<SectorMask>(data.total()));
  for (std::size_t f = 0; f < data.total(); ++f) {
    Vector it = data.point(data.point_ref(f));
    for (std::size_t l = 0; l < state.num_layers(); ++l) {
      const LayerParams& lp = state.layer(l);
      const Vector z = lp.r() * (it + lp.beta);
      p[l][f] = heaviside_mask(z);
      it = lp.r().transpose() * z.cwiseMax(0.0) - lp.beta;
    }
  }
  return p;
}

/// Gradient flow of the full Euclidean cost without the separation assumption.
/// For a point x of cluster c with residual r = tau_L...tau_1(x) - ytilde_c:
///   beta_dot_l += (1/N_c) (P-_{l,L})^T r
///   Omega_l    -= (1/N_c) [H_l, (z g^T + g z^T)/2],
/// z = R_l(x_{l-1} + beta_l), g = R_l (P+_{l+1,L})^T r.
inline std::vector<LayerRhs> general_rhs(const ModelState& state, const TrainingSet& data,
                                         const ActivationPattern* frozen = nullptr) {
  detail::check_cost_inputs(state, data);
  const std::size_t nl = state.num_layers();
  const Eigen::Index q = state.dim();
  if (frozen != nullptr && frozen->size() != nl) throw DimensionMismatch("general_rhs: frozen pattern size mismatch");
  std::vector<Vector> beta_dot(nl, Vector::Zero(q));
  std::vector<Matrix> upper(nl, Matrix::Zero(q, q));
  std::vector<SectorMask> masks(nl);

  for (std::size_t f = 0; f < data.total(); ++f) {
    const PointRef pr = data.point_ref(f);
    const double weight = 1.0 / static_cast<double>(data.count(pr.cluster));
    const std::vector<SectorMask>* point_masks = nullptr;
    if (frozen) {
      for (std::size_t l = 0; l < nl; ++l) masks[l] = (*frozen)[l].at(f);
      point_masks = &masks;
    }
    const ChainProjectors cp = chained_projectors(state.layers(), data.point(pr), 0, nl, point_masks);
    const Vector out = cp.p_plus * data.point(pr) - [&] {
      Vector acc = Vector::Zero(q);
      for (std::size_t l = 0; l < nl; ++l) acc += cp.p_minus[l] * state.layer(l).beta;
      return acc;
    }();
    const Vector resid = out - state.pulled_label(pr.cluster);

    // Suffix products P+_{l+1,L}, built back to front.
    Matrix suffix = Matrix::Identity(q, q);
    for (std::size_t l = nl; l-- > 0;) {
      const LayerParams& lp = state.layer(l);
      beta_dot[l] += weight * (cp.p_minus[l].transpose() * resid);
      const SectorMask& nu = cp.masks[l];
      if (nu.off_diagonal()) {
        const Vector z = lp.r() * (cp.inputs[l] + lp.beta);
        const Vector g = lp.r() * (suffix.transpose() * resid);
        for (Eigen::Index a = 0; a < q; ++a) {
          for (Eigen::Index b = a + 1; b < q; ++b) {
            const double dnu = static_cast<double>(nu[static_cast<std::size_t>(a)]) -
                               static_cast<double>(nu[static_cast<std::size_t>(b)]);
            if (dnu == 0.0) continue;
            upper[l](a, b) -= weight * dnu * 0.5 * (z(a) * g(b) + g(a) * z(b));
          }
        }
      }
      const Vector h = mask_vector(nu);
      suffix = suffix * (lp.r().transpose() * h.asDiagonal() * lp.r());
    }
  }
  std::vector<LayerRhs> out;
  out.reserve(nl);
  for (std::size_t l = 0; l < nl; ++l) out.push_back(LayerRhs{beta_dot[l], detail::mirror_upper(std::move(upper[l]))});
  return out;
}

/// Collapsed data under the standard cost: B = [beta_1 ... beta_Q], W = W_{Q+1}, Y = [y_1 ... y_Q].
struct CollapsedState {
  Matrix b_matrix;
  Matrix w_out;
  Matrix y_matrix;

  CollapsedState(Matrix b, Matrix w, Matrix y) : b_matrix(std::move(b)), w_out(std::move(w)), y_matrix(std::move(y)) {
    require_square(b_matrix, "CollapsedState B");
    require_square(w_out, "CollapsedState W");
    require_square(y_matrix, "CollapsedState Y");
    if (b_matrix.rows() != w_out.rows() || b_matrix.rows() != y_matrix.rows())
      throw DimensionMismatch("CollapsedState: B, W, Y must share Q");
  }
  Eigen::Index dim() const { return b_matrix.rows(); }
};

struct CollapsedRhs {
  Matrix b_dot;
  Matrix w_dot;
};

/// B_dot = -W^T (W B + Y), W_dot = -(W B + Y) B^T.
inline CollapsedRhs collapsed_rhs(const CollapsedState& cs) {
  const Matrix e = cs.w_out * cs.b_matrix + cs.y_matrix;
  return CollapsedRhs{-(cs.w_out.transpose() * e), -(e * cs.b_matrix.transpose())};
}

/// (1/2) tr |W B + Y|^2
inline double collapsed_cost(const CollapsedState& cs) {
  return 0.5 * (cs.w_out * cs.b_matrix + cs.y_matrix).squaredNorm();
}

/// I = B B^T - W^T W, conserved along the collapsed flow.
inline Matrix conserved_quantity(const CollapsedState& cs) {
  return cs.b_matrix * cs.b_matrix.transpose() - cs.w_out.transpose() * cs.w_out;
}

}  // namespace truncflow
