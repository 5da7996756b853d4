#pragma once

// Network data model in input space: aligned cumulative parameters
// (R_l, beta_l), truncation maps tau_l(x) = R^T relu(R (x + beta)) - beta,
// sector classification and the two L2 costs.

#include <compare>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "truncflow/manifold.hpp"
#include "truncflow/training_set.hpp"

namespace truncflow {

/// Sign pattern nu in {0,1}^Q; bit r is h(x_r) with h(0) = 0.
struct SectorMask {
  std::vector<bool> bits;

  std::size_t size() const { return bits.size(); }
  bool operator[](std::size_t r) const { return bits[r]; }
  bool all_positive() const;
  bool all_truncated() const;
  /// Neither the positive nor the negative orthant.
  bool off_diagonal() const { return !all_positive() && !all_truncated(); }
  std::string to_string() const;

  friend bool operator==(const SectorMask&, const SectorMask&) = default;
  friend auto operator<=>(const SectorMask& a, const SectorMask& b) { return a.bits <=> b.bits; }
};

inline bool SectorMask::all_positive() const {
  for (bool b : bits)
    if (!b) return false;
  return true;
}

inline bool SectorMask::all_truncated() const {
  for (bool b : bits)
    if (b) return false;
  return true;
}

inline std::string SectorMask::to_string() const {
  std::string s;
  s.reserve(bits.size());
  for (bool b : bits) s.push_back(b ? '1' : '0');
  return s;
}

/// bits[i] = (x[i] > 0). A zero coordinate counts as truncated.
inline SectorMask heaviside_mask(const Vector& x) {
  SectorMask m;
  m.bits.resize(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) m.bits[static_cast<std::size_t>(i)] = x(i) > 0.0;
  return m;
}

/// diag(bits) applied to a vector.
inline Vector apply_mask(const SectorMask& m, const Vector& x) {
  Vector out = x;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!m.bits[static_cast<std::size_t>(i)]) out(i) = 0.0;
  return out;
}

inline Vector mask_vector(const SectorMask& m) {
  Vector v(static_cast<Eigen::Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) v(static_cast<Eigen::Index>(i)) = m.bits[i] ? 1.0 : 0.0;
  return v;
}

/// Aligned layer parameters (R_l, beta_l). The diagonal factor of W^(l) drops out of tau_l.
struct LayerParams {
  OrthogonalMatrix rotation;
  Vector beta;

  LayerParams(OrthogonalMatrix r, Vector b) : rotation(std::move(r)), beta(std::move(b)) {
    if (beta.size() != rotation.dim()) throw DimensionMismatch("LayerParams: beta length != Q");
  }
  Eigen::Index dim() const { return rotation.dim(); }
  const Matrix& r() const { return rotation.matrix(); }
};

/// Layers plus the fixed output map W^(Q+1) and the labels y_l.
/// Pulled-back labels W^(Q+1)^{-1} y_l are solved for once at construction.
class ModelState {
 public:
  ModelState(std::vector<LayerParams> layers, Matrix output_map, std::vector<Vector> labels)
      : layers_(std::move(layers)), output_map_(std::move(output_map)), labels_(std::move(labels)) {
    if (layers_.empty()) throw DimensionMismatch("ModelState: at least one layer required");
    const Eigen::Index q = layers_.front().dim();
    for (const auto& l : layers_)
      if (l.dim() != q) throw DimensionMismatch("ModelState: layers disagree on Q");
    require_square(output_map_, "ModelState output_map");
    if (output_map_.rows() != q) throw DimensionMismatch("ModelState: output_map is not Q x Q");
    Eigen::JacobiSVD<Matrix> svd(output_map_);
    const Vector& s = svd.singularValues();
    if (!(s(0) > 0.0) || !(s(s.size() - 1) > 1e-12 * s(0)))
      throw SingularInput("ModelState: output_map is singular");
    const auto qr = output_map_.colPivHouseholderQr();
    pulled_.reserve(labels_.size());
    for (std::size_t l = 0; l < labels_.size(); ++l) {
      if (labels_[l].size() != q) throw DimensionMismatch("ModelState: label " + std::to_string(l) + " length != Q");
      Vector yt = qr.solve(labels_[l]);
      if ((output_map_ * yt - labels_[l]).norm() > 1e-10 * std::max(1.0, labels_[l].norm()))
        throw SingularInput("ModelState: pulled-back label " + std::to_string(l) + " inaccurate");
      pulled_.push_back(std::move(yt));
    }
  }

  Eigen::Index dim() const { return layers_.front().dim(); }
  std::size_t num_layers() const { return layers_.size(); }
  const std::vector<LayerParams>& layers() const { return layers_; }
  const LayerParams& layer(std::size_t l) const { return layers_.at(l); }
  const Matrix& output_map() const { return output_map_; }
  const std::vector<Vector>& labels() const { return labels_; }
  const std::vector<Vector>& pulled_labels() const { return pulled_; }
  const Vector& pulled_label(std::size_t l) const { return pulled_.at(l); }

  /// Same output map and labels, new layer parameters.
  ModelState with_layers(std::vector<LayerParams> layers) const {
    ModelState s = *this;
    if (layers.size() != layers_.size()) throw DimensionMismatch("with_layers: layer count changed");
    s.layers_ = std::move(layers);
    return s;
  }

 private:
  std::vector<LayerParams> layers_;
  Matrix output_map_;
  std::vector<Vector> labels_;
  std::vector<Vector> pulled_;
};

/// R^T relu(R (x + beta)) - beta.
inline Vector truncation_map(const LayerParams& layer, const Vector& x) {
  const Vector z = layer.r() * (x + layer.beta);
  return layer.r().transpose() * z.cwiseMax(0.0) - layer.beta;
}

/// W^{-1} relu(W (x + beta)) - beta for an arbitrary invertible W.
inline Vector truncation_map_general(const Matrix& w, const Vector& beta, const Vector& x) {
  const Vector z = w * (x + beta);
  return w.partialPivLu().solve(Vector(z.cwiseMax(0.0))) - beta;
}

/// heaviside_mask(R (x + beta)).
inline SectorMask classify_sector(const LayerParams& layer, const Vector& x) {
  return heaviside_mask(layer.r() * (x + layer.beta));
}

/// Applies layers [from, to) in ascending order. An empty range returns x.
inline Vector chained_truncation(const std::vector<LayerParams>& layers, const Vector& x, std::size_t from,
                                 std::size_t to) {
  if (from > to || to > layers.size())
    throw IndexRange("chained_truncation: range [" + std::to_string(from) + ", " + std::to_string(to) +
                     ") outside [0, " + std::to_string(layers.size()) + ")");
  Vector y = x;
  for (std::size_t l = from; l < to; ++l) y = truncation_map(layers[l], y);
  return y;
}

namespace detail {

inline void check_cost_inputs(const ModelState& state, const TrainingSet& data) {
  if (data.num_clusters() != state.labels().size())
    throw DimensionMismatch("cost: " + std::to_string(data.num_clusters()) + " clusters but " +
                            std::to_string(state.labels().size()) + " labels");
  if (data.dim() != state.dim()) throw DimensionMismatch("cost: data dimension != Q");
}

}  // namespace detail

/// (1/2) sum_l (1/N_l) sum_i |tau_L...tau_1(x_li) - ytilde_l|^2.
inline double euclidean_cost(const ModelState& state, const TrainingSet& data) {
  detail::check_cost_inputs(state, data);
  double total = 0.0;
  for (std::size_t c = 0; c < data.num_clusters(); ++c) {
    double acc = 0.0;
    for (const auto& x : data.cluster(c))
      acc += (chained_truncation(state.layers(), x, 0, state.num_layers()) - state.pulled_label(c)).squaredNorm();
    total += acc / static_cast<double>(data.count(c));
  }
  return 0.5 * total;
}

/// Pullback-metric cost: same as euclidean_cost with |W^(Q+1) (.)|.
inline double standard_cost(const ModelState& state, const TrainingSet& data) {
  detail::check_cost_inputs(state, data);
  double total = 0.0;
  for (std::size_t c = 0; c < data.num_clusters(); ++c) {
    double acc = 0.0;
    for (const auto& x : data.cluster(c)) {
      const Vector d = chained_truncation(state.layers(), x, 0, state.num_layers()) - state.pulled_label(c);
      acc += (state.output_map() * d).squaredNorm();
    }
    total += acc / static_cast<double>(data.count(c));
  }
  return 0.5 * total;
}

/// Cost under the cluster-separation assumption: cluster l only sees tau_l.
/// Equals euclidean_cost when truncations are cluster separated.
inline double separated_cost(const ModelState& state, const TrainingSet& data) {
  detail::check_cost_inputs(state, data);
  if (data.num_clusters() != state.num_layers())
    throw DimensionMismatch("separated_cost: needs one layer per cluster");
  double total = 0.0;
  for (std::size_t c = 0; c < data.num_clusters(); ++c) {
    double acc = 0.0;
    for (const auto& x : data.cluster(c))
      acc += (truncation_map(state.layer(c), x) - state.pulled_label(c)).squaredNorm();
    total += acc / static_cast<double>(data.count(c));
  }
  return 0.5 * total;
}

}  // namespace truncflow
