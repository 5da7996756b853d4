#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "truncflow/manifold.hpp"

namespace truncflow {

using Cluster = std::vector<Vector>;

/// Position of a training point: cluster index and index within the cluster.
struct PointRef {
  std::size_t cluster = 0;
  std::size_t index = 0;
  friend bool operator==(const PointRef&, const PointRef&) = default;
};

/// Q clusters of input points; cluster l defines the empirical measure mu_l.
class TrainingSet {
 public:
  TrainingSet(Eigen::Index dim, std::vector<Cluster> clusters) : dim_(dim), clusters_(std::move(clusters)) {
    if (dim_ < 1) throw DimensionMismatch("TrainingSet: dimension must be >= 1");
    if (clusters_.empty()) throw EmptyCluster("TrainingSet: no clusters");
    offsets_.reserve(clusters_.size() + 1);
    offsets_.push_back(0);
    for (std::size_t c = 0; c < clusters_.size(); ++c) {
      if (clusters_[c].empty()) throw EmptyCluster("TrainingSet: cluster " + std::to_string(c) + " is empty");
      for (const auto& x : clusters_[c]) {
        if (x.size() != dim_) {
          throw DimensionMismatch("TrainingSet: point in cluster " + std::to_string(c) + " has length " +
                                  std::to_string(x.size()) + ", expected " + std::to_string(dim_));
        }
      }
      offsets_.push_back(offsets_.back() + clusters_[c].size());
    }
  }

  Eigen::Index dim() const { return dim_; }
  std::size_t num_clusters() const { return clusters_.size(); }
  const Cluster& cluster(std::size_t c) const { return clusters_.at(c); }
  const std::vector<Cluster>& clusters() const { return clusters_; }
  std::size_t count(std::size_t c) const { return clusters_.at(c).size(); }
  std::size_t total() const { return offsets_.back(); }

  /// Flat index of a point over all clusters, cluster-major.
  std::size_t flat_index(PointRef p) const { return offsets_.at(p.cluster) + p.index; }
  PointRef point_ref(std::size_t flat) const {
    std::size_t c = 0;
    while (offsets_[c + 1] <= flat) ++c;
    return PointRef{c, flat - offsets_[c]};
  }
  const Vector& point(PointRef p) const { return clusters_.at(p.cluster).at(p.index); }

 private:
  Eigen::Index dim_;
  std::vector<Cluster> clusters_;
  std::vector<std::size_t> offsets_;
};

}  // namespace truncflow
