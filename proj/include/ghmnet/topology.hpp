#pragma once

#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ghmnet/error.hpp"

namespace ghmnet {

/// A node addressed by layer (0 = root, L = leaves) and breadth-first offset
/// within that layer.
struct NodeId {
  int layer = 0;
  int offset = 0;

  friend bool operator==(const NodeId&, const NodeId&) = default;
};

/// Tree with a fixed branching factor per layer. Children of a node are
/// contiguous within the next layer and ordered by rank, so parent/child
/// lookups are integer arithmetic. Ranks are 0-based.
class TreeTopology {
 public:
  TreeTopology() = default;

  static TreeTopology build(std::span<const int> branching) {
    require(!branching.empty(), ErrorCode::invalid_topology, "branching sequence is empty");
    TreeTopology t;
    t.branching_.assign(branching.begin(), branching.end());
    t.layer_sizes_.push_back(1);
    for (int m : t.branching_) {
      require(m >= 1, ErrorCode::invalid_topology, "branching factor must be positive, got " + std::to_string(m));
      t.layer_sizes_.push_back(t.layer_sizes_.back() * m);
    }
    t.layer_start_.resize(t.layer_sizes_.size() + 1, 0);
    for (std::size_t l = 0; l < t.layer_sizes_.size(); ++l) t.layer_start_[l + 1] = t.layer_start_[l] + t.layer_sizes_[l];
    return t;
  }

  static TreeTopology build(int depth, std::span<const int> branching) {
    require(depth >= 1, ErrorCode::invalid_topology, "depth must be positive");
    require(static_cast<std::size_t>(depth) == branching.size(), ErrorCode::invalid_topology,
            "depth " + std::to_string(depth) + " does not match " + std::to_string(branching.size()) + " branching factors");
    return build(branching);
  }

  static TreeTopology build(std::initializer_list<int> branching) {
    return build(std::span<const int>(branching.begin(), branching.size()));
  }

  int depth() const { return static_cast<int>(branching_.size()); }
  /// m^(layer) for layer in [1, L].
  int branching(int layer) const { return branching_.at(layer - 1); }
  const std::vector<int>& branching_factors() const { return branching_; }
  /// d^(layer) for layer in [0, L].
  int layer_size(int layer) const { return layer_sizes_.at(layer); }
  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  int leaf_count() const { return layer_sizes_.back(); }
  int node_count() const { return layer_start_.back(); }
  int branching_l1_norm() const { return std::accumulate(branching_.begin(), branching_.end(), 0); }

  /// Dense global index; layers are stored consecutively, root first.
  int index(NodeId v) const { return layer_start_[v.layer] + v.offset; }
  int layer_start(int layer) const { return layer_start_[layer]; }
  NodeId node(int global) const {
    int layer = 0;
    while (layer_start_[layer + 1] <= global) ++layer;
    return {layer, global - layer_start_[layer]};
  }

  bool contains(NodeId v) const {
    return v.layer >= 0 && v.layer <= depth() && v.offset >= 0 && v.offset < layer_sizes_[v.layer];
  }

  NodeId parent(NodeId v) const {
    require(v.layer > 0, ErrorCode::no_siblings, "root has no parent");
    return {v.layer - 1, v.offset / branching_[v.layer - 1]};
  }

  int rank(NodeId v) const { return v.layer == 0 ? 0 : v.offset % branching_[v.layer - 1]; }

  NodeId child(NodeId v, int rank) const { return {v.layer + 1, v.offset * branching_[v.layer] + rank}; }

  std::vector<NodeId> children(NodeId v) const {
    std::vector<NodeId> out;
    if (v.layer == depth()) return out;
    for (int k = 0; k < branching_[v.layer]; ++k) out.push_back(child(v, k));
    return out;
  }

  std::vector<NodeId> siblings(NodeId v) const {
    require(v.layer > 0, ErrorCode::no_siblings, "the root has no siblings");
    std::vector<NodeId> out;
    NodeId p = parent(v);
    for (int k = 0; k < branching_[v.layer - 1]; ++k) {
      NodeId c = child(p, k);
      if (c != v) out.push_back(c);
    }
    return out;
  }

  friend bool operator==(const TreeTopology& a, const TreeTopology& b) { return a.branching_ == b.branching_; }

 private:
  std::vector<int> branching_;
  std::vector<int> layer_sizes_;
  std::vector<int> layer_start_;
};

}  // namespace ghmnet
