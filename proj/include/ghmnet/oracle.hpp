#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ghmnet/error.hpp"
#include "ghmnet/ghm.hpp"

// Brute-force ground truth by exhaustive enumeration. Everything here sums
// over full joint configurations in a fixed order and never calls into the
// message-passing code it is used to validate.

namespace ghmnet::oracle {

inline constexpr std::uint64_t kEnumerationLimit = 10'000'000;

/// Posterior tables for the denoising task.
struct PosteriorTable {
  int S = 0;
  std::vector<double> leaf_posteriors;  // d x S, row-major
  std::vector<double> mean;             // E[x_v | z]

  std::span<const double> posterior(int leaf) const {
    return std::span<const double>(leaf_posteriors).subspan(static_cast<std::size_t>(leaf) * S, S);
  }
};

namespace detail {

/// Numerically stable running log-sum-exp.
struct LogSum {
  double max = -std::numeric_limits<double>::infinity();
  double scaled = 0.0;

  void add(double value) {
    if (value == -std::numeric_limits<double>::infinity()) return;
    if (value <= max) {
      scaled += std::exp(value - max);
    } else {
      scaled = scaled * std::exp(max - value) + 1.0;
      max = value;
    }
  }
  double log() const { return scaled > 0.0 ? max + std::log(scaled) : -std::numeric_limits<double>::infinity(); }
};

inline std::uint64_t checked_power(int base, int exponent, std::uint64_t limit) {
  std::uint64_t total = 1;
  for (int i = 0; i < exponent; ++i) {
    total *= static_cast<std::uint64_t>(base);
    if (total > limit)
      throw Error(ErrorCode::enumeration_limit, std::to_string(base) + "^" + std::to_string(exponent) +
                                                    " configurations exceed the limit of " + std::to_string(limit));
  }
  return total;
}

/// Precomputed log tables, indexed by child global id.
struct LogModel {
  const TreeTopology* topo;
  int S;
  std::vector<double> log_root;
  std::vector<int> parent;           // global parent id, -1 for root
  std::vector<const Matrix*> table;  // table of the edge into this node

  explicit LogModel(const GhmParams& p) : topo(&p.topology), S(p.S) {
    for (double v : p.root_marginal) log_root.push_back(std::log(v));
    const int n = topo->node_count();
    parent.assign(n, -1);
    table.assign(n, nullptr);
    for (int g = 1; g < n; ++g) {
      NodeId v = topo->node(g);
      parent[g] = topo->index(topo->parent(v));
      table[g] = &p.table(v.layer, topo->rank(v));
    }
  }

  /// states are 0-based, one per global node id.
  double log_joint(std::span<const int> states) const {
    double total = log_root[states[0]];
    for (std::size_t g = 1; g < states.size(); ++g) total += std::log((*table[g])(states[parent[g]], states[g]));
    return total;
  }
};

/// Advances the odometer over positions [begin, end); false once it wraps.
inline bool advance(std::vector<int>& states, int begin, int end, int S) {
  for (int i = end - 1; i >= begin; --i) {
    if (++states[i] < S) return true;
    states[i] = 0;
  }
  return false;
}

}  // namespace detail

/// Lexicographic index of a leaf configuration (first leaf most significant).
inline std::uint64_t leaf_config_index(std::span<const int> leaves, int S) {
  std::uint64_t idx = 0;
  for (int x : leaves) idx = idx * S + static_cast<std::uint64_t>(x - 1);
  return idx;
}

inline std::vector<int> leaf_config(std::uint64_t index, int d, int S) {
  std::vector<int> leaves(d);
  for (int v = d - 1; v >= 0; --v) {
    leaves[v] = static_cast<int>(index % S) + 1;
    index /= S;
  }
  return leaves;
}

/// mu(y | x) by summing the joint over every hidden configuration.
inline std::vector<double> posterior_label(const GhmParams& p, std::span<const int> leaves,
                                           std::uint64_t limit = kEnumerationLimit) {
  const auto& topo = p.topology;
  const int d = topo.leaf_count();
  require(static_cast<int>(leaves.size()) == d, ErrorCode::dimension_mismatch, "leaf vector has wrong length");
  for (int x : leaves) require(x >= 1 && x <= p.S, ErrorCode::invalid_sample, "leaf state out of range");
  const int hidden = topo.node_count() - d;
  detail::checked_power(p.S, hidden, limit);

  detail::LogModel model(p);
  std::vector<int> states(topo.node_count(), 0);
  for (int v = 0; v < d; ++v) states[hidden + v] = leaves[v] - 1;
  std::vector<detail::LogSum> per_label(p.S);
  do {
    per_label[states[0]].add(model.log_joint(states));
  } while (detail::advance(states, 0, hidden, p.S));

  detail::LogSum total;
  for (const auto& acc : per_label) total.add(acc.log());
  require(std::isfinite(total.log()), ErrorCode::numeric, "leaf configuration has zero probability");
  std::vector<double> post(p.S);
  for (int y = 0; y < p.S; ++y) post[y] = std::exp(per_label[y].log() - total.log());
  return post;
}

/// Per-leaf posteriors and posterior mean of clean leaves given z = x + N(0, sigma2 I).
inline PosteriorTable posterior_denoise(const GhmParams& p, std::span<const double> z, double sigma2,
                                        std::uint64_t limit = kEnumerationLimit) {
  const auto& topo = p.topology;
  const int d = topo.leaf_count();
  require(static_cast<int>(z.size()) == d, ErrorCode::dimension_mismatch, "observation has wrong length");
  require(sigma2 > 0.0, ErrorCode::invalid_noise, "noise variance must be positive");
  const int n = topo.node_count();
  detail::checked_power(p.S, n, limit);

  detail::LogModel model(p);
  const int first_leaf = n - d;
  std::vector<int> states(n, 0);
  detail::LogSum total;
  std::vector<detail::LogSum> marg(static_cast<std::size_t>(d) * p.S);
  do {
    double w = model.log_joint(states);
    for (int v = 0; v < d; ++v) {
      const double r = state_value(states[first_leaf + v]) - z[v];
      w -= r * r / (2.0 * sigma2);
    }
    total.add(w);
    for (int v = 0; v < d; ++v) marg[static_cast<std::size_t>(v) * p.S + states[first_leaf + v]].add(w);
  } while (detail::advance(states, 0, n, p.S));

  PosteriorTable out;
  out.S = p.S;
  out.leaf_posteriors.resize(marg.size());
  out.mean.assign(d, 0.0);
  for (int v = 0; v < d; ++v) {
    for (int s = 0; s < p.S; ++s) {
      const double prob = std::exp(marg[static_cast<std::size_t>(v) * p.S + s].log() - total.log());
      out.leaf_posteriors[static_cast<std::size_t>(v) * p.S + s] = prob;
      out.mean[v] += state_value(s) * prob;
    }
  }
  return out;
}

/// Marginal law of the leaves, indexed by leaf_config_index.
inline std::vector<double> leaf_marginal(const GhmParams& p, std::uint64_t limit = kEnumerationLimit) {
  const auto& topo = p.topology;
  const int d = topo.leaf_count();
  const int n = topo.node_count();
  detail::checked_power(p.S, n, limit);
  const std::uint64_t leaf_configs = detail::checked_power(p.S, d, limit);

  detail::LogModel model(p);
  std::vector<detail::LogSum> acc(leaf_configs);
  std::vector<int> states(n, 0);
  do {
    std::uint64_t idx = 0;
    for (int v = n - d; v < n; ++v) idx = idx * p.S + static_cast<std::uint64_t>(states[v]);
    acc[idx].add(model.log_joint(states));
  } while (detail::advance(states, 0, n, p.S));
  std::vector<double> out(leaf_configs);
  for (std::uint64_t i = 0; i < leaf_configs; ++i) out[i] = std::exp(acc[i].log());
  return out;
}

}  // namespace ghmnet::oracle
