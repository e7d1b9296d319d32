#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ghmnet/error.hpp"
#include "ghmnet/rng.hpp"
#include "ghmnet/text_io.hpp"
#include "ghmnet/topology.hpp"

namespace ghmnet {

using Matrix = Eigen::MatrixXd;

/// Whether to enforce the 1/K <= psi <= K bound. Waiving it is reserved for
/// oracle tests that need deterministic (zero-entry) transitions.
enum class BoundCheck { enforce, waive };

/// Generative hierarchical model: a root marginal plus one row-stochastic
/// S x S transition table per (layer, child rank). psi(parent_state, child_state),
/// states are 0-based indices here and denote the values 1..S.
struct GhmParams {
  TreeTopology topology;
  int S = 2;
  double K = 2.0;
  std::vector<double> root_marginal;
  std::vector<std::vector<Matrix>> psi;  // psi[layer - 1][rank]

  const Matrix& table(int layer, int rank) const { return psi.at(layer - 1).at(rank); }
  int depth() const { return topology.depth(); }
  int leaf_count() const { return topology.leaf_count(); }
};

inline double state_value(int index) { return static_cast<double>(index + 1); }

inline void validate_params(const GhmParams& p, BoundCheck check = BoundCheck::enforce) {
  constexpr double tol = 1e-12;
  require(p.S >= 2, ErrorCode::invalid_params, "alphabet size must be at least 2");
  require(static_cast<int>(p.root_marginal.size()) == p.S, ErrorCode::invalid_params, "root marginal has wrong length");
  double total = 0.0;
  for (double v : p.root_marginal) {
    require(v >= 0.0 && std::isfinite(v), ErrorCode::invalid_params, "root marginal entries must be nonnegative");
    total += v;
  }
  require(std::abs(total - 1.0) <= tol, ErrorCode::invalid_params, "root marginal must sum to 1");
  require(static_cast<int>(p.psi.size()) == p.depth(), ErrorCode::invalid_params, "one table set per layer required");
  if (check == BoundCheck::enforce) require(p.K > 1.0, ErrorCode::invalid_params, "K must exceed 1");
  for (int l = 1; l <= p.depth(); ++l) {
    require(static_cast<int>(p.psi[l - 1].size()) == p.topology.branching(l), ErrorCode::invalid_params,
            "layer " + std::to_string(l) + " needs one table per rank");
    for (int r = 0; r < p.topology.branching(l); ++r) {
      const Matrix& t = p.table(l, r);
      require(t.rows() == p.S && t.cols() == p.S, ErrorCode::invalid_params, "table must be S x S");
      for (int s = 0; s < p.S; ++s) {
        double row = 0.0;
        for (int a = 0; a < p.S; ++a) {
          require(t(s, a) >= 0.0 && std::isfinite(t(s, a)), ErrorCode::invalid_params, "negative table entry");
          row += t(s, a);
        }
        require(std::abs(row - 1.0) <= tol, ErrorCode::invalid_params,
                "table (" + std::to_string(l) + "," + std::to_string(r + 1) + ") row " + std::to_string(s + 1) +
                    " is not stochastic");
      }
      if (check == BoundCheck::enforce) {
        require(t.minCoeff() >= 1.0 / p.K * (1.0 - tol) && t.maxCoeff() <= p.K, ErrorCode::invalid_params,
                "table (" + std::to_string(l) + "," + std::to_string(r + 1) + ") violates the K bound");
      }
    }
  }
}

inline GhmParams make_params(const TreeTopology& topology, int S, double K, std::vector<double> root,
                             std::vector<std::vector<Matrix>> tables, BoundCheck check = BoundCheck::enforce) {
  GhmParams p{topology, S, K, std::move(root), std::move(tables)};
  validate_params(p, check);
  return p;
}

namespace detail {

/// Raises entries below `floor` to `floor` and rescales the rest so the row
/// still sums to one. Repeats until no free entry falls under the floor.
inline void clip_row(std::vector<double>& row, double floor) {
  const int n = static_cast<int>(row.size());
  std::vector<bool> pinned(n, false);
  for (;;) {
    int pinned_count = 0;
    double free_mass = 0.0;
    for (int i = 0; i < n; ++i) {
      if (pinned[i]) ++pinned_count;
      else free_mass += row[i];
    }
    const double target = 1.0 - pinned_count * floor;
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      if (pinned[i]) continue;
      if (row[i] * target / free_mass < floor) {
        pinned[i] = true;
        changed = true;
      }
    }
    if (!changed) {
      for (int i = 0; i < n; ++i) row[i] = pinned[i] ? floor : row[i] * target / free_mass;
      return;
    }
  }
}

inline std::vector<double> dirichlet_row(int S, double floor, Rng& rng) {
  std::vector<double> row(S);
  double total = 0.0;
  for (auto& v : row) {
    v = rng.gamma(1.0);
    total += v;
  }
  for (auto& v : row) v /= total;
  clip_row(row, floor);
  return row;
}

}  // namespace detail

enum class PsiMode { random, uniform };
enum class RootMode { random, uniform };

/// Random instances: rows drawn from a flat Dirichlet, then clipped to the
/// floor 1/K and renormalized; the result is checked against the bound.
inline GhmParams generate_params(const TreeTopology& topology, int S, double K, PsiMode mode, std::uint64_t seed,
                                 RootMode root_mode = RootMode::random) {
  require(S >= 2, ErrorCode::invalid_params, "alphabet size must be at least 2");
  require(K > 1.0, ErrorCode::invalid_params, "K must exceed 1");
  require(K >= S, ErrorCode::invalid_params,
          "no row-stochastic table over " + std::to_string(S) + " states has all entries >= 1/K with K < S");
  Rng rng(seed);
  const double floor = 1.0 / K;
  GhmParams p;
  p.topology = topology;
  p.S = S;
  p.K = K;
  if (mode == PsiMode::uniform || root_mode == RootMode::uniform) {
    p.root_marginal.assign(S, 1.0 / S);
  } else {
    p.root_marginal = detail::dirichlet_row(S, floor, rng);
  }
  for (int l = 1; l <= topology.depth(); ++l) {
    std::vector<Matrix> layer;
    for (int r = 0; r < topology.branching(l); ++r) {
      Matrix t(S, S);
      for (int s = 0; s < S; ++s) {
        if (mode == PsiMode::uniform) {
          t.row(s).setConstant(1.0 / S);
        } else {
          auto row = detail::dirichlet_row(S, floor, rng);
          for (int a = 0; a < S; ++a) t(s, a) = row[a];
        }
      }
      layer.push_back(std::move(t));
    }
    p.psi.push_back(std::move(layer));
  }
  validate_params(p);
  return p;
}

/// Test helper: every table copies the parent state. Violates the K bound.
inline GhmParams copy_chain_params(const TreeTopology& topology, int S, std::vector<double> root = {}) {
  if (root.empty()) root.assign(S, 1.0 / S);
  std::vector<std::vector<Matrix>> tables;
  for (int l = 1; l <= topology.depth(); ++l)
    tables.emplace_back(topology.branching(l), Matrix::Identity(S, S));
  return make_params(topology, S, std::numeric_limits<double>::infinity(), std::move(root), std::move(tables),
                     BoundCheck::waive);
}

// ---------------------------------------------------------------------------
// Samples

/// One joint draw. layers[0] = {y}, layers[L] = leaves; states are 1..S.
struct Sample {
  std::vector<std::vector<int>> layers;

  int label() const { return layers.front().front(); }
  const std::vector<int>& leaves() const { return layers.back(); }
};

inline Sample sample(const GhmParams& p, Rng& rng) {
  const auto& topo = p.topology;
  Sample out;
  out.layers.resize(topo.depth() + 1);
  out.layers[0] = {rng.categorical(p.root_marginal) + 1};
  std::vector<double> row(p.S);
  for (int l = 1; l <= topo.depth(); ++l) {
    const int m = topo.branching(l);
    auto& cur = out.layers[l];
    cur.resize(topo.layer_size(l));
    for (int off = 0; off < topo.layer_size(l); ++off) {
      const int parent_state = out.layers[l - 1][off / m] - 1;
      const Matrix& t = p.table(l, off % m);
      for (int a = 0; a < p.S; ++a) row[a] = t(parent_state, a);
      cur[off] = rng.categorical(row) + 1;
    }
  }
  return out;
}

inline Sample sample(const GhmParams& p, std::uint64_t seed) {
  Rng rng(seed);
  return sample(p, rng);
}

inline void check_sample(const GhmParams& p, const Sample& x) {
  const auto& topo = p.topology;
  require(static_cast<int>(x.layers.size()) == topo.depth() + 1, ErrorCode::invalid_sample, "wrong number of layers");
  for (int l = 0; l <= topo.depth(); ++l) {
    require(static_cast<int>(x.layers[l].size()) == topo.layer_size(l), ErrorCode::invalid_sample,
            "layer " + std::to_string(l) + " has wrong length");
    for (int s : x.layers[l])
      require(s >= 1 && s <= p.S, ErrorCode::invalid_sample, "state " + std::to_string(s) + " out of range");
  }
}

/// log mu(y, x^(1), ..., x^(L)) as a sum of log root and edge terms.
inline double log_joint_prob(const GhmParams& p, const Sample& x) {
  check_sample(p, x);
  const auto& topo = p.topology;
  double total = std::log(p.root_marginal[x.label() - 1]);
  for (int l = 1; l <= topo.depth(); ++l) {
    const int m = topo.branching(l);
    for (int off = 0; off < topo.layer_size(l); ++off) {
      total += std::log(p.table(l, off % m)(x.layers[l - 1][off / m] - 1, x.layers[l][off] - 1));
    }
  }
  return total;
}

inline double joint_prob(const GhmParams& p, const Sample& x) { return std::exp(log_joint_prob(p, x)); }

/// z = x + sigma * g with g iid standard normal.
inline std::vector<double> corrupt(std::span<const int> leaves, double sigma, Rng& rng) {
  std::vector<double> z(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) z[i] = leaves[i] + sigma * rng.normal();
  return z;
}

inline std::vector<double> corrupt(std::span<const int> leaves, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  return corrupt(leaves, sigma, rng);
}

// ---------------------------------------------------------------------------
// Table files
//
//   S <states>
//   root <p_1> ... <p_S>          (optional; uniform when absent)
//   table <layer> <rank>           (1-based) followed by S rows of S decimals
//
// '#' starts a comment. Every (layer, rank) must appear exactly once.

inline GhmParams read_params(std::istream& in, const TreeTopology& topology, double K,
                             BoundCheck check = BoundCheck::enforce) {
  TokenReader reader(in);
  auto header = reader.expect_line("header");
  if (header.size() != 2 || header[0] != "S") reader.fail("expected 'S <states>'");
  const int S = static_cast<int>(parse_int(header[1]));
  if (S < 2) reader.fail("S must be at least 2");
  std::vector<double> root(S, 1.0 / S);
  std::vector<std::vector<Matrix>> tables;
  std::vector<std::vector<bool>> seen;
  for (int l = 1; l <= topology.depth(); ++l) {
    tables.emplace_back(topology.branching(l), Matrix());
    seen.emplace_back(topology.branching(l), false);
  }
  for (auto tokens = reader.next_line(); !tokens.empty(); tokens = reader.next_line()) {
    if (tokens[0] == "root") {
      if (static_cast<int>(tokens.size()) != S + 1) reader.fail("root needs S probabilities");
      for (int s = 0; s < S; ++s) root[s] = parse_double(tokens[s + 1]);
    } else if (tokens[0] == "table") {
      if (tokens.size() != 3) reader.fail("expected 'table <layer> <rank>'");
      const int l = static_cast<int>(parse_int(tokens[1]));
      const int r = static_cast<int>(parse_int(tokens[2]));
      if (l < 1 || l > topology.depth() || r < 1 || r > topology.branching(l)) reader.fail("table index out of range");
      if (seen[l - 1][r - 1]) reader.fail("duplicate table");
      seen[l - 1][r - 1] = true;
      Matrix t(S, S);
      for (int s = 0; s < S; ++s) {
        auto row = reader.expect_line("table row");
        if (static_cast<int>(row.size()) != S) reader.fail("table row needs S entries");
        for (int a = 0; a < S; ++a) t(s, a) = parse_double(row[a]);
      }
      tables[l - 1][r - 1] = std::move(t);
    } else {
      reader.fail("unknown directive '" + tokens[0] + "'");
    }
  }
  for (int l = 1; l <= topology.depth(); ++l)
    for (int r = 0; r < topology.branching(l); ++r)
      if (!seen[l - 1][r]) throw Error(ErrorCode::parse, "missing table " + std::to_string(l) + " " + std::to_string(r + 1));
  return make_params(topology, S, K, std::move(root), std::move(tables), check);
}

inline GhmParams read_params_file(const std::string& path, const TreeTopology& topology, double K,
                                  BoundCheck check = BoundCheck::enforce) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open table file " + path);
  return read_params(in, topology, K, check);
}

inline void write_params(std::ostream& out, const GhmParams& p) {
  out << "S " << p.S << "\nroot";
  for (double v : p.root_marginal) out << ' ' << format_double(v);
  out << '\n';
  for (int l = 1; l <= p.depth(); ++l) {
    for (int r = 0; r < p.topology.branching(l); ++r) {
      out << "table " << l << ' ' << r + 1 << '\n';
      const Matrix& t = p.table(l, r);
      for (int s = 0; s < p.S; ++s) {
        for (int a = 0; a < p.S; ++a) out << (a ? " " : "") << format_double(t(s, a));
        out << '\n';
      }
    }
  }
}

}  // namespace ghmnet
