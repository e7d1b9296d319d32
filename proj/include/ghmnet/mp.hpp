#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ghmnet/bp.hpp"
#include "ghmnet/error.hpp"
#include "ghmnet/ghm.hpp"
#include "ghmnet/rng.hpp"

namespace ghmnet {

/// h - max(h). The result has max exactly 0; -inf entries are allowed as long
/// as one entry is finite.
inline void normalize_in_place(std::span<double> h) {
  double best = -std::numeric_limits<double>::infinity();
  for (double v : h) {
    require(!std::isnan(v), ErrorCode::numeric, "normalize: NaN entry");
    best = std::max(best, v);
  }
  require(std::isfinite(best), ErrorCode::numeric, "normalize: no finite entry");
  for (double& v : h) v -= best;
}

inline std::vector<double> normalize(std::span<const double> h) {
  std::vector<double> out(h.begin(), h.end());
  normalize_in_place(out);
  return out;
}

inline std::vector<double> softmax(std::span<const double> h) {
  std::vector<double> out(h.begin(), h.end());
  normalize_in_place(out);
  double total = 0.0;
  for (double& v : out) total += (v = std::exp(v));
  for (double& v : out) v /= total;
  return out;
}

/// out_s = log sum_a psi(s, a) exp(h_a), or psi(a, s) when `transpose`.
inline void log_sum_exp_map(const Matrix& psi, bool transpose, std::span<const double> h, std::span<double> out) {
  const int S = static_cast<int>(h.size());
  double best = -std::numeric_limits<double>::infinity();
  for (double v : h) best = std::max(best, v);
  for (int s = 0; s < S; ++s) {
    if (!std::isfinite(best)) {
      out[s] = best;
      continue;
    }
    double acc = 0.0;
    for (int a = 0; a < S; ++a) acc += (transpose ? psi(a, s) : psi(s, a)) * std::exp(h[a] - best);
    out[s] = best + std::log(acc);
  }
}

using VectorFn = std::function<void(std::span<const double> in, std::span<double> out)>;
/// Leaf map of the classification pass; x is the leaf state as a real number.
using LeafFn = std::function<void(double x, std::span<double> out)>;

/// The per-(layer, rank) maps driving message passing. Tables are indexed
/// [layer - 1][rank]. Classification uses `leaf` at layer L and `down` above
/// it; denoising uses `down` and `up` at every layer.
struct MessageFns {
  int S = 0;
  std::vector<LeafFn> leaf;
  std::vector<std::vector<VectorFn>> down;
  std::vector<std::vector<VectorFn>> up;
  std::vector<double> root_log_prior;  // empty means zero
};

struct AmpOptions {
  bool normalize = true;
};

/// All intermediate messages, flat node x S arrays by global node id.
/// Classification fills h and q (h unused at leaves); denoising fills all four,
/// with h holding the downward messages h_down.
struct MessageState {
  int S = 0;
  std::vector<double> h, q, u, b;
  std::vector<double> output;           // classification: label probabilities
  std::vector<double> leaf_posteriors;  // denoising: softmax of leaf b, d x S
  std::vector<double> mean;             // denoising: posterior mean per leaf

  std::span<const double> at(const std::vector<double>& a, int g) const {
    return std::span<const double>(a).subspan(static_cast<std::size_t>(g) * S, S);
  }
};

namespace detail {

template <class Fn>
const Fn& fetch(const std::vector<std::vector<Fn>>& table, int layer, int rank, const char* what) {
  const bool ok = layer >= 1 && static_cast<std::size_t>(layer) <= table.size() && rank >= 0 &&
                  static_cast<std::size_t>(rank) < table[layer - 1].size() && table[layer - 1][rank];
  require(ok, ErrorCode::configuration,
          std::string("missing ") + what + " function at layer " + std::to_string(layer) + " rank " + std::to_string(rank));
  return table[layer - 1][rank];
}

inline double prior_at(const MessageFns& fns, int s) { return fns.root_log_prior.empty() ? 0.0 : fns.root_log_prior[s]; }

inline void check_shape(const TreeTopology& topo, const MessageFns& fns) {
  require(fns.S >= 1, ErrorCode::configuration, "message functions have no state count");
  require(fns.root_log_prior.empty() || static_cast<int>(fns.root_log_prior.size()) == fns.S,
          ErrorCode::configuration, "root prior has wrong length");
  (void)topo;
}

}  // namespace detail

/// Leaf-to-root classification pass with the supplied maps.
inline MessageState amp_classify(const TreeTopology& topo, const MessageFns& fns, std::span<const int> leaves,
                                 AmpOptions opt = {}) {
  detail::check_shape(topo, fns);
  const int S = fns.S;
  const int L = topo.depth();
  const int d = topo.leaf_count();
  require(static_cast<int>(leaves.size()) == d, ErrorCode::dimension_mismatch, "leaf vector has wrong length");
  MessageState st;
  st.S = S;
  st.h.assign(static_cast<std::size_t>(topo.node_count()) * S, 0.0);
  st.q.assign(st.h.size(), 0.0);
  auto slot = [&](std::vector<double>& a, int g) { return std::span<double>(a).subspan(static_cast<std::size_t>(g) * S, S); };

  const int mL = topo.branching(L);
  for (int v = 0; v < d; ++v) {
    const int k = v % mL;
    require(k < static_cast<int>(fns.leaf.size()) && fns.leaf[k], ErrorCode::configuration,
            "missing leaf function for rank " + std::to_string(k));
    fns.leaf[k](static_cast<double>(leaves[v]), slot(st.q, topo.layer_start(L) + v));
  }
  for (int l = L; l >= 1; --l) {
    const int m = topo.branching(l);
    const int start = topo.layer_start(l);
    if (l < L) {
      for (int off = 0; off < topo.layer_size(l); ++off) {
        const auto& f = detail::fetch(fns.down, l, off % m, "downward");
        f(slot(st.h, start + off), slot(st.q, start + off));
      }
    }
    const int pstart = topo.layer_start(l - 1);
    for (int poff = 0; poff < topo.layer_size(l - 1); ++poff) {
      auto hp = slot(st.h, pstart + poff);
      std::fill(hp.begin(), hp.end(), 0.0);
      for (int k = 0; k < m; ++k) {
        auto qc = slot(st.q, start + poff * m + k);
        for (int s = 0; s < S; ++s) hp[s] += qc[s];
      }
      if (opt.normalize) normalize_in_place(hp);
    }
  }
  std::vector<double> logits(S);
  for (int s = 0; s < S; ++s) logits[s] = st.h[s] + detail::prior_at(fns, s);
  st.output = softmax(logits);
  return st;
}

/// Downward then upward denoising pass with the supplied maps; leaf messages
/// start at -(s - z_v)^2 / (2 sigma2).
inline MessageState amp_denoise(const TreeTopology& topo, const MessageFns& fns, std::span<const double> z,
                                double sigma2, AmpOptions opt = {}) {
  detail::check_shape(topo, fns);
  require(sigma2 > 0.0, ErrorCode::invalid_noise, "noise variance must be positive");
  const int S = fns.S;
  const int L = topo.depth();
  const int d = topo.leaf_count();
  require(static_cast<int>(z.size()) == d, ErrorCode::dimension_mismatch, "observation has wrong length");
  MessageState st;
  st.S = S;
  const std::size_t total = static_cast<std::size_t>(topo.node_count()) * S;
  st.h.assign(total, 0.0);
  st.q.assign(total, 0.0);
  st.u.assign(total, 0.0);
  st.b.assign(total, 0.0);
  auto slot = [&](std::vector<double>& a, int g) { return std::span<double>(a).subspan(static_cast<std::size_t>(g) * S, S); };
  std::vector<double> scratch(S);

  const int leaf0 = topo.layer_start(L);
  for (int v = 0; v < d; ++v)
    for (int s = 0; s < S; ++s) {
      const double r = state_value(s) - z[v];
      st.h[static_cast<std::size_t>(leaf0 + v) * S + s] = -r * r / (2.0 * sigma2);
    }

  for (int l = L; l >= 1; --l) {
    const int m = topo.branching(l);
    const int start = topo.layer_start(l);
    for (int off = 0; off < topo.layer_size(l); ++off) {
      const auto& f = detail::fetch(fns.down, l, off % m, "downward");
      auto hv = slot(st.h, start + off);
      std::copy(hv.begin(), hv.end(), scratch.begin());
      if (opt.normalize) normalize_in_place(scratch);
      f(scratch, slot(st.q, start + off));
    }
    const int pstart = topo.layer_start(l - 1);
    for (int poff = 0; poff < topo.layer_size(l - 1); ++poff) {
      auto hp = slot(st.h, pstart + poff);
      std::fill(hp.begin(), hp.end(), 0.0);
      for (int k = 0; k < m; ++k) {
        auto qc = slot(st.q, start + poff * m + k);
        for (int s = 0; s < S; ++s) hp[s] += qc[s];
      }
    }
  }

  for (int s = 0; s < S; ++s) st.b[s] = st.h[s] + detail::prior_at(fns, s);

  for (int l = 1; l <= L; ++l) {
    const int m = topo.branching(l);
    const int start = topo.layer_start(l);
    for (int off = 0; off < topo.layer_size(l); ++off) {
      const int g = start + off;
      const int parent = topo.layer_start(l - 1) + off / m;
      auto uv = slot(st.u, g);
      auto bp = slot(st.b, parent);
      std::copy(bp.begin(), bp.end(), uv.begin());
      auto qv = slot(st.q, g);
      for (int s = 0; s < S; ++s) scratch[s] = uv[s] - qv[s];
      if (opt.normalize) normalize_in_place(scratch);
      const auto& f = detail::fetch(fns.up, l, off % m, "upward");
      auto bv = slot(st.b, g);
      f(scratch, bv);
      auto hv = slot(st.h, g);
      for (int s = 0; s < S; ++s) bv[s] += hv[s];
    }
  }

  st.leaf_posteriors.assign(static_cast<std::size_t>(d) * S, 0.0);
  st.mean.assign(d, 0.0);
  for (int v = 0; v < d; ++v) {
    auto post = softmax(st.at(st.b, leaf0 + v));
    for (int s = 0; s < S; ++s) {
      st.leaf_posteriors[static_cast<std::size_t>(v) * S + s] = post[s];
      st.mean[v] += state_value(s) * post[s];
    }
  }
  return st;
}

/// Leaf state as an index; the exact leaf map is only defined on [S].
inline int leaf_state_index(double x, int S) {
  const double r = std::round(x);
  require(r == x && r >= 1 && r <= S, ErrorCode::invalid_sample, "leaf input is not a state in [1, S]");
  return static_cast<int>(r) - 1;
}

/// Exact maps built from a set of tables (indexed [layer - 1][rank]).
inline MessageFns exact_fns_from_tables(const std::vector<std::vector<Matrix>>& tables, int S,
                                        std::vector<double> root_log_prior) {
  MessageFns fns;
  fns.S = S;
  fns.root_log_prior = std::move(root_log_prior);
  const int L = static_cast<int>(tables.size());
  fns.down.resize(L);
  fns.up.resize(L);
  for (int l = 0; l < L; ++l) {
    for (const Matrix& t : tables[l]) {
      fns.down[l].push_back([t](std::span<const double> h, std::span<double> out) { log_sum_exp_map(t, false, h, out); });
      fns.up[l].push_back([t](std::span<const double> h, std::span<double> out) { log_sum_exp_map(t, true, h, out); });
    }
  }
  for (const Matrix& t : tables.back()) {
    fns.leaf.push_back([t, S](double x, std::span<double> out) {
      const int a = leaf_state_index(x, S);
      for (int s = 0; s < S; ++s) out[s] = std::log(t(s, a));
    });
  }
  return fns;
}

/// The exact maps with the root marginal kept as a separate log prior.
inline MessageFns exact_fns(const GhmParams& p) {
  std::vector<double> prior(p.S);
  for (int s = 0; s < p.S; ++s) prior[s] = std::log(p.root_marginal[s]);
  return exact_fns_from_tables(p.psi, p.S, std::move(prior));
}

/// Tables with the root marginal folded into layer 1, rank 0:
/// psi~(y, a) = mu(y) / max(mu) * psi(y, a). Message passing with these tables
/// and no root prior yields the same posteriors, which lets a network without
/// a separate prior input represent a non-uniform root.
inline std::vector<std::vector<Matrix>> absorbed_tables(const GhmParams& p) {
  auto tables = p.psi;
  const double top = *std::max_element(p.root_marginal.begin(), p.root_marginal.end());
  for (int y = 0; y < p.S; ++y) tables[0][0].row(y) *= p.root_marginal[y] / top;
  return tables;
}

/// Entry bound satisfied by absorbed_tables: K * max(mu) / min(mu).
inline double absorbed_bound(const GhmParams& p) {
  const auto [lo, hi] = std::minmax_element(p.root_marginal.begin(), p.root_marginal.end());
  return p.K * (*hi / *lo);
}

inline MessageFns absorbed_fns(const GhmParams& p) { return exact_fns_from_tables(absorbed_tables(p), p.S, {}); }

/// Adds delta * v to every map output, with v a fixed vector in [-1, 1]^S drawn
/// per (direction, layer, rank).
inline MessageFns perturbed_fns(const MessageFns& base, double delta, std::uint64_t seed) {
  MessageFns out = base;
  const int S = base.S;
  auto offset = [&](const std::string& tag, int layer, int rank) {
    Rng rng(derive_seed(seed, tag, static_cast<std::uint64_t>(layer) * 1000 + rank));
    std::vector<double> v(S);
    for (double& x : v) x = delta * rng.uniform(-1.0, 1.0);
    return v;
  };
  for (std::size_t k = 0; k < out.leaf.size(); ++k) {
    auto v = offset("leaf", 0, static_cast<int>(k));
    out.leaf[k] = [f = base.leaf[k], v](double x, std::span<double> o) {
      f(x, o);
      for (std::size_t s = 0; s < v.size(); ++s) o[s] += v[s];
    };
  }
  auto wrap = [&](std::vector<std::vector<VectorFn>>& table, const std::vector<std::vector<VectorFn>>& src,
                  const std::string& tag) {
    for (std::size_t l = 0; l < table.size(); ++l)
      for (std::size_t k = 0; k < table[l].size(); ++k) {
        auto v = offset(tag, static_cast<int>(l) + 1, static_cast<int>(k));
        table[l][k] = [f = src[l][k], v](std::span<const double> h, std::span<double> o) {
          f(h, o);
          for (std::size_t s = 0; s < v.size(); ++s) o[s] += v[s];
        };
      }
  };
  wrap(out.down, base.down, "down");
  wrap(out.up, base.up, "up");
  return out;
}

/// Log-domain Bayes classifier.
inline std::vector<double> mp_classify(const GhmParams& p, std::span<const int> leaves, AmpOptions opt = {}) {
  for (int x : leaves) require(x >= 1 && x <= p.S, ErrorCode::invalid_sample, "leaf state out of range");
  return amp_classify(p.topology, exact_fns(p), leaves, opt).output;
}

/// Log-domain Bayes denoiser.
inline DenoiseResult mp_denoise(const GhmParams& p, std::span<const double> z, double sigma2, AmpOptions opt = {}) {
  auto st = amp_denoise(p.topology, exact_fns(p), z, sigma2, opt);
  return DenoiseResult{p.S, std::move(st.leaf_posteriors), std::move(st.mean)};
}

}  // namespace ghmnet
