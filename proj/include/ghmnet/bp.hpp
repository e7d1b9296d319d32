#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ghmnet/error.hpp"
#include "ghmnet/ghm.hpp"

namespace ghmnet {

struct BpOptions {
  /// Visit children in reverse rank order (the result must not depend on it).
  bool reverse_children = false;
};

/// Beliefs of one belief-propagation run, each stored as a flat node x S array
/// indexed by global node id.
///   down: leaf-to-root beliefs (evidence below the node).
///   up:   root-to-leaf beliefs (evidence outside the subtree, prior included).
///   message: child-to-parent messages sum_a psi(s, a) down_child(a).
struct BeliefState {
  int S = 0;
  std::vector<double> down;
  std::vector<double> up;
  std::vector<double> message;
  std::vector<double> leaf_posterior;  // d x S
  std::vector<double> root_posterior;  // prior times down belief at the root
  double log_evidence = 0.0;           // log of sum over root of prior * unnormalized down belief

  std::span<const double> down_at(int g) const { return slice(down, g); }
  std::span<const double> up_at(int g) const { return slice(up, g); }
  std::span<const double> message_at(int g) const { return slice(message, g); }
  std::span<const double> leaf_posterior_at(int v) const { return slice(leaf_posterior, v); }

 private:
  std::span<const double> slice(const std::vector<double>& a, int i) const {
    return std::span<const double>(a).subspan(static_cast<std::size_t>(i) * S, S);
  }
};

/// Exact sum-product on the tree. Holds scratch buffers so repeated calls on the
/// same model do not allocate; not thread-safe, use one instance per thread.
class BeliefPropagation {
 public:
  explicit BeliefPropagation(const GhmParams& params, BpOptions options = {})
      : p_(params), options_(options), scratch_(params.S), prefix_(0), suffix_(0) {}

  /// Runs the leaf-to-root pass from per-leaf likelihoods (d x S, unnormalized),
  /// and the root-to-leaf pass when `with_up` is set.
  const BeliefState& run(std::span<const double> leaf_likelihood, bool with_up) {
    const auto& topo = p_.topology;
    const int S = p_.S;
    const int L = topo.depth();
    const int n = topo.node_count();
    const int d = topo.leaf_count();
    require(static_cast<int>(leaf_likelihood.size()) == d * S, ErrorCode::dimension_mismatch,
            "leaf likelihood has wrong size");
    st_.S = S;
    st_.down.assign(static_cast<std::size_t>(n) * S, 0.0);
    st_.message.assign(static_cast<std::size_t>(n) * S, 0.0);
    double log_scale = 0.0;

    const int leaf0 = topo.layer_start(L);
    for (int v = 0; v < d; ++v) {
      double* dst = &st_.down[static_cast<std::size_t>(leaf0 + v) * S];
      for (int s = 0; s < S; ++s) dst[s] = leaf_likelihood[static_cast<std::size_t>(v) * S + s];
      log_scale += normalize_in_place(dst);
    }

    for (int l = L; l >= 1; --l) {
      const int m = topo.branching(l);
      const int start = topo.layer_start(l);
      // child-to-parent messages for layer l
      for (int off = 0; off < topo.layer_size(l); ++off) {
        const Matrix& t = p_.table(l, off % m);
        const double* below = &st_.down[static_cast<std::size_t>(start + off) * S];
        double* msg = &st_.message[static_cast<std::size_t>(start + off) * S];
        for (int s = 0; s < S; ++s) {
          double acc = 0.0;
          for (int a = 0; a < S; ++a) acc += t(s, a) * below[a];
          msg[s] = acc;
        }
        log_scale += normalize_in_place(msg);
      }
      // parent beliefs as products of child messages
      const int pstart = topo.layer_start(l - 1);
      for (int poff = 0; poff < topo.layer_size(l - 1); ++poff) {
        double* belief = &st_.down[static_cast<std::size_t>(pstart + poff) * S];
        for (int s = 0; s < S; ++s) belief[s] = 1.0;
        for (int i = 0; i < m; ++i) {
          const int k = options_.reverse_children ? m - 1 - i : i;
          const double* msg = &st_.message[static_cast<std::size_t>(start + poff * m + k) * S];
          for (int s = 0; s < S; ++s) belief[s] *= msg[s];
        }
        log_scale += normalize_in_place(belief);
      }
    }

    st_.root_posterior.assign(S, 0.0);
    for (int s = 0; s < S; ++s) st_.root_posterior[s] = p_.root_marginal[s] * st_.down[s];
    const double root_mass = normalize_in_place(st_.root_posterior.data());
    st_.log_evidence = log_scale + root_mass;

    if (with_up) run_up();
    return st_;
  }

  const BeliefState& state() const { return st_; }

 private:
  /// Divides by the sum and returns its log.
  double normalize_in_place(double* v) const {
    double total = 0.0;
    for (int s = 0; s < p_.S; ++s) total += v[s];
    require(total > 0.0 && std::isfinite(total), ErrorCode::numeric, "belief has zero or non-finite mass");
    for (int s = 0; s < p_.S; ++s) v[s] /= total;
    return std::log(total);
  }

  void run_up() {
    const auto& topo = p_.topology;
    const int S = p_.S;
    const int L = topo.depth();
    const int n = topo.node_count();
    const int d = topo.leaf_count();
    st_.up.assign(static_cast<std::size_t>(n) * S, 0.0);
    for (int s = 0; s < S; ++s) st_.up[s] = p_.root_marginal[s];

    for (int l = 1; l <= L; ++l) {
      const int m = topo.branching(l);
      const int start = topo.layer_start(l);
      const int pstart = topo.layer_start(l - 1);
      prefix_.assign(static_cast<std::size_t>(m + 1) * S, 1.0);
      suffix_.assign(static_cast<std::size_t>(m + 1) * S, 1.0);
      for (int poff = 0; poff < topo.layer_size(l - 1); ++poff) {
        const double* up_parent = &st_.up[static_cast<std::size_t>(pstart + poff) * S];
        auto msg = [&](int k) { return &st_.message[static_cast<std::size_t>(start + poff * m + k) * S]; };
        // prefix_[k] = prod_{j<k} msg_j, suffix_[k] = prod_{j>=k} msg_j
        for (int s = 0; s < S; ++s) {
          prefix_[s] = 1.0;
          suffix_[static_cast<std::size_t>(m) * S + s] = 1.0;
        }
        for (int k = 0; k < m; ++k)
          for (int s = 0; s < S; ++s)
            prefix_[static_cast<std::size_t>(k + 1) * S + s] = prefix_[static_cast<std::size_t>(k) * S + s] * msg(k)[s];
        for (int k = m - 1; k >= 0; --k)
          for (int s = 0; s < S; ++s)
            suffix_[static_cast<std::size_t>(k) * S + s] =
                suffix_[static_cast<std::size_t>(k + 1) * S + s] * msg(k)[s];
        for (int k = 0; k < m; ++k) {
          const Matrix& t = p_.table(l, k);
          for (int b = 0; b < S; ++b)
            scratch_[b] = up_parent[b] * prefix_[static_cast<std::size_t>(k) * S + b] *
                          suffix_[static_cast<std::size_t>(k + 1) * S + b];
          double* up_child = &st_.up[static_cast<std::size_t>(start + poff * m + k) * S];
          for (int x = 0; x < S; ++x) {
            double acc = 0.0;
            for (int b = 0; b < S; ++b) acc += t(b, x) * scratch_[b];
            up_child[x] = acc;
          }
          normalize_in_place(up_child);
        }
      }
    }

    const int leaf0 = topo.layer_start(L);
    st_.leaf_posterior.assign(static_cast<std::size_t>(d) * S, 0.0);
    for (int v = 0; v < d; ++v) {
      double* post = &st_.leaf_posterior[static_cast<std::size_t>(v) * S];
      for (int s = 0; s < S; ++s)
        post[s] = st_.up[static_cast<std::size_t>(leaf0 + v) * S + s] * st_.down[static_cast<std::size_t>(leaf0 + v) * S + s];
      normalize_in_place(post);
    }
  }

  const GhmParams& p_;
  BpOptions options_;
  BeliefState st_;
  std::vector<double> scratch_, prefix_, suffix_;
};

/// Indicator likelihoods 1{state = x_v}.
inline std::vector<double> indicator_likelihood(std::span<const int> leaves, int S) {
  std::vector<double> lik(leaves.size() * S, 0.0);
  for (std::size_t v = 0; v < leaves.size(); ++v) {
    require(leaves[v] >= 1 && leaves[v] <= S, ErrorCode::invalid_sample, "leaf state out of range");
    lik[v * S + leaves[v] - 1] = 1.0;
  }
  return lik;
}

/// exp(-(s - z_v)^2 / (2 sigma2)) per leaf and state; sigma2 = inf gives a flat likelihood.
inline void gaussian_likelihood(std::span<const double> z, double sigma2, int S, std::span<double> out) {
  require(sigma2 > 0.0, ErrorCode::invalid_noise, "noise variance must be positive");
  for (std::size_t v = 0; v < z.size(); ++v) {
    double best = -INFINITY;
    for (int s = 0; s < S; ++s) {
      const double r = state_value(s) - z[v];
      out[v * S + s] = -r * r / (2.0 * sigma2);
      best = std::max(best, out[v * S + s]);
    }
    // shift by the max so far-away observations do not underflow
    for (int s = 0; s < S; ++s) out[v * S + s] = std::exp(out[v * S + s] - best);
  }
}

/// Bayes classifier mu(y | x).
inline std::vector<double> bp_classify(const GhmParams& p, std::span<const int> leaves, BpOptions options = {}) {
  require(static_cast<int>(leaves.size()) == p.leaf_count(), ErrorCode::dimension_mismatch,
          "leaf vector has wrong length");
  BeliefPropagation bp(p, options);
  return bp.run(indicator_likelihood(leaves, p.S), false).root_posterior;
}

/// log mu(x) of a leaf configuration.
inline double leaf_log_evidence(const GhmParams& p, std::span<const int> leaves) {
  require(static_cast<int>(leaves.size()) == p.leaf_count(), ErrorCode::dimension_mismatch,
          "leaf vector has wrong length");
  BeliefPropagation bp(p);
  return bp.run(indicator_likelihood(leaves, p.S), false).log_evidence;
}

struct DenoiseResult {
  int S = 0;
  std::vector<double> leaf_posteriors;  // d x S
  std::vector<double> mean;

  std::span<const double> posterior(int leaf) const {
    return std::span<const double>(leaf_posteriors).subspan(static_cast<std::size_t>(leaf) * S, S);
  }
};

inline DenoiseResult denoise_from_state(const BeliefState& st, int d) {
  DenoiseResult out{st.S, st.leaf_posterior, std::vector<double>(d, 0.0)};
  for (int v = 0; v < d; ++v)
    for (int s = 0; s < st.S; ++s) out.mean[v] += state_value(s) * st.leaf_posterior[static_cast<std::size_t>(v) * st.S + s];
  return out;
}

/// Bayes denoiser E[x | z] for z = x + N(0, sigma2 I).
inline DenoiseResult bp_denoise(const GhmParams& p, std::span<const double> z, double sigma2, BpOptions options = {}) {
  require(static_cast<int>(z.size()) == p.leaf_count(), ErrorCode::dimension_mismatch, "observation has wrong length");
  require(sigma2 > 0.0, ErrorCode::invalid_noise, "noise variance must be positive");
  std::vector<double> lik(z.size() * p.S);
  gaussian_likelihood(z, sigma2, p.S, lik);
  BeliefPropagation bp(p, options);
  return denoise_from_state(bp.run(lik, true), p.leaf_count());
}

/// Prior mean E[x_v] of each leaf.
inline std::vector<double> prior_leaf_mean(const GhmParams& p) {
  std::vector<double> flat(static_cast<std::size_t>(p.leaf_count()) * p.S, 1.0);
  BeliefPropagation bp(p);
  return denoise_from_state(bp.run(flat, true), p.leaf_count()).mean;
}

}  // namespace ghmnet
