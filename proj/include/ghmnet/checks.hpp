#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ghmnet/bp.hpp"
#include "ghmnet/ghm.hpp"
#include "ghmnet/mp.hpp"
#include "ghmnet/nets.hpp"
#include "ghmnet/oracle.hpp"
#include "ghmnet/rng.hpp"

// Deviation measurements shared by the CLI tasks and the acceptance run.

namespace ghmnet {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::dimension_mismatch, "vectors differ in length");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline std::vector<int> uniform_leaves(const GhmParams& p, Rng& rng) {
  std::vector<int> x(p.leaf_count());
  for (int& v : x) v = 1 + static_cast<int>(rng.uniform() * p.S);
  return x;
}

/// z = x + N(0, sigma2) with x drawn from the model.
inline std::vector<double> model_observation(const GhmParams& p, double sigma2, Rng& rng) {
  return corrupt(sample(p, rng).leaves(), std::sqrt(sigma2), rng);
}

struct BpOracleDeviation {
  double classify = 0.0;
  double denoise = 0.0;  // max over leaf posteriors and posterior means
};

/// BP against brute-force enumeration: `trials` uniform leaf vectors and
/// `trials` model observations at noise sigma2.
inline BpOracleDeviation bp_vs_oracle(const GhmParams& p, int trials, double sigma2, std::uint64_t seed) {
  Rng rng(seed);
  BpOracleDeviation out;
  for (int t = 0; t < trials; ++t) {
    auto x = uniform_leaves(p, rng);
    out.classify = std::max(out.classify, max_abs_diff(bp_classify(p, x), oracle::posterior_label(p, x)));
    auto z = model_observation(p, sigma2, rng);
    auto a = bp_denoise(p, z, sigma2);
    auto b = oracle::posterior_denoise(p, z, sigma2);
    out.denoise = std::max({out.denoise, max_abs_diff(a.mean, b.mean),
                            max_abs_diff(a.leaf_posteriors, b.leaf_posteriors)});
  }
  return out;
}

struct MpBpDeviation {
  double classify_nodes = 0.0;  // softmax(h) against the downward belief, internal nodes
  double denoise_down = 0.0;    // softmax(h_down) against the downward belief
  double denoise_up = 0.0;      // softmax(b - h_down) against the upward belief
  double denoise_leaf = 0.0;    // softmax(b) at the leaves against the leaf posterior
  double classify_output = 0.0;
  double denoise_mean = 0.0;
  double unnormalized = 0.0;    // posteriors with normalization switched off

  double max() const {
    return std::max({classify_nodes, denoise_down, denoise_up, denoise_leaf, classify_output, denoise_mean,
                     unnormalized});
  }
};

inline MpBpDeviation mp_vs_bp(const GhmParams& p, int trials, double sigma2, std::uint64_t seed) {
  Rng rng(seed);
  MpBpDeviation out;
  const auto fns = exact_fns(p);
  const int S = p.S;
  BeliefPropagation bp(p);
  std::vector<double> lik(static_cast<std::size_t>(p.leaf_count()) * S);
  for (int t = 0; t < trials; ++t) {
    auto x = uniform_leaves(p, rng);
    auto st = amp_classify(p.topology, fns, x);
    const auto& cls = bp.run(indicator_likelihood(x, S), false);
    for (int g = 0; g < p.topology.layer_start(p.depth()); ++g)
      out.classify_nodes = std::max(out.classify_nodes, max_abs_diff(softmax(st.at(st.h, g)), cls.down_at(g)));
    out.classify_output = std::max(out.classify_output, max_abs_diff(st.output, cls.root_posterior));
    out.unnormalized = std::max(out.unnormalized,
                                max_abs_diff(amp_classify(p.topology, fns, x, {.normalize = false}).output,
                                             cls.root_posterior));

    auto z = model_observation(p, sigma2, rng);
    auto ds = amp_denoise(p.topology, fns, z, sigma2);
    gaussian_likelihood(z, sigma2, S, lik);
    const auto& den = bp.run(lik, true);
    std::vector<double> diff(S);
    for (int g = 0; g < p.topology.node_count(); ++g) {
      out.denoise_down = std::max(out.denoise_down, max_abs_diff(softmax(ds.at(ds.h, g)), den.down_at(g)));
      for (int s = 0; s < S; ++s) diff[s] = ds.at(ds.b, g)[s] - ds.at(ds.h, g)[s];
      out.denoise_up = std::max(out.denoise_up, max_abs_diff(softmax(diff), den.up_at(g)));
    }
    const int leaf0 = p.topology.layer_start(p.depth());
    for (int v = 0; v < p.leaf_count(); ++v)
      out.denoise_leaf = std::max(out.denoise_leaf, max_abs_diff(softmax(ds.at(ds.b, leaf0 + v)), den.leaf_posterior_at(v)));
    const auto mean = denoise_from_state(den, p.leaf_count()).mean;
    out.denoise_mean = std::max(out.denoise_mean, max_abs_diff(ds.mean, mean));
    out.unnormalized = std::max(out.unnormalized,
                                max_abs_diff(amp_denoise(p.topology, fns, z, sigma2, {.normalize = false}).mean, mean));
  }
  return out;
}

/// max over leaf configurations and labels of |log mu(y|x) - log net(y|x)|,
/// by enumeration of all S^d leaf vectors.
inline double classifier_log_error(const GhmParams& p, const NetWeights& w,
                                   std::uint64_t limit = oracle::kEnumerationLimit) {
  const int d = p.leaf_count();
  const std::uint64_t configs = oracle::detail::checked_power(p.S, d, limit);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < configs; ++i) {
    auto x = oracle::leaf_config(i, d, p.S);
    auto truth = bp_classify(p, x);
    auto net = convnet_forward(w, std::span<const int>(x));
    for (int s = 0; s < p.S; ++s) worst = std::max(worst, std::abs(std::log(truth[s]) - std::log(net[s])));
  }
  return worst;
}

/// max over `draws` model observations (sigma2 = 1) of ||m(z) - net(z)||_inf.
inline double denoiser_sup_error(const GhmParams& p, const NetWeights& w, int draws, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < draws; ++i) {
    auto z = model_observation(p, 1.0, rng);
    worst = std::max(worst, max_abs_diff(bp_denoise(p, z, 1.0).mean, unet_forward(w, z, 1.0)));
  }
  return worst;
}

struct PerturbationCheck {
  double classify_dev = 0.0, classify_bound = 0.0;
  double denoise_dev = 0.0, denoise_bound = 0.0;
};

/// Exact maps against maps shifted by delta: root message deviation for
/// classification, leaf message deviation for denoising, with their bounds.
inline PerturbationCheck perturbation_check(const GhmParams& p, double delta, int trials, std::uint64_t seed) {
  const auto exact = exact_fns(p);
  const auto noisy = perturbed_fns(exact, delta, derive_seed(seed, "perturb"));
  Rng rng(seed);
  PerturbationCheck out;
  out.classify_bound = delta;
  for (int m : p.topology.branching_factors()) out.classify_bound *= 2 * m + 1;
  out.denoise_bound = delta * std::pow(18.0, p.depth()) * p.leaf_count();
  const int leaf0 = p.topology.layer_start(p.depth());
  for (int t = 0; t < trials; ++t) {
    auto x = uniform_leaves(p, rng);
    auto a = amp_classify(p.topology, exact, x);
    auto b = amp_classify(p.topology, noisy, x);
    out.classify_dev = std::max(out.classify_dev, max_abs_diff(a.at(a.h, 0), b.at(b.h, 0)));
    auto z = model_observation(p, 1.0, rng);
    auto c = amp_denoise(p.topology, exact, z, 1.0);
    auto e = amp_denoise(p.topology, noisy, z, 1.0);
    for (int v = 0; v < p.leaf_count(); ++v)
      out.denoise_dev = std::max(out.denoise_dev, max_abs_diff(c.at(c.b, leaf0 + v), e.at(e.b, leaf0 + v)));
  }
  return out;
}

}  // namespace ghmnet
