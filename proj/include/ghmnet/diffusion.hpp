#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ghmnet/bp.hpp"
#include "ghmnet/error.hpp"
#include "ghmnet/ghm.hpp"
#include "ghmnet/nets.hpp"
#include "ghmnet/oracle.hpp"
#include "ghmnet/rng.hpp"

// Stochastic-localization sampling: dz = m_t(z) dt + dB, z_0 = 0, x_hat = z_T / T.

namespace ghmnet {

/// m_t(z) = E[x | t x + sqrt(t) g = z]. Called with t = 0 for the first step.
using TimeDenoiser = std::function<std::vector<double>(std::span<const double> z, double t)>;

/// Exact denoiser at every time. z_t = t x + sqrt(t) g is the same observation as
/// z_t / t = x + N(0, 1/t), so this is the Bayes denoiser at noise variance 1/t.
class BpTimeDenoiser {
 public:
  explicit BpTimeDenoiser(const GhmParams& p)
      : p_(p), bp_(p), prior_mean_(prior_leaf_mean(p)), y_(p.leaf_count()),
        lik_(static_cast<std::size_t>(p.leaf_count()) * p.S) {}

  std::vector<double> operator()(std::span<const double> z, double t) {
    require(t >= 0.0 && std::isfinite(t), ErrorCode::configuration, "time must be finite and nonnegative");
    if (t == 0.0) return prior_mean_;  // limit of the posterior mean as t -> 0
    require(static_cast<int>(z.size()) == p_.leaf_count(), ErrorCode::dimension_mismatch,
            "observation has wrong length");
    for (std::size_t v = 0; v < z.size(); ++v) y_[v] = z[v] / t;
    gaussian_likelihood(y_, 1.0 / t, p_.S, lik_);
    return denoise_from_state(bp_.run(lik_, true), p_.leaf_count()).mean;
  }

 private:
  const GhmParams& p_;
  BeliefPropagation bp_;
  std::vector<double> prior_mean_;
  std::vector<double> y_, lik_;
};

/// The exact denoiser at a fixed positive time.
inline std::function<std::vector<double>(std::span<const double>)> denoiser_at(const GhmParams& p, double t) {
  require(t > 0.0 && std::isfinite(t), ErrorCode::configuration, "denoiser time must be positive");
  auto inner = std::make_shared<BpTimeDenoiser>(p);
  return [inner, t](std::span<const double> z) { return (*inner)(z, t); };
}

/// A trained U-Net used at every time through the same rescaling. The t = 0
/// drift is the net's output with no information, i.e. at a huge noise level.
inline TimeDenoiser net_time_denoiser(const NetWeights& w) {
  require(w.kind == NetKind::unet, ErrorCode::configuration, "diffusion needs a U-Net");
  return [&w](std::span<const double> z, double t) {
    std::vector<double> y(z.size(), 0.0);
    if (t == 0.0) return unet_forward(w, y, 1e12);
    for (std::size_t v = 0; v < z.size(); ++v) y[v] = z[v] / t;
    return unet_forward(w, y, 1.0 / t);
  };
}

struct DiffusionConfig {
  double T = 20.0;
  int N = 800;
  int samples = 10000;
  std::uint64_t seed = 0;
  bool round = true;
};

inline void validate(const DiffusionConfig& c) {
  require(c.T > 0.0 && std::isfinite(c.T), ErrorCode::configuration, "horizon T must be positive");
  require(c.N >= 1, ErrorCode::configuration, "step count N must be at least 1");
  require(c.samples >= 1, ErrorCode::configuration, "sample count must be positive");
}

/// Nearest state in 1..S, ties rounded up.
inline int round_state(double x, int S) {
  const double r = std::floor(x + 0.5);
  if (!(r >= 1.0)) return 1;  // also catches NaN
  if (r >= S) return S;
  return static_cast<int>(r);
}

/// One Euler-Maruyama trajectory on the grid t_k = k T / N. Returns z_T / T and,
/// if requested, every z_k (N + 1 rows of length d).
inline std::vector<double> simulate_sde(const TimeDenoiser& drift, int d, double T, int N, Rng& rng,
                                        std::vector<std::vector<double>>* path = nullptr) {
  const double dt = T / N;
  const double sdt = std::sqrt(dt);
  std::vector<double> z(d, 0.0);
  if (path) path->assign(1, z);
  for (int k = 0; k < N; ++k) {
    const auto m = drift(z, k * dt);
    require(static_cast<int>(m.size()) == d, ErrorCode::dimension_mismatch, "denoiser output has wrong length");
    for (int v = 0; v < d; ++v) {
      z[v] += m[v] * dt + sdt * rng.normal();
      if (!std::isfinite(z[v])) throw Error(ErrorCode::numeric, "SDE state blew up at step " + std::to_string(k));
    }
    if (path) path->push_back(z);
  }
  for (double& v : z) v /= T;
  return z;
}

/// Many independent trajectories, trajectory i seeded by derive_seed(seed, "sde", i).
inline std::vector<std::vector<double>> sample_sde(const TimeDenoiser& drift, int d, const DiffusionConfig& c) {
  validate(c);
  std::vector<std::vector<double>> out;
  out.reserve(c.samples);
  for (int i = 0; i < c.samples; ++i) {
    Rng rng(derive_seed(c.seed, "sde", static_cast<std::uint64_t>(i)));
    out.push_back(simulate_sde(drift, d, c.T, c.N, rng));
  }
  return out;
}

inline std::vector<std::vector<int>> round_samples(const std::vector<std::vector<double>>& xs, int S) {
  std::vector<std::vector<int>> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (double v : xs[i]) out[i].push_back(round_state(v, S));
  return out;
}

/// Exact-BP sampler from the model itself, rounded.
inline std::vector<std::vector<int>> sample_exact_sde(const GhmParams& p, const DiffusionConfig& c) {
  BpTimeDenoiser den(p);
  TimeDenoiser drift = [&den](std::span<const double> z, double t) { return den(z, t); };
  return round_samples(sample_sde(drift, p.leaf_count(), c), p.S);
}

struct Recovery {
  double tv = 0.0;
  double se_scale = 0.0;  // sqrt(S^d / n), the multinomial noise scale of the TV estimate
  double tv_se = 0.0;     // delta-method standard error of tv
  std::int64_t n = 0;
};

inline constexpr std::uint64_t kRecoveryLimit = 100'000;

/// Exact leaf law by one leaf-only BP pass per configuration.
inline std::vector<double> exact_leaf_law(const GhmParams& p, std::uint64_t limit = kRecoveryLimit) {
  const int d = p.leaf_count();
  const std::uint64_t configs = oracle::detail::checked_power(p.S, d, limit);
  BeliefPropagation bp(p);
  std::vector<double> law(configs);
  for (std::uint64_t i = 0; i < configs; ++i)
    law[i] = std::exp(bp.run(indicator_likelihood(oracle::leaf_config(i, d, p.S), p.S), false).log_evidence);
  return law;
}

inline Recovery eval_recovery(const GhmParams& p, const std::vector<std::vector<int>>& samples,
                              std::uint64_t limit = kRecoveryLimit) {
  require(!samples.empty(), ErrorCode::configuration, "no samples to evaluate");
  const auto law = exact_leaf_law(p, limit);
  std::vector<double> freq(law.size(), 0.0);
  for (const auto& x : samples) {
    require(static_cast<int>(x.size()) == p.leaf_count(), ErrorCode::dimension_mismatch, "sample has wrong length");
    for (int v : x) require(v >= 1 && v <= p.S, ErrorCode::invalid_sample, "sample state out of range");
    freq[oracle::leaf_config_index(x, p.S)] += 1.0;
  }
  Recovery r;
  r.n = static_cast<std::int64_t>(samples.size());
  // tv = 1/2 sum_i s_i (f_i - p_i) with s_i = sign(f_i - p_i); the s-weighted
  // frequency sum is a mean of n iid draws, which gives its variance directly.
  double mean_s = 0.0, mean_s2 = 0.0;
  for (std::size_t i = 0; i < law.size(); ++i) {
    const double diff = freq[i] / r.n - law[i];
    const double s = diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0;
    r.tv += std::abs(diff);
    mean_s += s * law[i];
    mean_s2 += s * s * law[i];
  }
  r.tv *= 0.5;
  r.tv_se = 0.5 * std::sqrt(std::max(0.0, mean_s2 - mean_s * mean_s) / r.n);
  r.se_scale = std::sqrt(static_cast<double>(law.size()) / r.n);
  return r;
}

}  // namespace ghmnet
