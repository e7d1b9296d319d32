#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ghmnet/bp.hpp"
#include "ghmnet/error.hpp"
#include "ghmnet/ghm.hpp"
#include "ghmnet/nets.hpp"
#include "ghmnet/oracle.hpp"
#include "ghmnet/rng.hpp"

namespace ghmnet {

enum class Task { classify, denoise };

inline const char* to_string(Task t) { return t == Task::classify ? "classify" : "denoise"; }

// ---------------------------------------------------------------------------
// Losses

/// sum_s (1{y = s} - pred_s)^2, y in 1..S.
inline double loss_classify(std::span<const double> pred, int y) {
  require(y >= 1 && y <= static_cast<int>(pred.size()), ErrorCode::invalid_sample, "label out of range");
  double total = 0.0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    const double r = (static_cast<int>(s) == y - 1 ? 1.0 : 0.0) - pred[s];
    total += r * r;
  }
  return total;
}

/// d^-1 ||x - pred||^2.
inline double loss_denoise(std::span<const double> pred, std::span<const int> x) {
  require(pred.size() == x.size() && !x.empty(), ErrorCode::dimension_mismatch, "prediction and target lengths differ");
  double total = 0.0;
  for (std::size_t v = 0; v < x.size(); ++v) {
    const double r = x[v] - pred[v];
    total += r * r;
  }
  return total / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  Task task = Task::classify;
  std::vector<std::vector<int>> leaves;  // x_i
  std::vector<int> labels;               // classification
  std::vector<std::vector<double>> noisy;  // denoising: z_i = x_i + g_i
  std::size_t size() const { return leaves.size(); }
};

/// n iid pairs from the model: (x, y) for classification, (z, x) with unit
/// noise and fresh Gaussian draws per sample for denoising.
inline Dataset make_dataset(const GhmParams& p, Task task, int n, std::uint64_t seed) {
  require(n >= 1, ErrorCode::configuration, "sample count must be positive");
  Rng rng(seed);
  Dataset data;
  data.task = task;
  for (int i = 0; i < n; ++i) {
    auto s = sample(p, rng);
    data.leaves.push_back(s.leaves());
    if (task == Task::classify) {
      data.labels.push_back(s.label());
    } else {
      data.noisy.push_back(corrupt(s.leaves(), 1.0, rng));
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Gradients

struct BlockGrad {
  Matrix W1, W2, W3;
};

/// Same layout as NetWeights, with W2 always dense.
struct NetGrad {
  std::vector<std::vector<BlockGrad>> down, up;

  template <class Fn>
  void for_each(Fn&& fn) {
    for (auto& layer : down)
      for (auto& g : layer) fn(g);
    for (auto& layer : up)
      for (auto& g : layer) fn(g);
  }
};

inline NetGrad zero_grad(const NetWeights& w) {
  NetGrad g;
  auto make = [](const std::vector<std::vector<TwoLayerBlock>>& blocks) {
    std::vector<std::vector<BlockGrad>> out(blocks.size());
    for (std::size_t l = 0; l < blocks.size(); ++l)
      for (const auto& b : blocks[l])
        out[l].push_back({Matrix::Zero(b.W1.rows(), b.W1.cols()), Matrix::Zero(b.W2.rows(), b.W2.cols()),
                          Matrix::Zero(b.W3.rows(), b.W3.cols())});
    return out;
  };
  g.down = make(w.down);
  g.up = make(w.up);
  return g;
}

/// Replaces factored W2 maps by dense ones so the weights can be trained.
inline NetWeights densify(NetWeights w) {
  w.for_each_block([](TwoLayerBlock& b) {
    if (b.W2.factored()) b.W2 = LinearMap(b.W2.to_dense());
  });
  return w;
}

namespace detail {

using Vec = Eigen::VectorXd;
using ConstMap = Eigen::Map<const Vec>;

/// Accumulates parameter gradients of one block given d(loss)/d(out) and
/// returns d(loss)/d(h) for the first input_dim inputs.
inline Vec block_backward(const TwoLayerBlock& b, const BlockTrace& t, const Vec& g_out, BlockGrad& g) {
  const ConstMap a1(t.a1.data(), static_cast<Eigen::Index>(t.a1.size()));
  const ConstMap a2(t.a2.data(), static_cast<Eigen::Index>(t.a2.size()));
  const ConstMap in(t.in.data(), static_cast<Eigen::Index>(t.in.size()));
  const Vec r1 = a1.cwiseMax(0.0);
  const Vec r2 = a2.cwiseMax(0.0);
  g.W1.noalias() += g_out * r2.transpose();
  Vec g_a2 = b.W1.transpose() * g_out;
  for (Eigen::Index i = 0; i < g_a2.size(); ++i)
    if (a2[i] <= 0.0) g_a2[i] = 0.0;  // subgradient 0 at the kink
  g.W2.noalias() += g_a2 * r1.transpose();
  Vec g_r1(b.W2.cols());
  b.W2.apply_transpose(std::span<const double>(g_a2.data(), g_a2.size()), std::span<double>(g_r1.data(), g_r1.size()));
  for (Eigen::Index i = 0; i < g_r1.size(); ++i)
    if (a1[i] <= 0.0) g_r1[i] = 0.0;
  g.W3.noalias() += g_r1 * in.transpose();
  const Vec g_in = b.W3.transpose() * g_r1;
  return g_in.head(b.input_dim());
}

/// Backward of y = h - h[k*], k* the first maximizer of h.
inline Vec normalize_backward(std::span<const double> h, const Vec& g_y) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i] > h[best]) best = i;
  Vec g = g_y;
  g[static_cast<Eigen::Index>(best)] -= g_y.sum();
  return g;
}

/// Backward of p = softmax(h).
inline Vec softmax_backward(std::span<const double> p, const Vec& g_p) {
  const ConstMap pv(p.data(), static_cast<Eigen::Index>(p.size()));
  const double dot = pv.dot(g_p);
  return pv.cwiseProduct(g_p.array().matrix() - Vec::Constant(g_p.size(), dot));
}

inline std::span<const double> node(const std::vector<double>& a, std::size_t g, int S) {
  return std::span<const double>(a).subspan(g * S, S);
}

}  // namespace detail

/// Loss of one classification pair; accumulates d(loss)/dW into `grad` when given.
inline double classify_loss_grad(const NetWeights& w, std::span<const int> x, int y, NetGrad* grad) {
  using detail::Vec;
  std::vector<double> xr(x.begin(), x.end());
  ConvNetTrace t;
  convnet_forward(w, std::span<const double>(xr), &t);
  const double loss = loss_classify(t.output, y);
  if (!grad) return loss;

  const auto& topo = w.topology;
  const int S = w.S;
  const int L = topo.depth();
  const std::size_t n = static_cast<std::size_t>(topo.node_count());
  std::vector<Vec> g_pooled(n, Vec::Zero(S));
  Vec g_p(S);
  for (int s = 0; s < S; ++s) g_p[s] = 2.0 * (t.output[s] - (s == y - 1 ? 1.0 : 0.0));
  g_pooled[0] = detail::normalize_backward(detail::node(t.pooled, 0, S), detail::softmax_backward(t.output, g_p));

  for (int l = 1; l <= L; ++l) {
    const int m = topo.branching(l);
    const int start = topo.layer_start(l);
    for (int off = 0; off < topo.layer_size(l); ++off) {
      const std::size_t g = static_cast<std::size_t>(start + off);
      const std::size_t parent = static_cast<std::size_t>(topo.layer_start(l - 1) + off / m);
      const Vec g_in = detail::block_backward(w.block_down(l, off % m), t.blocks[g], g_pooled[parent],
                                              grad->down[l - 1][off % m]);
      if (l < L) g_pooled[g] = detail::normalize_backward(detail::node(t.pooled, g, S), g_in);
    }
  }
  return loss;
}

/// Loss of one denoising pair (z, x) at unit noise; accumulates gradients.
inline double denoise_loss_grad(const NetWeights& w, std::span<const double> z, std::span<const int> x, NetGrad* grad,
                                double sigma2 = 1.0) {
  using detail::Vec;
  UNetTrace t;
  unet_forward(w, z, sigma2, &t);
  const double loss = loss_denoise(t.mean, x);
  if (!grad) return loss;

  const auto& topo = w.topology;
  const int S = w.S;
  const int L = topo.depth();
  const int d = topo.leaf_count();
  const std::size_t n = static_cast<std::size_t>(topo.node_count());
  std::vector<Vec> g_b(n, Vec::Zero(S)), g_h(n, Vec::Zero(S)), g_q(n, Vec::Zero(S));

  const int leaf0 = topo.layer_start(L);
  for (int v = 0; v < d; ++v) {
    const double g_mean = -2.0 * (x[v] - t.mean[v]) / d;
    Vec g_p(S);
    for (int s = 0; s < S; ++s) g_p[s] = g_mean * state_value(s);
    g_b[leaf0 + v] = detail::softmax_backward(detail::node(t.posterior, v, S), g_p);
  }

  // decoder, leaves to root
  std::vector<double> diff(S);
  for (int l = L; l >= 1; --l) {
    const int m = topo.branching(l);
    const int start = topo.layer_start(l);
    for (int off = 0; off < topo.layer_size(l); ++off) {
      const std::size_t g = static_cast<std::size_t>(start + off);
      const std::size_t parent = static_cast<std::size_t>(topo.layer_start(l - 1) + off / m);
      g_h[g] += g_b[g];
      const Vec g_in = detail::block_backward(w.block_up(l, off % m), t.dec[g], g_b[g], grad->up[l - 1][off % m]);
      for (int s = 0; s < S; ++s) diff[s] = t.u[g * S + s] - t.q_down[g * S + s];
      const Vec g_diff = detail::normalize_backward(diff, g_in);
      g_b[parent] += g_diff;  // u_v = b_parent
      g_q[g] -= g_diff;
    }
  }
  g_h[0] += g_b[0];

  // encoder, root to leaves
  for (int l = 1; l <= L; ++l) {
    const int m = topo.branching(l);
    const int start = topo.layer_start(l);
    for (int off = 0; off < topo.layer_size(l); ++off) {
      const std::size_t g = static_cast<std::size_t>(start + off);
      const std::size_t parent = static_cast<std::size_t>(topo.layer_start(l - 1) + off / m);
      g_q[g] += g_h[parent];
      const Vec g_in = detail::block_backward(w.block_down(l, off % m), t.enc[g], g_q[g], grad->down[l - 1][off % m]);
      if (l < L) g_h[g] += detail::normalize_backward(detail::node(t.h_down, g, S), g_in);
    }
  }
  return loss;
}

/// Empirical risk over a dataset and, when `grad` is given, its gradient.
inline double empirical_risk(const NetWeights& w, const Dataset& data, NetGrad* grad) {
  require(data.size() > 0, ErrorCode::configuration, "empty dataset");
  if (grad) *grad = zero_grad(w);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total += data.task == Task::classify ? classify_loss_grad(w, data.leaves[i], data.labels[i], grad)
                                         : denoise_loss_grad(w, data.noisy[i], data.leaves[i], grad);
  const double scale = 1.0 / static_cast<double>(data.size());
  if (grad)
    grad->for_each([&](BlockGrad& g) {
      g.W1 *= scale;
      g.W2 *= scale;
      g.W3 *= scale;
    });
  return total * scale;
}

inline NetGrad gradient(const NetWeights& w, const Dataset& data) {
  require(w.kind == (data.task == Task::classify ? NetKind::convnet : NetKind::unet), ErrorCode::configuration,
          "network kind does not match the task");
  NetGrad g;
  empirical_risk(w, data, &g);
  return g;
}

// ---------------------------------------------------------------------------
// Distance to the Bayes predictor

struct D2Estimate {
  double value = 0.0;
  double se = 0.0;     // standard error; 0 when exact
  bool exact = false;
  int samples = 0;
};

using ClassifierFn = std::function<std::vector<double>(std::span<const int>)>;
using DenoiserFn = std::function<std::vector<double>(std::span<const double>)>;

/// E_x sum_s (mu(s|x) - mu*(s|x))^2. Exact over all leaf configurations when
/// S^d <= 1e5, weighting by the leaf marginal; otherwise Monte Carlo.
inline D2Estimate d2_classify(const ClassifierFn& fn, const GhmParams& p, int eval_n, std::uint64_t seed) {
  const int d = p.leaf_count();
  auto dist = [&](std::span<const int> x) {
    auto a = fn(x);
    auto b = bp_classify(p, x);
    double total = 0.0;
    for (int s = 0; s < p.S; ++s) total += (a[s] - b[s]) * (a[s] - b[s]);
    return total;
  };
  D2Estimate out;
  if (std::pow(static_cast<double>(p.S), d) <= 1e5) {
    const auto count = static_cast<std::uint64_t>(std::llround(std::pow(p.S, d)));
    double total = 0.0;
    for (std::uint64_t i = 0; i < count; ++i) {
      auto x = oracle::leaf_config(i, d, p.S);
      total += std::exp(leaf_log_evidence(p, x)) * dist(x);
    }
    out.value = total;
    out.exact = true;
    out.samples = static_cast<int>(count);
    return out;
  }
  require(eval_n >= 2, ErrorCode::configuration, "Monte Carlo estimate needs at least 2 samples");
  Rng rng(seed);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < eval_n; ++i) {
    const double v = dist(sample(p, rng).leaves());
    sum += v;
    sq += v * v;
  }
  out.value = sum / eval_n;
  out.se = std::sqrt(std::max(0.0, sq / eval_n - out.value * out.value) / (eval_n - 1));
  out.samples = eval_n;
  return out;
}

/// E_z d^-1 ||m(z) - m*(z)||^2 by Monte Carlo over z = x + g, x ~ model.
inline D2Estimate d2_denoise(const DenoiserFn& fn, const GhmParams& p, int eval_n, std::uint64_t seed) {
  require(eval_n >= 2, ErrorCode::configuration, "Monte Carlo estimate needs at least 2 samples");
  const int d = p.leaf_count();
  Rng rng(seed);
  BeliefPropagation bp(p);
  std::vector<double> lik(static_cast<std::size_t>(d) * p.S);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < eval_n; ++i) {
    auto z = corrupt(sample(p, rng).leaves(), 1.0, rng);
    auto a = fn(z);
    gaussian_likelihood(z, 1.0, p.S, lik);
    auto b = denoise_from_state(bp.run(lik, true), d).mean;
    double v = 0.0;
    for (int k = 0; k < d; ++k) v += (a[k] - b[k]) * (a[k] - b[k]);
    v /= d;
    sum += v;
    sq += v * v;
  }
  D2Estimate out;
  out.value = sum / eval_n;
  out.se = std::sqrt(std::max(0.0, sq / eval_n - out.value * out.value) / (eval_n - 1));
  out.samples = eval_n;
  return out;
}

inline ClassifierFn as_classifier(const NetWeights& w) {
  return [&w](std::span<const int> x) { return convnet_forward(w, x); };
}

inline DenoiserFn as_denoiser(const NetWeights& w) {
  return [&w](std::span<const double> z) { return unet_forward(w, z, 1.0); };
}

inline D2Estimate d2_net(const NetWeights& w, const GhmParams& p, int eval_n, std::uint64_t seed) {
  return w.kind == NetKind::convnet ? d2_classify(as_classifier(w), p, eval_n, seed)
                                    : d2_denoise(as_denoiser(w), p, eval_n, seed);
}

// ---------------------------------------------------------------------------
// Projected gradient descent

struct TrainConfig {
  Task task = Task::denoise;
  int n = 1000;
  double step = 0.1;
  int iterations = 100;
  double B = 0.0;        // norm budget; <= 0 means unconstrained
  int eval_n = 0;        // samples for the D2 column; 0 disables it
  int eval_every = 10;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  require(c.n >= 1, ErrorCode::configuration, "n must be positive");
  require(c.step > 0.0 && std::isfinite(c.step), ErrorCode::configuration, "step size must be positive");
  require(c.iterations >= 0, ErrorCode::configuration, "iteration count must be nonnegative");
  require(c.eval_n >= 0 && c.eval_every >= 1, ErrorCode::configuration, "bad evaluation settings");
}

struct TrainLogRow {
  int iteration = 0;
  double risk = 0.0;
  double d2 = std::numeric_limits<double>::quiet_NaN();
  double d2_se = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainResult {
  NetWeights weights;        // iterate with the lowest empirical risk
  std::vector<TrainLogRow> log;
  int best_iteration = 0;
  double initial_risk = 0.0;
  double final_risk = 0.0;
  bool early_stop = false;   // last iterate worse than the returned one
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<TrainLogRow> log)
      : Error(ErrorCode::divergence, what), log_(std::move(log)) {}
  const std::vector<TrainLogRow>& log() const { return log_; }

 private:
  std::vector<TrainLogRow> log_;
};

/// Full-batch gradient descent with a constant step, followed by projection
/// onto the operator-norm ball when a budget is set. Returns the best iterate.
inline TrainResult fit(const GhmParams& p, const TrainConfig& config, const NetWeights& init) {
  validate(config);
  require(init.kind == (config.task == Task::classify ? NetKind::convnet : NetKind::unet), ErrorCode::configuration,
          "initial network does not match the task");
  const auto data = make_dataset(p, config.task, config.n, derive_seed(config.seed, "train-data"));
  const auto eval_seed = derive_seed(config.seed, "train-eval");
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult result;
  NetWeights w = densify(init);
  if (config.B > 0.0) w = project_norms(std::move(w), config.B);
  NetGrad grad;
  double risk = empirical_risk(w, data, &grad);
  result.initial_risk = risk;
  // the input itself unless the budget forced a projection
  result.weights = config.B > 0.0 ? w : init;
  result.final_risk = risk;

  auto record = [&](int it, double r) {
    TrainLogRow row;
    row.iteration = it;
    row.risk = r;
    if (config.eval_n > 0 && (it % config.eval_every == 0 || it == config.iterations)) {
      auto est = d2_net(w, p, config.eval_n, eval_seed);
      row.d2 = est.value;
      row.d2_se = est.se;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);
  };
  record(0, risk);

  for (int it = 1; it <= config.iterations; ++it) {
    auto g = grad.down.begin();
    for (auto& layer : w.down) {
      for (std::size_t r = 0; r < layer.size(); ++r) {
        layer[r].W1 -= config.step * (*g)[r].W1;
        layer[r].W2.dense() -= config.step * (*g)[r].W2;
        layer[r].W3 -= config.step * (*g)[r].W3;
      }
      ++g;
    }
    g = grad.up.begin();
    for (auto& layer : w.up) {
      for (std::size_t r = 0; r < layer.size(); ++r) {
        layer[r].W1 -= config.step * (*g)[r].W1;
        layer[r].W2.dense() -= config.step * (*g)[r].W2;
        layer[r].W3 -= config.step * (*g)[r].W3;
      }
      ++g;
    }
    if (config.B > 0.0) w = project_norms(std::move(w), config.B);
    try {
      risk = empirical_risk(w, data, &grad);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numeric) throw;
      risk = std::numeric_limits<double>::quiet_NaN();  // overflowed activations
    }
    record(it, risk);
    if (!std::isfinite(risk) || risk > 10.0 * result.initial_risk)
      throw DivergenceError("empirical risk rose from " + format_double(result.initial_risk) + " to " +
                                format_double(risk) + " at iteration " + std::to_string(it),
                            result.log);
    if (risk < result.final_risk) {
      result.final_risk = risk;
      result.weights = w;
      result.best_iteration = it;
    }
  }
  result.early_stop = result.best_iteration != config.iterations;
  return result;
}

inline void write_train_log(std::ostream& out, const std::vector<TrainLogRow>& log) {
  out << "iteration,risk,d2,d2_se,seconds\n";
  for (const auto& r : log)
    out << r.iteration << ',' << format_double(r.risk) << ',' << format_double(r.d2) << ',' << format_double(r.d2_se)
        << ',' << format_double(r.seconds) << '\n';
}

}  // namespace ghmnet
