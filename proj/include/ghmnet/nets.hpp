#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ghmnet/error.hpp"
#include "ghmnet/ghm.hpp"
#include "ghmnet/mp.hpp"
#include "ghmnet/relu_approx.hpp"
#include "ghmnet/rng.hpp"
#include "ghmnet/text_io.hpp"

namespace ghmnet {

enum class NetKind { convnet, unet };

inline const char* to_string(NetKind k) { return k == NetKind::convnet ? "convnet" : "unet"; }

/// Weights of a ConvNet classifier or a U-Net denoiser over a fixed tree.
/// Blocks are indexed [layer - 1][rank]; a ConvNet uses `down` only and its
/// leaf-layer blocks take [x; 1]. `D` is the nominal hidden width. Trained
/// networks have every block exactly D wide; constructed networks keep each
/// block at its native width, which is never more than D (padding with zero
/// units would not change any output).
struct NetWeights {
  NetKind kind = NetKind::convnet;
  TreeTopology topology;
  int S = 2;
  long long D = 0;
  double B = std::numeric_limits<double>::infinity();
  std::vector<std::vector<TwoLayerBlock>> down;
  std::vector<std::vector<TwoLayerBlock>> up;

  int depth() const { return topology.depth(); }
  const TwoLayerBlock& block_down(int layer, int rank) const { return down.at(layer - 1).at(rank); }
  const TwoLayerBlock& block_up(int layer, int rank) const { return up.at(layer - 1).at(rank); }

  template <class Fn>
  void for_each_block(Fn&& fn) {
    for (auto& layer : down)
      for (auto& b : layer) fn(b);
    for (auto& layer : up)
      for (auto& b : layer) fn(b);
  }
  template <class Fn>
  void for_each_block(Fn&& fn) const {
    for (const auto& layer : down)
      for (const auto& b : layer) fn(b);
    for (const auto& layer : up)
      for (const auto& b : layer) fn(b);
  }

  /// Largest hidden width over all blocks.
  int native_width() const {
    int w = 0;
    for_each_block([&](const TwoLayerBlock& b) { w = std::max(w, b.width()); });
    return w;
  }
};

inline int input_dim(NetKind kind, int S, int layer, int depth) {
  return (kind == NetKind::convnet && layer == depth) ? 1 : S;
}

inline void check_weights(const NetWeights& w) {
  const auto& topo = w.topology;
  require(static_cast<int>(w.down.size()) == topo.depth(), ErrorCode::dimension_mismatch, "wrong number of layers");
  require(w.kind == NetKind::convnet ? w.up.empty() : static_cast<int>(w.up.size()) == topo.depth(),
          ErrorCode::dimension_mismatch, "wrong number of decoder layers");
  for (int l = 1; l <= topo.depth(); ++l) {
    const int in = input_dim(w.kind, w.S, l, topo.depth());
    auto check_layer = [&](const std::vector<TwoLayerBlock>& blocks) {
      require(static_cast<int>(blocks.size()) == topo.branching(l), ErrorCode::dimension_mismatch,
              "layer " + std::to_string(l) + " needs one block per rank");
      for (const auto& b : blocks) {
        b.check_shapes();
        require(b.input_dim() == in && b.output_dim() == w.S, ErrorCode::dimension_mismatch,
                "block at layer " + std::to_string(l) + " has wrong input or output size");
      }
    };
    check_layer(w.down[l - 1]);
    if (w.kind == NetKind::unet) check_layer(w.up[l - 1]);
  }
}

// ---------------------------------------------------------------------------
// Forward passes

/// Activations of one block evaluation, kept for reverse mode.
struct BlockTrace {
  std::vector<double> in;  // [h; 1]
  std::vector<double> a1;  // W3 [h; 1]
  std::vector<double> a2;  // W2 ReLU(a1)
  std::vector<double> out;
};

// The log-sum-exp blocks are only accurate on inputs whose max is exactly 0.
// The wiring below guarantees it; debug builds check.
inline void assert_normalized([[maybe_unused]] std::span<const double> h) {
  assert(*std::max_element(h.begin(), h.end()) == 0.0);
}

inline void apply_traced(const TwoLayerBlock& b, std::span<const double> h, BlockTrace& t) {
  const int n = b.input_dim();
  t.in.assign(h.begin(), h.begin() + n);
  t.in.push_back(1.0);
  t.a1.resize(b.hidden_inner());
  LinearMap::multiply(b.W3, t.in, t.a1);
  std::vector<double> r1(t.a1.size());
  for (std::size_t i = 0; i < r1.size(); ++i) r1[i] = std::max(0.0, t.a1[i]);
  t.a2.resize(b.hidden_outer());
  b.W2.apply(r1, t.a2);
  std::vector<double> r2(t.a2.size());
  for (std::size_t i = 0; i < r2.size(); ++i) r2[i] = std::max(0.0, t.a2[i]);
  t.out.resize(b.output_dim());
  LinearMap::multiply(b.W1, r2, t.out);
}

/// Per-node activations of a ConvNet pass (flat node x S arrays).
struct ConvNetTrace {
  std::vector<double> pooled;  // sum of child outputs, before normalize
  std::vector<double> h;       // normalized
  std::vector<BlockTrace> blocks;  // per non-root node, by global id
  std::vector<double> output;
};

inline std::vector<double> convnet_forward(const NetWeights& w, std::span<const double> x, ConvNetTrace* trace = nullptr) {
  require(w.kind == NetKind::convnet, ErrorCode::configuration, "weights are not a ConvNet");
  const auto& topo = w.topology;
  const int S = w.S;
  const int L = topo.depth();
  require(static_cast<int>(x.size()) == topo.leaf_count(), ErrorCode::dimension_mismatch, "leaf vector has wrong length");
  const std::size_t n = static_cast<std::size_t>(topo.node_count());
  ConvNetTrace local;
  ConvNetTrace& t = trace ? *trace : local;
  t.pooled.assign(n * S, 0.0);
  t.h.assign(n * S, 0.0);
  t.blocks.assign(n, {});
  std::vector<double> q(n * S, 0.0);

  for (int l = L; l >= 1; --l) {
    const int m = topo.branching(l);
    const int start = topo.layer_start(l);
    for (int off = 0; off < topo.layer_size(l); ++off) {
      const int g = start + off;
      const auto& blk = w.block_down(l, off % m);
      std::span<const double> in = l == L ? x.subspan(off, 1) : std::span<const double>(t.h).subspan(static_cast<std::size_t>(g) * S, S);
      if (l < L) assert_normalized(in);
      apply_traced(blk, in, t.blocks[g]);
      std::copy(t.blocks[g].out.begin(), t.blocks[g].out.end(), q.begin() + static_cast<std::ptrdiff_t>(g) * S);
    }
    const int pstart = topo.layer_start(l - 1);
    for (int poff = 0; poff < topo.layer_size(l - 1); ++poff) {
      const std::size_t gp = static_cast<std::size_t>(pstart + poff);
      for (int k = 0; k < m; ++k)
        for (int s = 0; s < S; ++s) t.pooled[gp * S + s] += q[static_cast<std::size_t>(start + poff * m + k) * S + s];
      for (int s = 0; s < S; ++s) t.h[gp * S + s] = t.pooled[gp * S + s];
      normalize_in_place(std::span<double>(t.h).subspan(gp * S, S));
    }
  }
  t.output = softmax(std::span<const double>(t.h).subspan(0, S));
  return t.output;
}

inline std::vector<double> convnet_forward(const NetWeights& w, std::span<const int> x) {
  std::vector<double> xr(x.begin(), x.end());
  return convnet_forward(w, std::span<const double>(xr));
}

struct UNetTrace {
  std::vector<double> h_down;      // h_down per node (leaf init at layer L)
  std::vector<double> q_down;      // encoder outputs
  std::vector<double> u;           // decoder inputs
  std::vector<double> b;           // decoder outputs
  std::vector<BlockTrace> enc, dec;  // per non-root node
  std::vector<double> posterior;   // d x S
  std::vector<double> mean;
};

inline std::vector<double> unet_forward(const NetWeights& w, std::span<const double> z, double sigma2,
                                        UNetTrace* trace = nullptr) {
  require(w.kind == NetKind::unet, ErrorCode::configuration, "weights are not a U-Net");
  require(sigma2 > 0.0, ErrorCode::invalid_noise, "noise variance must be positive");
  const auto& topo = w.topology;
  const int S = w.S;
  const int L = topo.depth();
  const int d = topo.leaf_count();
  require(static_cast<int>(z.size()) == d, ErrorCode::dimension_mismatch, "observation has wrong length");
  const std::size_t n = static_cast<std::size_t>(topo.node_count());
  UNetTrace local;
  UNetTrace& t = trace ? *trace : local;
  t.h_down.assign(n * S, 0.0);
  t.q_down.assign(n * S, 0.0);
  t.u.assign(n * S, 0.0);
  t.b.assign(n * S, 0.0);
  t.enc.assign(n, {});
  t.dec.assign(n, {});
  auto at = [S](std::vector<double>& a, std::size_t g) { return std::span<double>(a).subspan(g * S, S); };
  std::vector<double> scratch(S);

  const int leaf0 = topo.layer_start(L);
  for (int v = 0; v < d; ++v)
    for (int s = 0; s < S; ++s) {
      const double r = state_value(s) - z[v];
      t.h_down[static_cast<std::size_t>(leaf0 + v) * S + s] = -r * r / (2.0 * sigma2);
    }

  for (int l = L; l >= 1; --l) {
    const int m = topo.branching(l);
    const int start = topo.layer_start(l);
    for (int off = 0; off < topo.layer_size(l); ++off) {
      const std::size_t g = static_cast<std::size_t>(start + off);
      auto hv = at(t.h_down, g);
      std::copy(hv.begin(), hv.end(), scratch.begin());
      normalize_in_place(scratch);
      assert_normalized(scratch);
      apply_traced(w.block_down(l, off % m), scratch, t.enc[g]);
      std::copy(t.enc[g].out.begin(), t.enc[g].out.end(), at(t.q_down, g).begin());
    }
    const int pstart = topo.layer_start(l - 1);
    for (int poff = 0; poff < topo.layer_size(l - 1); ++poff) {
      auto hp = at(t.h_down, static_cast<std::size_t>(pstart + poff));
      for (int k = 0; k < m; ++k) {
        auto qc = at(t.q_down, static_cast<std::size_t>(start + poff * m + k));
        for (int s = 0; s < S; ++s) hp[s] += qc[s];
      }
    }
  }

  for (int s = 0; s < S; ++s) t.b[s] = t.h_down[s];

  for (int l = 1; l <= L; ++l) {
    const int m = topo.branching(l);
    const int start = topo.layer_start(l);
    for (int off = 0; off < topo.layer_size(l); ++off) {
      const std::size_t g = static_cast<std::size_t>(start + off);
      const std::size_t parent = static_cast<std::size_t>(topo.layer_start(l - 1) + off / m);
      auto uv = at(t.u, g);
      auto bp = at(t.b, parent);
      std::copy(bp.begin(), bp.end(), uv.begin());
      auto qv = at(t.q_down, g);
      for (int s = 0; s < S; ++s) scratch[s] = uv[s] - qv[s];
      normalize_in_place(scratch);
      assert_normalized(scratch);
      apply_traced(w.block_up(l, off % m), scratch, t.dec[g]);
      auto bv = at(t.b, g);
      auto hv = at(t.h_down, g);
      for (int s = 0; s < S; ++s) bv[s] = t.dec[g].out[s] + hv[s];
    }
  }

  t.posterior.assign(static_cast<std::size_t>(d) * S, 0.0);
  t.mean.assign(d, 0.0);
  for (int v = 0; v < d; ++v) {
    auto p = softmax(at(t.b, static_cast<std::size_t>(leaf0 + v)));
    for (int s = 0; s < S; ++s) {
      t.posterior[static_cast<std::size_t>(v) * S + s] = p[s];
      t.mean[v] += state_value(s) * p[s];
    }
  }
  return t.mean;
}

/// The maps realized by the network's blocks, for driving amp_classify /
/// amp_denoise with the same arithmetic.
inline MessageFns block_fns(const NetWeights& w) {
  MessageFns fns;
  fns.S = w.S;
  const int L = w.depth();
  auto wrap = [](const TwoLayerBlock& b) {
    return VectorFn([&b](std::span<const double> h, std::span<double> out) { b.apply(h, out); });
  };
  fns.down.resize(L);
  fns.up.resize(L);
  for (int l = 1; l <= L; ++l) {
    for (const auto& b : w.down[l - 1]) fns.down[l - 1].push_back(wrap(b));
    if (w.kind == NetKind::unet)
      for (const auto& b : w.up[l - 1]) fns.up[l - 1].push_back(wrap(b));
  }
  if (w.kind == NetKind::convnet) {
    for (const auto& b : w.down[L - 1])
      fns.leaf.push_back([&b](double x, std::span<double> out) {
        const double in[1] = {x};
        b.apply(in, out);
      });
    fns.down[L - 1].clear();
  }
  return fns;
}

// ---------------------------------------------------------------------------
// Construction from a model

inline long long pow3(int L) {
  long long p = 1;
  for (int i = 0; i < L; ++i) p *= 3;
  return p;
}

inline double pow18(int L) { return std::pow(18.0, L); }

/// Nominal classifier width 4 ceil(S^2 K^2 d 3^L / delta).
inline long long classifier_width(int S, double K, int d, int L, double delta) {
  return 4 * safe_ceil(static_cast<double>(S) * S * K * K * d * static_cast<double>(pow3(L)) / delta);
}

/// Nominal denoiser width 4 ceil(S^3 K^2 d 18^L / delta).
inline long long denoiser_width(int S, double K, int d, int L, double delta) {
  return 4 * safe_ceil(static_cast<double>(S) * S * S * K * K * d * pow18(L) / delta);
}

/// ConvNet whose classifier is within delta of the Bayes classifier in
/// log-ratio. Each map is approximated to delta / (d 3^L); a non-uniform root
/// marginal is folded into the layer-1 rank-0 table, which widens the entry
/// bound to K max(mu) / min(mu).
inline NetWeights construct_classifier(const GhmParams& p, double delta) {
  validate_params(p);
  require(delta > 0.0, ErrorCode::configuration, "delta must be positive");
  const auto& topo = p.topology;
  const int L = topo.depth();
  const int d = topo.leaf_count();
  const double K = absorbed_bound(p);
  const double per_fn = delta / (static_cast<double>(d) * static_cast<double>(pow3(L)));
  const auto tables = absorbed_tables(p);
  NetWeights w;
  w.kind = NetKind::convnet;
  w.topology = topo;
  w.S = p.S;
  w.D = classifier_width(p.S, K, d, L, delta);
  w.down.resize(L);
  for (int l = 1; l <= L; ++l)
    for (int r = 0; r < topo.branching(l); ++r)
      w.down[l - 1].push_back(l == L ? build_leaf_block(tables[l - 1][r], K, per_fn)
                                     : build_lse_block(tables[l - 1][r], LseDirection::down, K, per_fn));
  return w;
}

/// U-Net whose denoiser is within delta of the Bayes denoiser in sup norm,
/// with every map approximated to delta / (d 18^L S).
inline NetWeights construct_denoiser(const GhmParams& p, double delta) {
  validate_params(p);
  require(delta > 0.0, ErrorCode::configuration, "delta must be positive");
  const auto& topo = p.topology;
  const int L = topo.depth();
  const int d = topo.leaf_count();
  const double K = absorbed_bound(p);
  const double per_fn = delta / (static_cast<double>(d) * pow18(L) * p.S);
  const auto tables = absorbed_tables(p);
  NetWeights w;
  w.kind = NetKind::unet;
  w.topology = topo;
  w.S = p.S;
  w.D = denoiser_width(p.S, K, d, L, delta);
  w.down.resize(L);
  w.up.resize(L);
  for (int l = 1; l <= L; ++l)
    for (int r = 0; r < topo.branching(l); ++r) {
      w.down[l - 1].push_back(build_lse_block(tables[l - 1][r], LseDirection::down, K, per_fn));
      w.up[l - 1].push_back(build_lse_block(tables[l - 1][r], LseDirection::up, K, per_fn));
    }
  return w;
}

// ---------------------------------------------------------------------------
// Random networks and the norm ball

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale == 0.0 ? 0.0 : rng.uniform(-scale, scale);
  return m;
}

/// Dense network with iid uniform entries in [-scale, scale].
inline NetWeights random_init(const TreeTopology& topo, int S, int D, double scale, std::uint64_t seed, NetKind kind) {
  require(D >= 1, ErrorCode::configuration, "width must be positive");
  require(scale >= 0.0, ErrorCode::configuration, "scale must be nonnegative");
  Rng rng(seed);
  NetWeights w;
  w.kind = kind;
  w.topology = topo;
  w.S = S;
  w.D = D;
  auto make = [&](int in) {
    TwoLayerBlock b;
    b.W1 = uniform_matrix(S, D, scale, rng);
    b.W2 = LinearMap(uniform_matrix(D, D, scale, rng));
    b.W3 = uniform_matrix(D, in + 1, scale, rng);
    return b;
  };
  const int L = topo.depth();
  w.down.resize(L);
  if (kind == NetKind::unet) w.up.resize(L);
  for (int l = 1; l <= L; ++l)
    for (int r = 0; r < topo.branching(l); ++r) {
      w.down[l - 1].push_back(make(input_dim(kind, S, l, L)));
      if (kind == NetKind::unet) w.up[l - 1].push_back(make(S));
    }
  return w;
}

/// Zero-pads every block to hidden width D. Padded units are dead (zero
/// weights in and out), so outputs are unchanged.
inline NetWeights pad_to(NetWeights w, long long D) {
  require(D >= w.native_width(), ErrorCode::configuration, "cannot pad below a block's native width");
  w.for_each_block([&](TwoLayerBlock& b) {
    const auto D_ = static_cast<Eigen::Index>(D);
    Matrix W3 = Matrix::Zero(D_, b.W3.cols());
    W3.topRows(b.W3.rows()) = b.W3;
    Matrix W1 = Matrix::Zero(b.W1.rows(), D_);
    W1.leftCols(b.W1.cols()) = b.W1;
    if (b.W2.factored()) {
      Matrix left = Matrix::Zero(D_, b.W2.left().cols());
      left.topRows(b.W2.left().rows()) = b.W2.left();
      Matrix right = Matrix::Zero(b.W2.right().rows(), D_);
      right.leftCols(b.W2.right().cols()) = b.W2.right();
      b.W2 = LinearMap(std::move(left), b.W2.core(), std::move(right));
    } else {
      Matrix W2 = Matrix::Zero(D_, D_);
      W2.topLeftCorner(b.W2.rows(), b.W2.cols()) = b.W2.dense();
      b.W2 = LinearMap(std::move(W2));
    }
    b.W3 = std::move(W3);
    b.W1 = std::move(W1);
  });
  w.D = D;
  return w;
}

inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
}

/// Largest operator norm over every weight matrix.
inline double max_operator_norm(const NetWeights& w) {
  double best = 0.0;
  w.for_each_block([&](const TwoLayerBlock& b) {
    best = std::max({best, spectral_norm(b.W1), b.W2.operator_norm(), spectral_norm(b.W3)});
  });
  return best;
}

inline void clip_matrix(Matrix& m, double bound) {
  if (within_norm(spectral_norm(m), bound)) return;
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd s = svd.singularValues().cwiseMin(bound);
  m = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

/// Projects onto the operator-norm ball of radius B by clipping singular
/// values of each matrix; matrices already inside are left untouched.
inline NetWeights project_norms(NetWeights w, double B) {
  require(B > 0.0, ErrorCode::configuration, "norm budget must be positive");
  w.for_each_block([&](TwoLayerBlock& b) {
    clip_matrix(b.W1, B);
    b.W2.clip_singular_values(B);
    clip_matrix(b.W3, B);
  });
  w.B = B;
  return w;
}

// ---------------------------------------------------------------------------
// Weight files
//
//   ghmnet-weights 1
//   kind <convnet|unet>
//   S <S>
//   D <D>
//   B <budget|inf>
//   m <m_1> ... <m_L>
//   block <down|up> <layer> <rank>      (1-based)
//   W1 <rows> <cols>  + rows
//   W2 dense <rows> <cols> + rows       or   W2 factored, then left/core/right
//   W3 <rows> <cols>  + rows

namespace detail {

inline void write_matrix(std::ostream& out, const std::string& name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << format_double(m(r, c));
    out << '\n';
  }
}

inline Matrix read_matrix(TokenReader& in, const std::string& name) {
  auto head = in.expect_line(name);
  if (head.size() != 3 || head[0] != name) in.fail("expected '" + name + " <rows> <cols>'");
  const auto rows = parse_int(head[1]);
  const auto cols = parse_int(head[2]);
  if (rows < 0 || cols < 0) in.fail("negative matrix size");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto tokens = in.expect_line(name + " row");
    if (static_cast<long long>(tokens.size()) != cols) in.fail(name + " row has wrong length");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = parse_double(tokens[c]);
  }
  return m;
}

}  // namespace detail

inline void write_weights(std::ostream& out, const NetWeights& w) {
  out << "ghmnet-weights 1\nkind " << to_string(w.kind) << "\nS " << w.S << "\nD " << w.D << "\nB "
      << format_double(w.B) << "\nm";
  for (int m : w.topology.branching_factors()) out << ' ' << m;
  out << '\n';
  auto emit = [&](const char* dir, const std::vector<std::vector<TwoLayerBlock>>& blocks) {
    for (std::size_t l = 0; l < blocks.size(); ++l)
      for (std::size_t r = 0; r < blocks[l].size(); ++r) {
        const auto& b = blocks[l][r];
        out << "block " << dir << ' ' << l + 1 << ' ' << r + 1 << '\n';
        detail::write_matrix(out, "W1", b.W1);
        if (b.W2.factored()) {
          out << "W2 factored\n";
          detail::write_matrix(out, "left", b.W2.left());
          detail::write_matrix(out, "core", b.W2.core());
          detail::write_matrix(out, "right", b.W2.right());
        } else {
          out << "W2 dense\n";
          detail::write_matrix(out, "matrix", b.W2.dense());
        }
        detail::write_matrix(out, "W3", b.W3);
      }
  };
  emit("down", w.down);
  emit("up", w.up);
}

inline NetWeights read_weights(std::istream& input) {
  TokenReader in(input);
  auto expect = [&](const std::string& key, std::size_t n) {
    auto t = in.expect_line(key);
    if (t[0] != key || (n && t.size() != n)) in.fail("expected '" + key + "'");
    return t;
  };
  auto magic = expect("ghmnet-weights", 2);
  if (magic[1] != "1") in.fail("unsupported weight file version");
  NetWeights w;
  auto kind = expect("kind", 2);
  if (kind[1] == "convnet") w.kind = NetKind::convnet;
  else if (kind[1] == "unet") w.kind = NetKind::unet;
  else in.fail("unknown network kind");
  w.S = static_cast<int>(parse_int(expect("S", 2)[1]));
  w.D = parse_int(expect("D", 2)[1]);
  w.B = parse_double(expect("B", 2)[1]);
  auto m = expect("m", 0);
  std::vector<int> branching;
  for (std::size_t i = 1; i < m.size(); ++i) branching.push_back(static_cast<int>(parse_int(m[i])));
  w.topology = TreeTopology::build(branching);
  const int L = w.topology.depth();
  w.down.assign(L, {});
  if (w.kind == NetKind::unet) w.up.assign(L, {});
  for (auto& layer : w.down) layer.resize(0);
  for (auto t = in.next_line(); !t.empty(); t = in.next_line()) {
    if (t.size() != 4 || t[0] != "block") in.fail("expected 'block <dir> <layer> <rank>'");
    auto& table = t[1] == "down" ? w.down : w.up;
    if (t[1] != "down" && !(t[1] == "up" && w.kind == NetKind::unet)) in.fail("bad block direction");
    const auto l = parse_int(t[2]);
    const auto r = parse_int(t[3]);
    if (l < 1 || l > L || r < 1 || r > w.topology.branching(static_cast<int>(l))) in.fail("block index out of range");
    if (static_cast<long long>(table[l - 1].size()) != r - 1) in.fail("blocks must appear in rank order");
    TwoLayerBlock b;
    b.W1 = detail::read_matrix(in, "W1");
    auto w2 = in.expect_line("W2");
    if (w2.size() != 2 || w2[0] != "W2") in.fail("expected 'W2 dense|factored'");
    if (w2[1] == "dense") {
      b.W2 = LinearMap(detail::read_matrix(in, "matrix"));
    } else if (w2[1] == "factored") {
      Matrix left = detail::read_matrix(in, "left");
      Matrix core = detail::read_matrix(in, "core");
      Matrix right = detail::read_matrix(in, "right");
      b.W2 = LinearMap(std::move(left), std::move(core), std::move(right));
    } else {
      in.fail("unknown W2 storage");
    }
    b.W3 = detail::read_matrix(in, "W3");
    table[l - 1].push_back(std::move(b));
  }
  check_weights(w);
  return w;
}

inline void write_weights_file(const std::string& path, const NetWeights& w) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path);
  write_weights(out, w);
}

inline NetWeights read_weights_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open weight file " + path);
  return read_weights(in);
}

}  // namespace ghmnet
