#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ghmnet/error.hpp"
#include "ghmnet/ghm.hpp"

namespace ghmnet {

/// ceil(x), but values within rounding noise of an integer count as that
/// integer, so 0.5 / 36 style divisions do not gain a spurious extra knot.
inline long long safe_ceil(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<long long>(r);
  return static_cast<long long>(std::ceil(x));
}

struct ReluTerm {
  double a = 0.0;  // output weight
  double w = 0.0;  // input weight
  double b = 0.0;  // bias
};

/// x -> sum_j a_j * ReLU(w_j * x + b_j), plus the coefficient bounds its
/// construction promises.
struct PiecewiseReluFn {
  std::vector<ReluTerm> terms;
  double bound_a = 0.0, bound_w = 0.0, bound_b = 0.0;
  std::vector<double> knots;  // points where the approximant meets its target exactly

  double operator()(double x) const {
    double acc = 0.0;
    for (const auto& t : terms) acc += t.a * std::max(0.0, t.w * x + t.b);
    return acc;
  }

  std::size_t size() const { return terms.size(); }

  bool within_bounds() const {
    for (const auto& t : terms)
      if (std::abs(t.a) > bound_a || std::abs(t.w) > bound_w || std::abs(t.b) > bound_b) return false;
    return true;
  }
};

/// exp on (-inf, 0] with M knots at equally spaced values e_j = j / (M - 1),
/// constant e_1 left of the first knot. The last piece runs through (0, 1), so
/// the approximant is exact at 0.
inline PiecewiseReluFn exp_approx_with_knots(long long M) {
  require(M >= 3, ErrorCode::configuration, "exp approximation needs at least 3 knots");
  std::vector<double> e(M), b(M);
  for (long long j = 1; j <= M - 1; ++j) {
    e[j] = static_cast<double>(j) / static_cast<double>(M - 1);
    b[j] = -std::log(e[j]);
  }
  b[M - 1] = 0.0;
  PiecewiseReluFn f;
  // Constant e_1 on the left tail, carried by ReLU(0 x + 1) so that no
  // large terms cancel; then one slope increment per knot.
  f.terms.push_back({e[1], 0.0, 1.0});
  double previous = 0.0;
  for (long long j = 1; j <= M - 2; ++j) {
    const double slope = (e[j + 1] - e[j]) / (b[j] - b[j + 1]);
    f.terms.push_back({slope - previous, 1.0, b[j]});
    previous = slope;
  }
  // Re-solve the last increment (active only on [-b_{M-2}, 0]) so that the
  // rounded sum at 0 is exactly 1.
  if (M >= 3) {
    auto& last = f.terms.back();
    for (int iter = 0; iter < 8 && f(0.0) != 1.0; ++iter) {
      const double at_zero = f(0.0);
      const double step = (1.0 - at_zero) / last.b;
      last.a = step != 0.0 ? last.a + step : std::nextafter(last.a, at_zero < 1.0 ? INFINITY : -INFINITY);
    }
  }
  f.bound_a = 2.0;
  f.bound_w = 1.0;
  f.bound_b = std::log(static_cast<double>(M));
  for (long long j = 1; j <= M - 1; ++j) f.knots.push_back(-b[j]);
  return f;
}

/// sup_{x <= 0} |exp(x) - exp_delta(x)| <= delta, exp_delta(0) = 1, non-decreasing.
inline PiecewiseReluFn build_exp_approx(double delta) {
  require(delta > 0.0, ErrorCode::configuration, "delta must be positive");
  return exp_approx_with_knots(safe_ceil(1.0 / delta) + 1);
}

/// log on [1/A, A] by linear interpolation at M knots whose log-values are
/// equally spaced, i.e. geometric in x. Terms: s_1 ReLU(x), a constant carried
/// by ReLU(0 x + 1), and slope changes at each interior knot.
inline PiecewiseReluFn log_approx_with_knots(double A, long long M) {
  require(A > 1.0, ErrorCode::configuration, "log approximation needs A > 1");
  require(M >= 2, ErrorCode::configuration, "log approximation needs at least 2 knots");
  const double lo = -std::log(A);
  const double step = 2.0 * std::log(A) / static_cast<double>(M - 1);
  std::vector<double> x(M), v(M);
  for (long long j = 0; j < M; ++j) {
    v[j] = lo + step * static_cast<double>(j);
    x[j] = std::exp(v[j]);
  }
  x.front() = 1.0 / A;
  x.back() = A;
  v.front() = lo;
  v.back() = std::log(A);
  PiecewiseReluFn f;
  double slope = (v[1] - v[0]) / (x[1] - x[0]);
  f.terms.push_back({slope, 1.0, 0.0});
  f.terms.push_back({v[0] - slope * x[0], 0.0, 1.0});
  for (long long j = 1; j <= M - 2; ++j) {
    const double next = (v[j + 1] - v[j]) / (x[j + 1] - x[j]);
    f.terms.push_back({next - slope, 1.0, -x[j]});
    slope = next;
  }
  f.bound_a = 2.0 * A;
  f.bound_w = 1.0;
  f.bound_b = A;
  f.knots = x;
  return f;
}

/// sup_{x in [1/A, A]} |log(x) - log_delta(x)| <= delta with M = ceil(2A / delta) + 1.
inline PiecewiseReluFn build_log_approx(double A, double delta) {
  require(delta > 0.0, ErrorCode::configuration, "delta must be positive");
  return log_approx_with_knots(A, safe_ceil(2.0 * A / delta) + 1);
}

/// Ind(x) = 2 ReLU(x - 1/2) + 2 ReLU(x + 1/2) - 4 ReLU(x); Ind(x - j) = 1{x = j} on integers.
inline PiecewiseReluFn build_indicator() {
  PiecewiseReluFn f;
  f.terms = {{2.0, 1.0, -0.5}, {2.0, 1.0, 0.5}, {-4.0, 1.0, 0.0}};
  f.bound_a = 4.0;
  f.bound_w = 1.0;
  f.bound_b = 1.0;
  f.knots = {-0.5, 0.0, 0.5};
  return f;
}

// ---------------------------------------------------------------------------
// Linear maps and two-layer blocks

/// A matrix stored either densely or as left * core * right. Products are
/// evaluated with plain loops in index order, so results do not depend on
/// vectorization choices.
inline bool within_norm(double norm, double bound) { return norm <= bound * (1.0 + 1e-12); }

class LinearMap {
 public:
  LinearMap() = default;
  explicit LinearMap(Matrix dense) : left_(std::move(dense)) {}
  LinearMap(Matrix left, Matrix core, Matrix right)
      : left_(std::move(left)), core_(std::move(core)), right_(std::move(right)), factored_(true) {
    require(left_.cols() == core_.rows() && core_.cols() == right_.rows(), ErrorCode::dimension_mismatch,
            "factored map has incompatible factors");
  }

  bool factored() const { return factored_; }
  Eigen::Index rows() const { return left_.rows(); }
  Eigen::Index cols() const { return factored_ ? right_.cols() : left_.cols(); }
  const Matrix& dense() const { return left_; }
  Matrix& dense() { return left_; }
  const Matrix& left() const { return left_; }
  const Matrix& core() const { return core_; }
  const Matrix& right() const { return right_; }

  void apply(std::span<const double> in, std::span<double> out) const {
    if (!factored_) {
      multiply(left_, in, out);
      return;
    }
    std::vector<double> t1(right_.rows()), t2(core_.rows());
    multiply(right_, in, t1);
    multiply(core_, t1, t2);
    multiply(left_, t2, out);
  }

  /// out = A^T in.
  void apply_transpose(std::span<const double> in, std::span<double> out) const {
    if (!factored_) {
      multiply_transpose(left_, in, out);
      return;
    }
    std::vector<double> t1(left_.cols()), t2(core_.cols());
    multiply_transpose(left_, in, t1);
    multiply_transpose(core_, t1, t2);
    multiply_transpose(right_, t2, out);
  }

  Matrix to_dense() const { return factored_ ? Matrix(left_ * core_ * right_) : left_; }

  /// Largest singular value. Factored maps reduce to the small matrix
  /// R_left * core * R_right^T from thin QR factors of the outer matrices.
  double operator_norm() const {
    if (rows() == 0 || cols() == 0) return 0.0;
    if (!factored_) return Eigen::JacobiSVD<Matrix>(left_).singularValues()(0);
    return Eigen::JacobiSVD<Matrix>(reduced_core()).singularValues()(0);
  }

  double max_abs_entry() const {
    if (!factored_) return left_.cwiseAbs().maxCoeff();
    const Matrix lc = left_ * core_;
    double best = 0.0;
    for (Eigen::Index r = 0; r < lc.rows(); ++r) best = std::max(best, (lc.row(r) * right_).cwiseAbs().maxCoeff());
    return best;
  }

  /// Clips singular values at `bound`; maps already within bound (up to a
  /// relative 1e-12, so that clipping twice is a no-op) are untouched.
  void clip_singular_values(double bound) {
    if (within_norm(operator_norm(), bound)) return;
    if (!factored_) {
      Eigen::JacobiSVD<Matrix> svd(left_, Eigen::ComputeThinU | Eigen::ComputeThinV);
      Eigen::VectorXd s = svd.singularValues().cwiseMin(bound);
      left_ = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
      return;
    }
    Eigen::HouseholderQR<Matrix> ql(left_);
    Eigen::HouseholderQR<Matrix> qr(right_.transpose());
    const Eigen::Index kl = std::min(left_.rows(), left_.cols());
    const Eigen::Index kr = std::min(right_.rows(), right_.cols());
    Matrix Ql = ql.householderQ() * Matrix::Identity(left_.rows(), kl);
    Matrix Qr = qr.householderQ() * Matrix::Identity(right_.cols(), kr);
    Eigen::JacobiSVD<Matrix> svd(reduced_core(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd s = svd.singularValues().cwiseMin(bound);
    left_ = Ql * svd.matrixU();
    core_ = s.asDiagonal();
    right_ = (Qr * svd.matrixV()).transpose();
  }

  static void multiply(const Matrix& m, std::span<const double> in, std::span<double> out) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      double acc = 0.0;
      for (Eigen::Index c = 0; c < m.cols(); ++c) acc += m(r, c) * in[c];
      out[r] = acc;
    }
  }

  static void multiply_transpose(const Matrix& m, std::span<const double> in, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) out[c] += m(r, c) * in[r];
  }

 private:
  Matrix reduced_core() const {
    Eigen::HouseholderQR<Matrix> ql(left_);
    Eigen::HouseholderQR<Matrix> qr(right_.transpose());
    const Eigen::Index kl = std::min(left_.rows(), left_.cols());
    const Eigen::Index kr = std::min(right_.rows(), right_.cols());
    Matrix Rl = ql.matrixQR().topRows(kl).triangularView<Eigen::Upper>();
    Matrix Rr = qr.matrixQR().topRows(kr).triangularView<Eigen::Upper>();
    return Rl * core_ * Rr.transpose();
  }

  Matrix left_;
  Matrix core_, right_;
  bool factored_ = false;
};

/// h -> W1 ReLU(W2 ReLU(W3 [h; 1])).
struct TwoLayerBlock {
  Matrix W1;
  LinearMap W2;
  Matrix W3;

  int input_dim() const { return static_cast<int>(W3.cols()) - 1; }
  int output_dim() const { return static_cast<int>(W1.rows()); }
  int hidden_inner() const { return static_cast<int>(W3.rows()); }
  int hidden_outer() const { return static_cast<int>(W1.cols()); }
  int width() const { return std::max(hidden_inner(), hidden_outer()); }

  void check_shapes() const {
    require(W2.cols() == W3.rows() && W1.cols() == W2.rows() && W3.cols() >= 1, ErrorCode::dimension_mismatch,
            "block matrices have incompatible shapes");
  }

  void apply(std::span<const double> h, std::span<double> out) const {
    const int n = input_dim();
    std::vector<double> in(n + 1), r1(hidden_inner()), r2(hidden_outer());
    std::copy(h.begin(), h.begin() + n, in.begin());
    in[n] = 1.0;
    LinearMap::multiply(W3, in, r1);
    for (double& v : r1) v = std::max(0.0, v);
    W2.apply(r1, r2);
    for (double& v : r2) v = std::max(0.0, v);
    LinearMap::multiply(W1, r2, out);
  }

  std::vector<double> operator()(std::span<const double> h) const {
    std::vector<double> out(output_dim());
    apply(h, out);
    return out;
  }
};

/// Knot counts of a log-sum-exp block at accuracy delta.
struct LseSizes {
  long long M1 = 0;  // log knots
  long long M2 = 0;  // exp knots
};

inline LseSizes lse_sizes(int S, double K, double delta) {
  return {safe_ceil(2.0 * S * K / delta) + 1, safe_ceil(2.0 * S * K * K / delta) + 1};
}

/// The scalar pieces of an approximate log-sum-exp map: log on [1/(SK), SK]
/// and exp at accuracy delta / (2 S K^2).
struct LseParts {
  PiecewiseReluFn exp_fn;
  PiecewiseReluFn log_fn;
};

inline LseParts lse_parts(int S, double K, double delta) {
  const auto n = lse_sizes(S, K, delta);
  return {exp_approx_with_knots(n.M2), log_approx_with_knots(S * K, n.M1)};
}

/// log_fn(sum_j mix(i, j) exp_fn(h_j)), evaluated scalar by scalar.
inline std::vector<double> lse_scalar_path(const Matrix& mix, const LseParts& parts, std::span<const double> h) {
  const int S = static_cast<int>(mix.rows());
  std::vector<double> e(S), out(S);
  for (int j = 0; j < S; ++j) e[j] = parts.exp_fn(h[j]);
  for (int i = 0; i < S; ++i) {
    double acc = 0.0;
    for (int j = 0; j < S; ++j) acc += mix(i, j) * e[j];
    out[i] = parts.log_fn(acc);
  }
  return out;
}

inline void check_table_bound(const Matrix& psi, double K) {
  require(K > 1.0, ErrorCode::invalid_params, "K must exceed 1");
  require(psi.rows() == psi.cols(), ErrorCode::dimension_mismatch, "table must be square");
  const double tol = 1e-12;
  require(psi.minCoeff() >= 1.0 / K - tol && psi.maxCoeff() <= K + tol, ErrorCode::invalid_params,
          "table entries outside [1/K, K]");
}

enum class LseDirection {
  down,  // f(h)_s = log sum_a psi(s, a) e^{h_a}
  up,    // f(h)_s = log sum_a psi(a, s) e^{h_a}
};

/// Exact realization of the approximate log-sum-exp map as a two-layer block.
///   W3: (S (M2 - 1) + 1) x (S + 1)   exp pieces per coordinate plus a constant unit
///   W2 = W~2 diag(Psi, 1) W-2 kept factored
///   W1: S x S M1               log output weights
inline TwoLayerBlock build_lse_block(const Matrix& psi, LseDirection direction, double K, double delta) {
  check_table_bound(psi, K);
  require(delta > 0.0, ErrorCode::configuration, "delta must be positive");
  const int S = static_cast<int>(psi.rows());
  const Matrix mix = direction == LseDirection::down ? psi : Matrix(psi.transpose());
  const auto parts = lse_parts(S, K, delta);
  const auto M2 = static_cast<Eigen::Index>(parts.exp_fn.size());
  const auto M1 = static_cast<Eigen::Index>(parts.log_fn.size());

  TwoLayerBlock blk;
  blk.W3 = Matrix::Zero(S * M2 + 1, S + 1);
  Matrix bar2 = Matrix::Zero(S + 1, S * M2 + 1);
  for (int i = 0; i < S; ++i)
    for (Eigen::Index j = 0; j < M2; ++j) {
      const auto& t = parts.exp_fn.terms[j];
      blk.W3(i * M2 + j, i) = t.w;
      blk.W3(i * M2 + j, S) = t.b;
      bar2(i, i * M2 + j) = t.a;
    }
  blk.W3(S * M2, S) = 1.0;
  bar2(S, S * M2) = 1.0;

  Matrix core = Matrix::Zero(S + 1, S + 1);
  core.topLeftCorner(S, S) = mix;
  core(S, S) = 1.0;

  Matrix tilde2 = Matrix::Zero(S * M1, S + 1);
  blk.W1 = Matrix::Zero(S, S * M1);
  for (int i = 0; i < S; ++i)
    for (Eigen::Index j = 0; j < M1; ++j) {
      const auto& t = parts.log_fn.terms[j];
      tilde2(i * M1 + j, i) = t.w;
      tilde2(i * M1 + j, S) = t.b;
      blk.W1(i, i * M1 + j) = t.a;
    }
  blk.W2 = LinearMap(std::move(tilde2), std::move(core), std::move(bar2));
  return blk;
}

/// Knot count of the leaf block's log at accuracy delta.
inline long long leaf_log_knots(double K, double delta) { return safe_ceil(K / delta) + 1; }

/// Reference leaf map log_fn(sum_j psi(i, j) Ind(x - j)), scalar by scalar.
inline std::vector<double> leaf_scalar_path(const Matrix& psi, const PiecewiseReluFn& log_fn, double x) {
  const int S = static_cast<int>(psi.rows());
  const auto ind = build_indicator();
  std::vector<double> out(S);
  for (int i = 0; i < S; ++i) {
    double acc = 0.0;
    for (int j = 0; j < S; ++j) acc += psi(i, j) * ind(x - (j + 1));
    out[i] = log_fn(acc);
  }
  return out;
}

/// Two-layer block with input [x; 1] computing log_delta(psi(i, x)) for x in [S].
/// The indicator units ReLU(x - j + c) are scaled by 1 / max(1, |j - c|) so that
/// every W3 entry is at most 1 in magnitude; W2 compensates by positive
/// homogeneity of ReLU.
inline TwoLayerBlock build_leaf_block(const Matrix& psi, double K, double delta) {
  check_table_bound(psi, K);
  require(delta > 0.0, ErrorCode::configuration, "delta must be positive");
  const int S = static_cast<int>(psi.rows());
  const auto log_fn = log_approx_with_knots(K, leaf_log_knots(K, delta));
  const auto ind = build_indicator();
  const auto M1 = static_cast<Eigen::Index>(log_fn.size());

  TwoLayerBlock blk;
  blk.W3 = Matrix::Zero(3 * S + 1, 2);
  Matrix bar2 = Matrix::Zero(S + 1, 3 * S + 1);
  for (int j = 0; j < S; ++j)
    for (int k = 0; k < 3; ++k) {
      const auto& t = ind.terms[k];
      const double bias = t.b - t.w * (j + 1);  // ReLU(w (x - (j+1)) + b)
      const double scale = std::max(1.0, std::abs(bias));
      blk.W3(3 * j + k, 0) = t.w / scale;
      blk.W3(3 * j + k, 1) = bias / scale;
      bar2(j, 3 * j + k) = t.a * scale;
    }
  blk.W3(3 * S, 1) = 1.0;
  bar2(S, 3 * S) = 1.0;

  Matrix core = Matrix::Zero(S + 1, S + 1);
  core.topLeftCorner(S, S) = psi;
  core(S, S) = 1.0;

  Matrix tilde2 = Matrix::Zero(S * M1, S + 1);
  blk.W1 = Matrix::Zero(S, S * M1);
  for (int i = 0; i < S; ++i)
    for (Eigen::Index j = 0; j < M1; ++j) {
      const auto& t = log_fn.terms[j];
      tilde2(i * M1 + j, i) = t.w;
      tilde2(i * M1 + j, S) = t.b;
      blk.W1(i, i * M1 + j) = t.a;
    }
  blk.W2 = LinearMap(std::move(tilde2), std::move(core), std::move(bar2));
  return blk;
}

}  // namespace ghmnet
