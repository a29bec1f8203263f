// Copyright 2026 The chtr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "chtr/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace chtr {

/// Largest re-weighting scale for which 2 - cosh(a * (i - j) / M) stays
/// non-negative over |i - j| < M (acosh(2) rounded down to four places).
inline constexpr double kMaxReweightScale = 1.3169;

/// Rows whose attention denominator falls below this produce a zero output.
inline constexpr double kDenominatorEps = 1e-9;

/// Whether V goes through the same ReLU as Q and K.
enum class ValueMode { Rectified, Raw };

inline void check_reweight_scale(double a) {
  if (!(a >= 0.0 && a <= kMaxReweightScale)) {
    throw ParameterError("re-weighting scale a=" + std::to_string(a) + " outside [0, " +
                         std::to_string(kMaxReweightScale) + "]");
  }
}

inline void check_position_normalizer(Index n, Index m) {
  if (m < n || m < 1) {
    throw ParameterError("position normalizer M=" + std::to_string(m) +
                         " must be >= sequence length " + std::to_string(n));
  }
}

/// f(a (i - j) / M) = 2 - cosh(a (i - j) / M) without any range checks.
inline double reweight_unchecked(double a, long long i, long long j, long long m) {
  return 2.0 - std::cosh(a * static_cast<double>(i - j) / static_cast<double>(m));
}

/// Positional weight between 1-based positions i and j.
inline double reweight(double a, long long i, long long j, long long m) {
  check_reweight_scale(a);
  if (m < 1 || i < 1 || j < 1 || i > m || j > m) {
    throw ParameterError("reweight: positions must satisfy 1 <= i, j <= M");
  }
  return reweight_unchecked(a, i, j, m);
}

/// cosh(a k / M) and sinh(a k / M) for positions k = 1..n.
template <typename Scalar>
struct ReweightFactors {
  Vec<Scalar> cosh;
  Vec<Scalar> sinh;
};

template <typename Scalar = double>
ReweightFactors<Scalar> reweight_factors(double a, Index n, Index m) {
  ReweightFactors<Scalar> f{Vec<Scalar>(n), Vec<Scalar>(n)};
  for (Index k = 0; k < n; ++k) {
    const double x = a * static_cast<double>(k + 1) / static_cast<double>(m);
    f.cosh[k] = static_cast<Scalar>(std::cosh(x));
    f.sinh[k] = static_cast<Scalar>(std::sinh(x));
  }
  return f;
}

template <typename Scalar>
struct Projected {
  Mat<Scalar> q, k, v;
};

/// Elementwise ReLU of all three projections.
template <typename Scalar>
Projected<Scalar> nonneg_project(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v) {
  require_same_shape(q, k, "nonneg_project");
  require_same_shape(k, v, "nonneg_project");
  return {relu(q), relu(k), relu(v)};
}

namespace detail {

// Q is N_q x d; K and V are N_kv x d. Self-attention is the N_q == N_kv case.
template <typename Scalar>
void check_qkv(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v, const char* what) {
  if (q.rows() < 1 || k.rows() < 1 || q.cols() < 1) {
    throw DimensionError(std::string(what) + ": empty input");
  }
  if (q.cols() != k.cols()) {
    throw DimensionError(std::string(what) + ": Q " + shape_str(q) + " and K " + shape_str(k) +
                         " differ in width");
  }
  require_same_shape(k, v, what);
}

template <typename Scalar>
Mat<Scalar> rectify_values(const Mat<Scalar>& v, ValueMode mode) {
  return mode == ValueMode::Rectified ? Mat<Scalar>(relu(v)) : v;
}

}  // namespace detail

/// Softmax(Q K^T) V with row-wise softmax and no 1/sqrt(d) scaling.
/// Evaluated in row blocks so memory stays O(block * N_kv).
template <typename Scalar>
Mat<Scalar> softmax_attention(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v,
                              Index block_rows = 256) {
  detail::check_qkv(q, k, v, "softmax_attention");
  Mat<Scalar> out(q.rows(), v.cols());
  const Mat<Scalar> kt = k.transpose();
  for (Index r0 = 0; r0 < q.rows(); r0 += block_rows) {
    const Index rows = std::min(block_rows, q.rows() - r0);
    Mat<Scalar> scores = q.middleRows(r0, rows) * kt;
    for (Index i = 0; i < rows; ++i) {
      auto row = scores.row(i);
      row = (row.array() - row.maxCoeff()).exp().matrix();
      row /= row.sum();
    }
    out.middleRows(r0, rows).noalias() = scores * v;
  }
  return out;
}

/// Builds the explicit N_q x N_kv similarity matrix
///   s_ij = ReLU(Q_i) . ReLU(K_j) * (2 - cosh(a (i - j) / M))
/// and returns its row-normalized product with V'. Quadratic cost; this is the
/// reference the linear form is checked against.
template <typename Scalar>
Mat<Scalar> cosh_attention_direct(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v,
                                  double a, Index m, ValueMode mode = ValueMode::Rectified) {
  detail::check_qkv(q, k, v, "cosh_attention_direct");
  check_reweight_scale(a);
  check_position_normalizer(std::max(q.rows(), k.rows()), m);
  const Mat<Scalar> qp = relu(q);
  const Mat<Scalar> kp = relu(k);
  const Mat<Scalar> vp = detail::rectify_values(v, mode);
  Mat<Scalar> sim = qp * kp.transpose();
  for (Index i = 0; i < sim.rows(); ++i) {
    for (Index j = 0; j < sim.cols(); ++j) {
      sim(i, j) *= static_cast<Scalar>(reweight_unchecked(a, i + 1, j + 1, m));
    }
  }
  Mat<Scalar> out = sim * vp;
  for (Index i = 0; i < out.rows(); ++i) {
    const Scalar den = sim.row(i).sum();
    if (den < Scalar(kDenominatorEps)) {
      out.row(i).setZero();
    } else {
      out.row(i) /= den;
    }
  }
  return out;
}

namespace detail {

// Stacked forms used by the linear forward and backward passes:
//   key_stack   = [K' | cosh_k K' | sinh_k K']            N_kv x 3d
//   value_aug   = [V' | 1]                                N_kv x (d_v + 1)
//   summary     = key_stack^T value_aug                   3d x (d_v + 1)
//   query_stack = [2 Q' | -cosh_q Q' | sinh_q Q']         N_q x 3d
//   num_den     = query_stack summary                     N_q x (d_v + 1)
// The last column of num_den is the row denominator.
template <typename Scalar>
struct LinearForm {
  Mat<Scalar> qp, kp;
  ReweightFactors<Scalar> fq, fk;
  Mat<Scalar> key_stack, value_aug, summary, query_stack, num_den;
};

template <typename Scalar>
LinearForm<Scalar> linear_form(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v, double a,
                               Index m, ValueMode mode) {
  const Index d = q.cols(), dv = v.cols();
  LinearForm<Scalar> s;
  s.qp = relu(q);
  s.kp = relu(k);
  s.fq = reweight_factors<Scalar>(a, q.rows(), m);
  s.fk = reweight_factors<Scalar>(a, k.rows(), m);

  s.key_stack.resize(k.rows(), 3 * d);
  s.key_stack.leftCols(d) = s.kp;
  s.key_stack.middleCols(d, d) = s.fk.cosh.asDiagonal() * s.kp;
  s.key_stack.rightCols(d) = s.fk.sinh.asDiagonal() * s.kp;

  s.value_aug.resize(v.rows(), dv + 1);
  s.value_aug.leftCols(dv) = rectify_values(v, mode);
  s.value_aug.col(dv).setOnes();

  s.summary.noalias() = s.key_stack.transpose() * s.value_aug;

  s.query_stack.resize(q.rows(), 3 * d);
  s.query_stack.leftCols(d) = Scalar(2) * s.qp;
  s.query_stack.middleCols(d, d) = -(s.fq.cosh.asDiagonal() * s.qp);
  s.query_stack.rightCols(d) = s.fq.sinh.asDiagonal() * s.qp;

  s.num_den.noalias() = s.query_stack * s.summary;
  return s;
}

}  // namespace detail

/// Same result as cosh_attention_direct, computed by reassociation: the
/// key/value summaries K'^T V', (cosh K')^T V', (sinh K')^T V' and their
/// column sums are formed first, so the cost is O(N d^2).
template <typename Scalar>
Mat<Scalar> cosh_attention_linear(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v,
                                  double a, Index m, ValueMode mode = ValueMode::Rectified) {
  detail::check_qkv(q, k, v, "cosh_attention_linear");
  check_reweight_scale(a);
  check_position_normalizer(std::max(q.rows(), k.rows()), m);
  const auto s = detail::linear_form(q, k, v, a, m, mode);
  const Index dv = v.cols();
  Mat<Scalar> out(q.rows(), dv);
  for (Index i = 0; i < out.rows(); ++i) {
    const Scalar den = s.num_den(i, dv);
    if (den < Scalar(kDenominatorEps)) {
      out.row(i).setZero();
    } else {
      out.row(i) = s.num_den.row(i).head(dv) / den;
    }
  }
  return out;
}

template <typename Scalar>
struct AttentionGradients {
  Mat<Scalar> dq, dk, dv;
};

/// Gradients of <d_out, cosh_attention_linear(Q, K, V)> with respect to the
/// raw (pre-ReLU) inputs.
template <typename Scalar>
AttentionGradients<Scalar> cosh_attention_backward(const Mat<Scalar>& q, const Mat<Scalar>& k,
                                                   const Mat<Scalar>& v, double a, Index m,
                                                   const Mat<Scalar>& d_out,
                                                   ValueMode mode = ValueMode::Rectified) {
  detail::check_qkv(q, k, v, "cosh_attention_backward");
  check_reweight_scale(a);
  check_position_normalizer(std::max(q.rows(), k.rows()), m);
  if (d_out.rows() != q.rows() || d_out.cols() != v.cols()) {
    throw DimensionError("cosh_attention_backward: d_out " + shape_str(d_out) + " expected " +
                         shape_str(q.rows(), v.cols()));
  }
  const auto s = detail::linear_form(q, k, v, a, m, mode);
  const Index d = q.cols(), dv = v.cols();

  // O_i = num_i / den_i on rows with den_i >= eps, zero elsewhere.
  Mat<Scalar> d_num_den = Mat<Scalar>::Zero(q.rows(), dv + 1);
  for (Index i = 0; i < q.rows(); ++i) {
    const Scalar den = s.num_den(i, dv);
    if (den < Scalar(kDenominatorEps)) continue;
    const Scalar inv = Scalar(1) / den;
    d_num_den.row(i).head(dv) = d_out.row(i) * inv;
    d_num_den(i, dv) = -d_out.row(i).dot(s.num_den.row(i).head(dv)) * inv * inv;
  }

  const Mat<Scalar> d_query_stack = d_num_den * s.summary.transpose();
  const Mat<Scalar> d_summary = s.query_stack.transpose() * d_num_den;
  const Mat<Scalar> d_key_stack = s.value_aug * d_summary.transpose();
  const Mat<Scalar> d_value_aug = s.key_stack * d_summary;

  AttentionGradients<Scalar> g;
  g.dq = Scalar(2) * d_query_stack.leftCols(d) -
         s.fq.cosh.asDiagonal() * d_query_stack.middleCols(d, d) +
         s.fq.sinh.asDiagonal() * d_query_stack.rightCols(d);
  g.dq = g.dq.cwiseProduct(relu_mask(q));
  g.dk = d_key_stack.leftCols(d) + s.fk.cosh.asDiagonal() * d_key_stack.middleCols(d, d) +
         s.fk.sinh.asDiagonal() * d_key_stack.rightCols(d);
  g.dk = g.dk.cwiseProduct(relu_mask(k));
  g.dv = d_value_aug.leftCols(dv);
  if (mode == ValueMode::Rectified) g.dv = g.dv.cwiseProduct(relu_mask(v));
  return g;
}

/// Projection weights for one multi-head cosh-attention layer. Biases are
/// 1 x d row vectors.
struct AttentionParams {
  Matrix wq, wk, wv, wo;
  Matrix bq, bk, bv, bo;
  int heads = 1;
  double a = 1.1;
  // 0 selects max(N_q, N_kv) for every call.
  Index position_normalizer = 0;
  ValueMode value_mode = ValueMode::Rectified;

  Index width() const { return wq.rows(); }

  void validate() const {
    const Index d = wq.rows();
    if (heads < 1 || d % heads != 0) {
      throw ConfigError("head count " + std::to_string(heads) + " does not divide d=" +
                        std::to_string(d));
    }
    for (const Matrix* w : {&wq, &wk, &wv, &wo}) {
      if (w->rows() != d || w->cols() != d) throw ConfigError("projection must be d x d");
    }
    for (const Matrix* b : {&bq, &bk, &bv, &bo}) {
      if (b->rows() != 1 || b->cols() != d) throw ConfigError("projection bias must be 1 x d");
    }
    check_reweight_scale(a);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    visit_impl(*this, prefix, f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    visit_impl(*this, prefix, f);
  }
  template <typename Self, typename F>
  static void visit_impl(Self& s, const std::string& prefix, F& f) {
    f(prefix + ".wq", s.wq);
    f(prefix + ".bq", s.bq);
    f(prefix + ".wk", s.wk);
    f(prefix + ".bk", s.bk);
    f(prefix + ".wv", s.wv);
    f(prefix + ".bv", s.bv);
    f(prefix + ".wo", s.wo);
    f(prefix + ".bo", s.bo);
  }

  static AttentionParams identity(Index d, int heads, double a) {
    AttentionParams p;
    p.wq = p.wk = p.wv = p.wo = Matrix::Identity(d, d);
    p.bq = p.bk = p.bv = p.bo = Matrix::Zero(1, d);
    p.heads = heads;
    p.a = a;
    return p;
  }
};

/// Everything the multi-head backward pass needs from the forward pass.
struct MultiHeadCache {
  Matrix xq, xkv;
  Matrix q, k, v;  // raw projections (pre-ReLU)
  Matrix concat;   // per-head outputs side by side
  Index m = 0;
};

inline Index resolve_normalizer(const AttentionParams& p, Index nq, Index nkv) {
  const Index n = std::max(nq, nkv);
  return p.position_normalizer > 0 ? p.position_normalizer : n;
}

inline Matrix linear_cols(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

/// Concat_h(A(Q_h, K_h, V_h)) W_o + b_o with Q = X_q W_q + b_q and K, V
/// projected from X_kv. Position indices follow each input's own row order.
inline Matrix multihead_cosh_attention(const Matrix& xq, const Matrix& xkv,
                                       const AttentionParams& p, MultiHeadCache* cache = nullptr) {
  p.validate();
  if (xq.cols() != p.width() || xkv.cols() != p.width()) {
    throw DimensionError("multihead_cosh_attention: inputs " + shape_str(xq) + ", " +
                         shape_str(xkv) + " for d=" + std::to_string(p.width()));
  }
  const Index m = resolve_normalizer(p, xq.rows(), xkv.rows());
  Matrix q = linear_cols(xq, p.wq, p.bq);
  Matrix k = linear_cols(xkv, p.wk, p.bk);
  Matrix v = linear_cols(xkv, p.wv, p.bv);
  const Index dh = p.width() / p.heads;
  Matrix concat(xq.rows(), p.width());
  for (int h = 0; h < p.heads; ++h) {
    const Index c0 = h * dh;
    concat.middleCols(c0, dh) =
        cosh_attention_linear<double>(q.middleCols(c0, dh), k.middleCols(c0, dh),
                                      v.middleCols(c0, dh), p.a, m, p.value_mode);
  }
  Matrix out = linear_cols(concat, p.wo, p.bo);
  if (cache != nullptr) {
    *cache = MultiHeadCache{xq, xkv, std::move(q), std::move(k), std::move(v), std::move(concat), m};
  }
  return out;
}

struct MultiHeadGrads {
  Matrix dxq, dxkv;
};

/// Accumulates parameter gradients into `grad` (same layout as the params)
/// and returns the input gradients.
inline MultiHeadGrads multihead_backward(const AttentionParams& p, const MultiHeadCache& c,
                                         const Matrix& d_out, AttentionParams& grad) {
  grad.wo.noalias() += c.concat.transpose() * d_out;
  grad.bo += d_out.colwise().sum();
  const Matrix d_concat = d_out * p.wo.transpose();
  const Index dh = p.width() / p.heads;
  Matrix dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
  for (int h = 0; h < p.heads; ++h) {
    const Index c0 = h * dh;
    auto g = cosh_attention_backward<double>(c.q.middleCols(c0, dh), c.k.middleCols(c0, dh),
                                             c.v.middleCols(c0, dh), p.a, c.m,
                                             d_concat.middleCols(c0, dh), p.value_mode);
    dq.middleCols(c0, dh) = g.dq;
    dk.middleCols(c0, dh) = g.dk;
    dv.middleCols(c0, dh) = g.dv;
  }
  grad.wq.noalias() += c.xq.transpose() * dq;
  grad.wk.noalias() += c.xkv.transpose() * dk;
  grad.wv.noalias() += c.xkv.transpose() * dv;
  grad.bq += dq.colwise().sum();
  grad.bk += dk.colwise().sum();
  grad.bv += dv.colwise().sum();
  MultiHeadGrads out;
  out.dxq = dq * p.wq.transpose();
  out.dxkv = dk * p.wk.transpose() + dv * p.wv.transpose();
  return out;
}

}  // namespace chtr
