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

#include "chtr/attention.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace chtr {

inline constexpr double kLayerNormEps = 1e-5;

// y = x W + b, W is in x out, b is 1 x out.
struct LinearParams {
  Matrix w, b;

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
    f(prefix + ".w", s.w);
    f(prefix + ".b", s.b);
  }
};

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
inline LinearParams init_linear(Index in, Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearParams p;
  p.w = random_uniform(in, out, -bound, bound, rng);
  p.b = random_uniform(1, out, -bound, bound, rng);
  return p;
}

inline Matrix linear_forward(const LinearParams& p, const Matrix& x) {
  if (x.cols() != p.w.rows()) {
    throw DimensionError("linear: input " + shape_str(x) + " for weight " + shape_str(p.w));
  }
  return linear_cols(x, p.w, p.b);
}

inline Matrix linear_backward(const LinearParams& p, const Matrix& x, const Matrix& dy,
                              LinearParams& grad) {
  grad.w.noalias() += x.transpose() * dy;
  grad.b += dy.colwise().sum();
  return dy * p.w.transpose();
}

/// Two linear layers with a ReLU between them. Used for the point embedding,
/// the block feed-forward network, and both detection heads.
struct MlpParams {
  LinearParams l1, l2;

  Index in_width() const { return l1.w.rows(); }
  Index out_width() const { return l2.w.cols(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    l1.visit(prefix + ".l1", f);
    l2.visit(prefix + ".l2", f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    l1.visit(prefix + ".l1", f);
    l2.visit(prefix + ".l2", f);
  }
};

using EmbeddingParams = MlpParams;
using FfnParams = MlpParams;

inline MlpParams init_mlp(Index in, Index hidden, Index out, Rng& rng) {
  MlpParams p;
  p.l1 = init_linear(in, hidden, rng);
  p.l2 = init_linear(hidden, out, rng);
  return p;
}

struct MlpCache {
  Matrix x, pre;  // input, first-layer output before ReLU
};

inline Matrix mlp_forward(const MlpParams& p, const Matrix& x, MlpCache* cache = nullptr) {
  Matrix pre = linear_forward(p.l1, x);
  Matrix out = linear_forward(p.l2, relu(pre));
  if (cache != nullptr) *cache = MlpCache{x, std::move(pre)};
  return out;
}

inline Matrix mlp_backward(const MlpParams& p, const MlpCache& c, const Matrix& dy, MlpParams& grad) {
  const Matrix hidden = relu(c.pre);
  Matrix dh = linear_backward(p.l2, hidden, dy, grad.l2);
  dh.array() *= relu_mask(c.pre).array();
  return linear_backward(p.l1, c.x, dh, grad.l1);
}

/// Maps N x 28 proposal-aware point features to N x d embeddings.
inline Matrix embed_point_features(const Matrix& features, const EmbeddingParams& p,
                                   MlpCache* cache = nullptr) {
  if (features.cols() != p.in_width()) {
    throw DimensionError("embed_point_features: expected " + std::to_string(p.in_width()) +
                         " columns, got " + std::to_string(features.cols()));
  }
  return mlp_forward(p, features, cache);
}

/// Layer normalization over channels with learned per-channel scale and shift.
struct LayerNormParams {
  Matrix gamma, beta;  // 1 x d

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }

  static LayerNormParams unit(Index d) { return {Matrix::Ones(1, d), Matrix::Zero(1, d)}; }
};

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

inline Matrix layer_norm(const Matrix& x, const LayerNormParams& p, LayerNormCache* cache = nullptr) {
  const Index d = x.cols();
  const Vector mean = x.rowwise().mean();
  Matrix xhat = x.colwise() - mean;
  const Vector var = xhat.rowwise().squaredNorm() / static_cast<double>(d);
  const Vector inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
  xhat = inv_std.asDiagonal() * xhat;
  Matrix y = xhat.array().rowwise() * p.gamma.row(0).array();
  y.rowwise() += p.beta.row(0);
  if (cache != nullptr) *cache = LayerNormCache{std::move(xhat), inv_std};
  return y;
}

inline Matrix layer_norm_backward(const LayerNormParams& p, const LayerNormCache& c, const Matrix& dy,
                                  LayerNormParams& grad) {
  grad.gamma += dy.cwiseProduct(c.xhat).colwise().sum();
  grad.beta += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * p.gamma.row(0).array();
  const Vector mean_dxhat = dxhat.rowwise().mean();
  const Vector mean_dxhat_xhat = dxhat.cwiseProduct(c.xhat).rowwise().mean();
  Matrix dx = dxhat.colwise() - mean_dxhat;
  dx -= mean_dxhat_xhat.asDiagonal() * c.xhat;
  return c.inv_std.asDiagonal() * dx;
}

/// Post-norm transformer block: Y1 = Norm(X_q + MHA(X_q, X_kv)),
/// Y2 = Norm(Y1 + FFN(Y1)). The encoder uses X_q = X_kv.
struct BlockParams {
  AttentionParams attn;
  FfnParams ffn;
  LayerNormParams norm1, norm2;

  Index width() const { return attn.width(); }

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
    s.attn.visit(prefix + ".attn", f);
    s.norm1.visit(prefix + ".norm1", f);
    s.ffn.visit(prefix + ".ffn", f);
    s.norm2.visit(prefix + ".norm2", f);
  }
};

using EncoderBlockParams = BlockParams;

inline BlockParams init_block(Index d, int heads, Index d_ff, double a, Rng& rng) {
  BlockParams p;
  auto wq = init_linear(d, d, rng);
  auto wk = init_linear(d, d, rng);
  auto wv = init_linear(d, d, rng);
  auto wo = init_linear(d, d, rng);
  p.attn.wq = wq.w;
  p.attn.bq = wq.b;
  p.attn.wk = wk.w;
  p.attn.bk = wk.b;
  p.attn.wv = wv.w;
  p.attn.bv = wv.b;
  p.attn.wo = wo.w;
  p.attn.bo = wo.b;
  p.attn.heads = heads;
  p.attn.a = a;
  p.ffn = init_mlp(d, d_ff, d, rng);
  p.norm1 = LayerNormParams::unit(d);
  p.norm2 = LayerNormParams::unit(d);
  return p;
}

struct BlockCache {
  MultiHeadCache attn;
  LayerNormCache norm1, norm2;
  MlpCache ffn;
};

inline Matrix block_forward(const Matrix& xq, const Matrix& xkv, const BlockParams& p,
                            BlockCache* cache = nullptr) {
  const Matrix attn = multihead_cosh_attention(xq, xkv, p.attn, cache ? &cache->attn : nullptr);
  const Matrix y1 = layer_norm(xq + attn, p.norm1, cache ? &cache->norm1 : nullptr);
  const Matrix ff = mlp_forward(p.ffn, y1, cache ? &cache->ffn : nullptr);
  return layer_norm(y1 + ff, p.norm2, cache ? &cache->norm2 : nullptr);
}

inline MultiHeadGrads block_backward(const BlockParams& p, const BlockCache& c, const Matrix& dy,
                                     BlockParams& grad) {
  const Matrix d_sum2 = layer_norm_backward(p.norm2, c.norm2, dy, grad.norm2);
  const Matrix dy1 = d_sum2 + mlp_backward(p.ffn, c.ffn, d_sum2, grad.ffn);
  const Matrix d_sum1 = layer_norm_backward(p.norm1, c.norm1, dy1, grad.norm1);
  MultiHeadGrads g = multihead_backward(p.attn, c.attn, d_sum1, grad.attn);
  g.dxq += d_sum1;
  return g;
}

inline Matrix encoder_block(const Matrix& x, const BlockParams& p, BlockCache* cache = nullptr) {
  return block_forward(x, x, p, cache);
}

inline Matrix encoder_block_backward(const BlockParams& p, const BlockCache& c, const Matrix& dy,
                                     BlockParams& grad) {
  auto g = block_backward(p, c, dy, grad);
  return g.dxq + g.dxkv;
}

inline Matrix encoder_stack(const Matrix& x, const std::vector<BlockParams>& blocks,
                            std::vector<BlockCache>* caches = nullptr) {
  if (caches != nullptr) caches->assign(blocks.size(), BlockCache{});
  Matrix h = x;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    h = encoder_block(h, blocks[b], caches ? &(*caches)[b] : nullptr);
  }
  return h;
}

inline Matrix encoder_stack_backward(const std::vector<BlockParams>& blocks,
                                     const std::vector<BlockCache>& caches, const Matrix& dy,
                                     std::vector<BlockParams>& grads) {
  Matrix d = dy;
  for (std::size_t b = blocks.size(); b-- > 0;) {
    d = encoder_block_backward(blocks[b], caches[b], d, grads[b]);
  }
  return d;
}

/// Single zero-initialized query that cross-attends over the encoded points.
/// The query sits at position 1; M is the key count.
struct DecoderParams {
  Matrix query;  // 1 x d
  BlockParams block;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".query", query);
    block.visit(prefix + ".block", f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".query", query);
    block.visit(prefix + ".block", f);
  }
};

inline Matrix decode_global(const Matrix& encoded, const DecoderParams& p, BlockCache* cache = nullptr) {
  if (p.query.rows() != 1) throw DimensionError("decoder query must have exactly one row");
  return block_forward(p.query, encoded, p.block, cache);
}

inline Matrix decode_global_backward(const DecoderParams& p, const BlockCache& c, const Matrix& dy,
                                     DecoderParams& grad) {
  auto g = block_backward(p.block, c, dy, grad.block);
  grad.query += g.dxq;
  return g.dxkv;
}

}  // namespace chtr
