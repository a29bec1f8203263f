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

#include "chtr/losses.hpp"
#include "chtr/scene.hpp"
#include "chtr/transformer.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace chtr {

struct ModelConfig {
  Index d = 64;
  int heads = 4;
  int blocks = 3;
  Index d_ff = 0;    // 0 selects 4 d
  Index hidden = 0;  // embedding hidden width, 0 selects d
  double a = 1.1;

  Index ffn_width() const { return d_ff > 0 ? d_ff : 4 * d; }
  Index embed_hidden() const { return hidden > 0 ? hidden : d; }

  void validate() const {
    if (d < 1 || heads < 1 || d % heads != 0) {
      throw ConfigError("model: head count " + std::to_string(heads) + " must divide d=" +
                        std::to_string(d));
    }
    if (blocks < 0) throw ConfigError("model: negative block count");
    if (ffn_width() < d) throw ConfigError("model: d_ff must be >= d");
    check_reweight_scale(a);
  }
};

/// Confidence head (d -> d_ff -> 1 logit) and box residual head
/// (d -> d_ff -> 7), with separate parameters.
struct HeadParams {
  MlpParams conf;
  MlpParams reg;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    conf.visit(prefix + ".conf", f);
    reg.visit(prefix + ".reg", f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    conf.visit(prefix + ".conf", f);
    reg.visit(prefix + ".reg", f);
  }
};

struct RefinementOutput {
  double logit = 0;
  double confidence = 0.5;
  Residual residual{};
};

struct RefinementCache {
  MlpCache embed;
  std::vector<BlockCache> encoder;
  BlockCache decoder;
  MlpCache conf, reg;
};

/// Point embedding, encoder stack, single-query decoder and detection heads.
struct RefinementModel {
  ModelConfig config;
  EmbeddingParams embed;
  std::vector<BlockParams> encoder;
  DecoderParams decoder;
  HeadParams heads;

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }
  template <typename Self, typename F>
  static void visit_impl(Self& s, F& f) {
    s.embed.visit("embed", f);
    for (std::size_t b = 0; b < s.encoder.size(); ++b) s.encoder[b].visit("encoder." + std::to_string(b), f);
    s.decoder.visit("decoder", f);
    s.heads.visit("heads", f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  /// Same structure with every tensor zeroed; used as a gradient accumulator.
  RefinementModel zeros_like() const {
    RefinementModel g = *this;
    g.visit([](const std::string&, Matrix& m) { m.setZero(); });
    return g;
  }

  void set_reweight_scale(double a) {
    check_reweight_scale(a);
    config.a = a;
    for (auto& b : encoder) b.attn.a = a;
    decoder.block.attn.a = a;
  }

  static RefinementModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    RefinementModel m;
    m.config = cfg;
    m.embed = init_mlp(kProposalFeatureWidth, cfg.embed_hidden(), cfg.d, rng);
    for (int b = 0; b < cfg.blocks; ++b) {
      m.encoder.push_back(init_block(cfg.d, cfg.heads, cfg.ffn_width(), cfg.a, rng));
    }
    m.decoder.query = Matrix::Zero(1, cfg.d);
    m.decoder.block = init_block(cfg.d, cfg.heads, cfg.ffn_width(), cfg.a, rng);
    m.heads.conf = init_mlp(cfg.d, cfg.ffn_width(), 1, rng);
    m.heads.reg = init_mlp(cfg.d, cfg.ffn_width(), 7, rng);
    return m;
  }
};

inline Matrix global_representation(const RefinementModel& m, const Matrix& features,
                                    RefinementCache* cache = nullptr) {
  const Matrix x = embed_point_features(features, m.embed, cache ? &cache->embed : nullptr);
  const Matrix enc = encoder_stack(x, m.encoder, cache ? &cache->encoder : nullptr);
  return decode_global(enc, m.decoder, cache ? &cache->decoder : nullptr);
}

/// Refines one proposal from its N x 28 point features.
inline RefinementOutput refine_forward(const RefinementModel& m, const Matrix& features,
                                       RefinementCache* cache = nullptr) {
  const Matrix g = global_representation(m, features, cache);
  const Matrix logit = mlp_forward(m.heads.conf, g, cache ? &cache->conf : nullptr);
  const Matrix reg = mlp_forward(m.heads.reg, g, cache ? &cache->reg : nullptr);
  RefinementOutput out;
  out.logit = logit(0, 0);
  out.confidence = sigmoid(out.logit);
  for (int r = 0; r < 7; ++r) out.residual[r] = reg(0, r);
  return out;
}

/// Backpropagates d(loss)/d(logit) and d(loss)/d(residual) through the whole
/// model, accumulating into `grad`.
inline void refine_backward(const RefinementModel& m, const RefinementCache& c, double d_logit,
                            const Residual& d_residual, RefinementModel& grad) {
  Matrix dl(1, 1);
  dl(0, 0) = d_logit;
  Matrix dr(1, 7);
  for (int r = 0; r < 7; ++r) dr(0, r) = d_residual[r];
  Matrix dg = mlp_backward(m.heads.conf, c.conf, dl, grad.heads.conf);
  dg += mlp_backward(m.heads.reg, c.reg, dr, grad.heads.reg);
  const Matrix d_enc = decode_global_backward(m.decoder, c.decoder, dg, grad.decoder);
  const Matrix dx = encoder_stack_backward(m.encoder, c.encoder, d_enc, grad.encoder);
  mlp_backward(m.embed, c.embed, dx, grad.embed);
}

// ---------------------------------------------------------------------------
// Binary parameter file, little-endian:
//   char[4] "CHTR", u32 version, u32 d, u32 heads, u32 blocks,
//   u32 d_ff, u32 hidden, f64 a,
//   then every tensor from RefinementModel::visit as row-major f64.

inline constexpr char kModelMagic[4] = {'C', 'H', 'T', 'R'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("model file truncated");
  return v;
}

}  // namespace detail

inline void write_model(std::ostream& os, const RefinementModel& m) {
  os.write(kModelMagic, 4);
  detail::put<std::uint32_t>(os, kModelVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.config.d));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.config.heads));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.encoder.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.config.ffn_width()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.config.embed_hidden()));
  detail::put<double>(os, m.config.a);
  m.visit([&](const std::string&, const Matrix& t) {
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  });
}

inline RefinementModel read_model(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kModelMagic, 4) != 0) throw IoError("not a model file (bad magic)");
  if (detail::get<std::uint32_t>(is) != kModelVersion) throw IoError("unsupported model file version");
  ModelConfig cfg;
  cfg.d = detail::get<std::uint32_t>(is);
  cfg.heads = static_cast<int>(detail::get<std::uint32_t>(is));
  cfg.blocks = static_cast<int>(detail::get<std::uint32_t>(is));
  cfg.d_ff = detail::get<std::uint32_t>(is);
  cfg.hidden = detail::get<std::uint32_t>(is);
  cfg.a = detail::get<double>(is);
  RefinementModel m = RefinementModel::init(cfg, 0);
  m.visit([&](const std::string&, Matrix& t) {
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw IoError("model file truncated");
  });
  return m;
}

inline void save_model(const std::string& path, const RefinementModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file '" + path + "'");
  write_model(out, m);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline RefinementModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  return read_model(in);
}

}  // namespace chtr
