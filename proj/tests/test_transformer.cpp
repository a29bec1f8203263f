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

#include "chtr/model.hpp"
#include "chtr/transformer.hpp"
#include "chtr/verify.hpp"

#include <gtest/gtest.h>

namespace chtr {
namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

TEST(LayerNorm, NormalizesEachRow) {
  Rng rng(0);
  const Matrix x = random_normal(7, 12, rng, 3.0).array() + 5.0;
  const Matrix y = layer_norm(x, LayerNormParams::unit(12));
  for (Index i = 0; i < y.rows(); ++i) {
    EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(i).squaredNorm() / 12.0, 1.0, 1e-5);
  }
}

TEST(LayerNorm, ConstantRowMapsToShift) {
  LayerNormParams p = LayerNormParams::unit(4);
  p.beta << 1, 2, 3, 4;
  const Matrix y = layer_norm(Matrix::Constant(2, 4, 7.0), p);
  for (Index i = 0; i < 2; ++i) EXPECT_LT((y.row(i) - p.beta.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(1);
  LayerNormParams p{random_normal(1, 5, rng), random_normal(1, 5, rng)};
  Matrix x = random_normal(3, 5, rng);
  const Matrix dy = random_normal(3, 5, rng);
  LayerNormCache c;
  layer_norm(x, p, &c);
  LayerNormParams g{Matrix::Zero(1, 5), Matrix::Zero(1, 5)};
  const Matrix dx = layer_norm_backward(p, c, dy, g);
  auto loss = [&] { return dy.cwiseProduct(layer_norm(x, p)).sum(); };
  GradCheckResult r;
  r.absorb(central_difference_check("x", x, dx, loss, 1e-6));
  r.absorb(central_difference_check("gamma", p.gamma, g.gamma, loss, 1e-6));
  r.absorb(central_difference_check("beta", p.beta, g.beta, loss, 1e-6));
  EXPECT_LT(r.max_rel_err, 1e-6) << r.worst_tensor;
}

TEST(Mlp, ForwardIsTwoLayerRelu) {
  Rng rng(2);
  const MlpParams p = init_mlp(3, 5, 2, rng);
  const Matrix x = random_normal(4, 3, rng);
  Matrix h = x * p.l1.w;
  h.rowwise() += p.l1.b.row(0);
  Matrix expect = relu(h) * p.l2.w;
  expect.rowwise() += p.l2.b.row(0);
  EXPECT_LT(max_abs_diff(mlp_forward(p, x), expect), 1e-14);
}

TEST(Mlp, InitWithinFanInBound) {
  Rng rng(3);
  const LinearParams p = init_linear(16, 8, rng);
  EXPECT_LE(p.w.cwiseAbs().maxCoeff(), 0.25);
  EXPECT_LE(p.b.cwiseAbs().maxCoeff(), 0.25);
  EXPECT_EQ(p.w.rows(), 16);
  EXPECT_EQ(p.b.cols(), 8);
}

TEST(EncoderBlock, PreservesShape) {
  Rng rng(4);
  const BlockParams p = init_block(16, 4, 64, 1.1, rng);
  const Matrix x = random_normal(10, 16, rng);
  const Matrix y = encoder_block(x, p);
  EXPECT_EQ(y.rows(), 10);
  EXPECT_EQ(y.cols(), 16);
  EXPECT_TRUE(y.allFinite());
}

TEST(EncoderBlock, MatchesManualComposition) {
  Rng rng(5);
  const BlockParams p = init_block(8, 2, 32, 0.7, rng);
  const Matrix x = random_normal(6, 8, rng);
  const Matrix y1 = layer_norm(x + multihead_cosh_attention(x, x, p.attn), p.norm1);
  const Matrix expect = layer_norm(y1 + mlp_forward(p.ffn, y1), p.norm2);
  EXPECT_LT(max_abs_diff(encoder_block(x, p), expect), 1e-13);
}

TEST(EncoderStack, DeterministicForSeed) {
  const ModelConfig cfg{.d = 16, .heads = 4, .blocks = 3};
  const RefinementModel a = RefinementModel::init(cfg, 42), b = RefinementModel::init(cfg, 42);
  Rng rng(6);
  const Matrix x = random_normal(12, 16, rng);
  EXPECT_EQ(encoder_stack(x, a.encoder), encoder_stack(x, b.encoder));
  EXPECT_NE(encoder_stack(x, a.encoder), encoder_stack(x, RefinementModel::init(cfg, 43).encoder));
}

TEST(EncoderStack, BlocksHaveIndependentParameters) {
  const RefinementModel m = RefinementModel::init({.d = 8, .heads = 2, .blocks = 3}, 0);
  EXPECT_NE(m.encoder[0].attn.wq, m.encoder[1].attn.wq);
  EXPECT_NE(m.encoder[1].attn.wq, m.encoder[2].attn.wq);
}

TEST(Permutation, EquivarianceAndInvarianceAtZeroScale) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto rep = verify_permutation(seed);
    for (const auto& c : rep.checks) EXPECT_TRUE(c.pass) << c.name << " " << c.value;
  }
}

TEST(Permutation, PositionalScaleBreaksEquivariance) {
  ModelConfig cfg{.d = 16, .heads = 4, .blocks = 1, .a = kMaxReweightScale};
  const RefinementModel m = RefinementModel::init(cfg, 0);
  Rng rng(1);
  const Matrix x = random_normal(16, 16, rng);
  const auto perm = random_permutation(16, rng);
  const double err = max_abs_diff(encoder_stack(permute_rows(x, perm), m.encoder),
                                  permute_rows(encoder_stack(x, m.encoder), perm));
  EXPECT_GT(err, 1e-6);
}

TEST(Permutation, ReversalKeepsPositionalDistances) {
  // Reversal preserves every |i - j|.
  ModelConfig cfg{.d = 16, .heads = 4, .blocks = 2, .a = kMaxReweightScale};
  const RefinementModel m = RefinementModel::init(cfg, 0);
  Rng rng(1);
  const Matrix x = random_normal(16, 16, rng);
  std::vector<Index> rev(16);
  for (Index i = 0; i < 16; ++i) rev[static_cast<std::size_t>(i)] = 15 - i;
  const double err = max_abs_diff(encoder_stack(permute_rows(x, rev), m.encoder),
                                  permute_rows(encoder_stack(x, m.encoder), rev));
  EXPECT_LT(err, 1e-10);
}

TEST(Decoder, OutputIsSingleRow) {
  const RefinementModel m = RefinementModel::init({.d = 16, .heads = 4, .blocks = 2}, 0);
  Rng rng(2);
  const Matrix g = decode_global(random_normal(20, 16, rng), m.decoder);
  EXPECT_EQ(g.rows(), 1);
  EXPECT_EQ(g.cols(), 16);
}

TEST(Decoder, ZeroQueryWithoutBiasGivesZeroAttention) {
  Rng rng(3);
  BlockParams p = init_block(8, 2, 32, 1.1, rng);
  p.attn.bq.setZero();
  p.attn.bo.setZero();
  const Matrix enc = random_normal(10, 8, rng);
  const Matrix out = multihead_cosh_attention(Matrix::Zero(1, 8), enc, p.attn);
  EXPECT_TRUE(out.isZero(0));
  const Matrix y = decode_global(enc, DecoderParams{Matrix::Zero(1, 8), p});
  const Matrix expect = layer_norm(layer_norm(Matrix::Zero(1, 8), p.norm1) +
                                       mlp_forward(p.ffn, layer_norm(Matrix::Zero(1, 8), p.norm1)),
                                   p.norm2);
  EXPECT_LT(max_abs_diff(y, expect), 1e-13);
}

TEST(Decoder, ZeroQueryWithBiasAttendsToInput) {
  const RefinementModel m = RefinementModel::init({.d = 8, .heads = 2, .blocks = 1}, 7);
  Rng rng(4);
  const Matrix g1 = decode_global(random_normal(10, 8, rng), m.decoder);
  const Matrix g2 = decode_global(random_normal(10, 8, rng), m.decoder);
  EXPECT_GT(max_abs_diff(g1, g2), 1e-6);
}

TEST(Decoder, RejectsMultiRowQuery) {
  RefinementModel m = RefinementModel::init({.d = 8, .heads = 2, .blocks = 1}, 0);
  m.decoder.query = Matrix::Zero(2, 8);
  EXPECT_THROW(decode_global(Matrix::Zero(3, 8), m.decoder), DimensionError);
}

TEST(ModelConfig, Validation) {
  EXPECT_THROW((ModelConfig{.d = 10, .heads = 4}.validate()), ConfigError);
  EXPECT_THROW((ModelConfig{.d = 8, .heads = 2, .a = 1.5}.validate()), ParameterError);
  EXPECT_NO_THROW((ModelConfig{.d = 8, .heads = 2}.validate()));
  EXPECT_EQ((ModelConfig{.d = 8}.ffn_width()), 32);
  EXPECT_EQ((ModelConfig{.d = 8}.embed_hidden()), 8);
}

TEST(Model, ForwardGivesProbabilityAndResidual) {
  const RefinementModel m = RefinementModel::init({.d = 16, .heads = 4, .blocks = 2}, 1);
  Rng rng(5);
  const auto out = refine_forward(m, random_normal(32, kProposalFeatureWidth, rng));
  EXPECT_GT(out.confidence, 0.0);
  EXPECT_LT(out.confidence, 1.0);
  EXPECT_DOUBLE_EQ(out.confidence, sigmoid(out.logit));
  for (double r : out.residual) EXPECT_TRUE(std::isfinite(r));
}

TEST(Model, SetReweightScaleUpdatesEveryBlock) {
  RefinementModel m = RefinementModel::init({.d = 8, .heads = 2, .blocks = 3}, 0);
  m.set_reweight_scale(0.3);
  for (const auto& b : m.encoder) EXPECT_EQ(b.attn.a, 0.3);
  EXPECT_EQ(m.decoder.block.attn.a, 0.3);
  EXPECT_THROW(m.set_reweight_scale(2.0), ParameterError);
}

TEST(Model, ParameterCountMatchesArchitecture) {
  const ModelConfig cfg{.d = 8, .heads = 2, .blocks = 2, .d_ff = 16, .hidden = 4};
  const RefinementModel m = RefinementModel::init(cfg, 0);
  const std::size_t embed = 28 * 4 + 4 + 4 * 8 + 8;
  const std::size_t block = 4 * (8 * 8 + 8) + (8 * 16 + 16 + 16 * 8 + 8) + 4 * 8;
  const std::size_t heads = (8 * 16 + 16 + 16 * 1 + 1) + (8 * 16 + 16 + 16 * 7 + 7);
  EXPECT_EQ(m.parameter_count(), embed + 3 * block + 8 + heads);
}

TEST(Model, FileRoundTrip) {
  const RefinementModel m = RefinementModel::init({.d = 8, .heads = 2, .blocks = 2, .a = 0.9}, 3);
  std::stringstream ss;
  write_model(ss, m);
  const RefinementModel back = read_model(ss);
  EXPECT_EQ(back.config.a, 0.9);
  std::vector<Matrix> want, got;
  m.visit([&](const std::string&, const Matrix& t) { want.push_back(t); });
  back.visit([&](const std::string&, const Matrix& t) { got.push_back(t); });
  ASSERT_EQ(want.size(), got.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(want[i], got[i]);
}

TEST(Model, FileRejectsGarbage) {
  std::stringstream bad("NOPE1234");
  EXPECT_THROW(read_model(bad), IoError);
  const RefinementModel m = RefinementModel::init({.d = 8, .heads = 2, .blocks = 1}, 0);
  std::stringstream ss;
  write_model(ss, m);
  std::string bytes = ss.str();
  bytes.resize(bytes.size() / 2);
  std::stringstream truncated(bytes);
  EXPECT_THROW(read_model(truncated), IoError);
}

}  // namespace
}  // namespace chtr
