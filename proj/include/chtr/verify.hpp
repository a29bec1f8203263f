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

#include "chtr/oracles.hpp"
#include "chtr/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace chtr {

struct CheckResult {
  std::string name;
  double value = 0;      // measured error (or the quantity being bounded)
  double threshold = 0;  // pass iff value < threshold, unless noted in detail
  bool pass = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
  }
  double worst() const {
    double w = 0;
    for (const auto& c : checks) w = std::max(w, c.value);
    return w;
  }
};

// ---------------------------------------------------------------------------
// Finite differences

/// |a - f| / max(|a|, |f|), or the plain difference when both are below 1e-8.
inline double gradient_relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return scale < 1e-8 ? diff : diff / scale;
}

struct GradCheckResult {
  double max_rel_err = 0;
  std::string worst_tensor;
  Index worst_index = -1;
  std::size_t checked = 0;

  void absorb(const GradCheckResult& o) {
    if (o.max_rel_err > max_rel_err || worst_index < 0) {
      max_rel_err = o.max_rel_err;
      worst_tensor = o.worst_tensor;
      worst_index = o.worst_index;
    }
    checked += o.checked;
  }
};

/// Compares `analytic` with central differences of `loss` with respect to
/// every entry of `param` (perturbed in place and restored). With several
/// steps each entry keeps its smallest error, so a step that is too small for
/// a tiny gradient or large enough to cross a ReLU kink does not dominate.
template <typename LossFn>
GradCheckResult central_difference_check(const std::string& name, Matrix& param, const Matrix& analytic,
                                         LossFn&& loss, std::span<const double> steps) {
  GradCheckResult r;
  r.worst_tensor = name;
  for (Index i = 0; i < param.size(); ++i) {
    double& x = param.data()[i];
    const double saved = x;
    double err = std::numeric_limits<double>::infinity();
    for (double h : steps) {
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      err = std::min(err, gradient_relative_error(analytic.data()[i], (up - down) / (2 * h)));
    }
    if (err > r.max_rel_err || r.worst_index < 0) {
      r.max_rel_err = err;
      r.worst_index = i;
    }
    ++r.checked;
  }
  return r;
}

template <typename LossFn>
GradCheckResult central_difference_check(const std::string& name, Matrix& param, const Matrix& analytic,
                                         LossFn&& loss, double h) {
  const double steps[] = {h};
  return central_difference_check(name, param, analytic, std::forward<LossFn>(loss), std::span<const double>(steps));
}

inline GradCheckResult gradcheck_attention(Index n, Index d, double a, std::uint64_t seed, double h = 1e-5,
                                           bool zero_upstream = false, ValueMode mode = ValueMode::Rectified) {
  Rng rng(seed);
  Matrix q = random_normal(n, d, rng), k = random_normal(n, d, rng), v = random_normal(n, d, rng);
  const Matrix d_out = zero_upstream ? Matrix::Zero(n, d) : random_normal(n, d, rng);
  const auto g = cosh_attention_backward<double>(q, k, v, a, n, d_out, mode);
  auto loss = [&] { return d_out.cwiseProduct(cosh_attention_linear<double>(q, k, v, a, n, mode)).sum(); };
  GradCheckResult r;
  r.absorb(central_difference_check("dQ", q, g.dq, loss, h));
  r.absorb(central_difference_check("dK", k, g.dk, loss, h));
  r.absorb(central_difference_check("dV", v, g.dv, loss, h));
  return r;
}

/// Micro model used by the whole-model gradient check.
inline ToyConfig micro_toy_config() {
  ToyConfig cfg;
  cfg.scene = SceneConfig{.n_boxes = 2, .points_per_box = 60, .background_points = 200,
                          .x_min = 0.0, .x_max = 20.0, .y_min = -10.0, .y_max = 10.0};
  cfg.model = ModelConfig{.d = 8, .heads = 2, .blocks = 1, .d_ff = 32, .hidden = 8, .a = 1.1};
  cfg.points_per_roi = 8;
  cfg.proposals_per_box = 2;
  cfg.negatives_per_scene = 2;
  return cfg;
}

/// Gradient of l_rcnn with respect to every parameter tensor of a micro
/// model, against central differences. The decoder query is randomized so
/// its gradient path is exercised.
inline GradCheckResult gradcheck_model(const ToyConfig& cfg, std::uint64_t seed,
                                       std::vector<double> steps = {1e-5, 1e-6}) {
  const auto batch = make_toy_batch(cfg, seed);
  RefinementModel model = RefinementModel::init(cfg.model, seed);
  Rng rng(seed + 17);
  model.decoder.query = random_normal(1, cfg.model.d, rng, 0.5);
  RefinementModel grad = model.zeros_like();
  batch_loss(model, batch, cfg.loss, &grad);
  std::vector<std::pair<std::string, Matrix*>> params;
  std::vector<const Matrix*> grads;
  model.visit([&](const std::string& name, Matrix& t) { params.emplace_back(name, &t); });
  grad.visit([&](const std::string&, const Matrix& t) { grads.push_back(&t); });
  auto loss = [&] { return batch_loss(model, batch, cfg.loss).l_rcnn; };
  GradCheckResult r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    r.absorb(central_difference_check(params[p].first, *params[p].second, *grads[p], loss,
                                      std::span<const double>(steps)));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Verification suites

struct EquivalenceGrid {
  std::vector<Index> sizes{1, 2, 3, 8, 64};
  std::vector<Index> widths{1, 4, 16};
  std::vector<int> heads{1, 2, 4};
  std::vector<double> scales{0.0, 0.5, 1.1, kMaxReweightScale};
  int seeds = 10;
};

/// Linear vs direct cosh-attention, per head, one check per grid cell.
inline SuiteReport verify_equivalence(const EquivalenceGrid& grid, std::uint64_t seed, double tol = 1e-6) {
  SuiteReport rep{"equivalence", {}};
  for (Index n : grid.sizes) {
    for (Index d : grid.widths) {
      for (int h : grid.heads) {
        if (d % h != 0) continue;
        for (double a : grid.scales) {
          double worst = 0;
          std::uint64_t worst_seed = seed;
          for (int s = 0; s < grid.seeds; ++s) {
            const std::uint64_t case_seed = seed + static_cast<std::uint64_t>(s);
            Rng rng(case_seed * 1315423911ULL + static_cast<std::uint64_t>(n * 131 + d * 17 + h));
            const Matrix q = random_normal(n, d, rng), k = random_normal(n, d, rng), v = random_normal(n, d, rng);
            const Index dh = d / h;
            for (int head = 0; head < h; ++head) {
              const Matrix qh = q.middleCols(head * dh, dh), kh = k.middleCols(head * dh, dh),
                           vh = v.middleCols(head * dh, dh);
              const double err =
                  (cosh_attention_linear(qh, kh, vh, a, n) - cosh_attention_direct(qh, kh, vh, a, n))
                      .cwiseAbs()
                      .maxCoeff();
              if (err > worst) {
                worst = err;
                worst_seed = case_seed;
              }
            }
          }
          CheckResult c;
          c.name = "N=" + std::to_string(n) + " d=" + std::to_string(d) + " H=" + std::to_string(h) +
                   " a=" + format_double(a);
          c.value = worst;
          c.threshold = tol;
          c.pass = worst < tol;
          c.detail = "worst seed " + std::to_string(worst_seed);
          rep.checks.push_back(std::move(c));
        }
      }
    }
  }
  return rep;
}

/// Random (a, i, j, M) with a <= 1.3169 and |i - j| <= M keep the weight
/// non-negative; a = 1.35 at |i - j| = M does not.
inline SuiteReport verify_nonnegativity(int samples, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> ua(0.0, kMaxReweightScale);
  std::uniform_int_distribution<long long> um(1, 100000);
  double min_w = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    const long long m = um(rng);
    const long long i = std::uniform_int_distribution<long long>(0, m)(rng);
    const long long j = std::uniform_int_distribution<long long>(0, m)(rng);
    const double a = s == 0 ? kMaxReweightScale : ua(rng);
    min_w = std::min(min_w, reweight_unchecked(a, i, j, m));
  }
  // Include the extreme |i - j| = M at the bound.
  min_w = std::min(min_w, reweight_unchecked(kMaxReweightScale, 1000, 0, 1000));
  SuiteReport rep{"nonnegativity", {}};
  rep.checks.push_back({"min reweight over samples", min_w, -1e-12, min_w >= -1e-12,
                        "pass iff value >= threshold"});
  const double beyond = reweight_unchecked(1.35, 1000, 0, 1000);
  rep.checks.push_back({"reweight(1.35, M, 0, M)", beyond, 0.0, beyond < 0.0, "pass iff value < 0"});
  return rep;
}

inline Box3D random_box(Rng& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  return Box3D{u(-10, 10), u(-10, 10), u(-2, 2), u(0.5, 5), u(0.5, 3), u(0.5, 2.5), u(-3.14, 3.14)};
}

/// A second box overlapping the first (perturbed copy).
inline Box3D overlapping_box(const Box3D& b, Rng& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  Box3D o = b;
  o.x += u(-0.6, 0.6) * b.l;
  o.y += u(-0.6, 0.6) * b.w;
  o.z += u(-0.6, 0.6) * b.h;
  o.l *= std::exp(u(-0.4, 0.4));
  o.w *= std::exp(u(-0.4, 0.4));
  o.h *= std::exp(u(-0.4, 0.4));
  o.theta = normalize_angle(o.theta + u(-1.0, 1.0));
  return o;
}

inline SuiteReport verify_iou_oracle(int pairs, std::int64_t samples, std::uint64_t seed, double tol = 0.005) {
  SuiteReport rep{"iou_oracle", {}};
  const Box3D unit{0, 0, 0, 1, 1, 1, 0};
  Box3D shifted = unit;
  shifted.x = 0.5;
  Box3D far = unit;
  far.x = 100;
  const double e_same = std::abs(iou_3d(unit, unit) - 1.0);
  const double e_far = std::abs(iou_3d(unit, far));
  const double e_half = std::abs(iou_3d(unit, shifted) - 1.0 / 3.0);
  rep.checks.push_back({"identical boxes -> 1", e_same, 1e-12, e_same < 1e-12, ""});
  rep.checks.push_back({"disjoint boxes -> 0", e_far, 1e-12, e_far < 1e-12, ""});
  rep.checks.push_back({"half-offset unit cubes -> 1/3", e_half, 1e-12, e_half < 1e-12, ""});
  Rng rng(seed);
  double worst = 0;
  int worst_pair = -1;
  for (int p = 0; p < pairs; ++p) {
    const Box3D a = random_box(rng);
    const Box3D b = overlapping_box(a, rng);
    const double err = std::abs(iou_3d(a, b) - oracle::iou_monte_carlo(a, b, samples, seed * 1000 + p));
    if (err > worst || worst_pair < 0) {
      worst = err;
      worst_pair = p;
    }
  }
  rep.checks.push_back({"rotated IoU vs Monte Carlo (" + std::to_string(pairs) + " pairs)", worst, tol, worst < tol,
                        "worst pair " + std::to_string(worst_pair) + " seed " + std::to_string(seed)});
  return rep;
}

inline SuiteReport verify_roundtrip(int pairs, std::uint64_t seed, double tol = 1e-9) {
  Rng rng(seed);
  double worst = 0;
  for (int p = 0; p < pairs; ++p) {
    const Box3D prop = random_box(rng);
    const Box3D gt = random_box(rng);
    const Box3D back = decode_regression(prop, regression_targets(prop, gt));
    const double dt = std::abs(normalize_angle(back.theta - gt.theta));
    for (double e : {std::abs(back.x - gt.x), std::abs(back.y - gt.y), std::abs(back.z - gt.z),
                     std::abs(back.l - gt.l), std::abs(back.w - gt.w), std::abs(back.h - gt.h), dt}) {
      worst = std::max(worst, e);
    }
  }
  SuiteReport rep{"roundtrip", {}};
  rep.checks.push_back({"decode(regression_targets) field error (" + std::to_string(pairs) + " pairs)", worst, tol,
                        worst < tol, "seed " + std::to_string(seed)});
  return rep;
}

inline SuiteReport verify_confidence_targets() {
  SuiteReport rep{"confidence_target", {}};
  const double ious[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  const double want[] = {0.0, 0.0, 0.5, 1.0, 1.0};
  for (int k = 0; k < 5; ++k) {
    const double err = std::abs(confidence_target(ious[k]) - want[k]);
    rep.checks.push_back({"iou=" + format_double(ious[k]), err, 1e-15, err == 0.0, "exact"});
  }
  return rep;
}

inline std::vector<Index> random_permutation(Index n, Rng& rng) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

inline Matrix permute_rows(const Matrix& x, const std::vector<Index>& perm) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

/// At a = 0 the encoder stack is row-permutation equivariant and the decoder
/// output is permutation invariant.
inline SuiteReport verify_permutation(std::uint64_t seed, double tol = 1e-9, Index n = 32) {
  ModelConfig cfg{.d = 16, .heads = 4, .blocks = 3, .a = 0.0};
  RefinementModel m = RefinementModel::init(cfg, seed);
  Rng rng(seed + 1);
  m.decoder.query = random_normal(1, cfg.d, rng, 0.5);
  const Matrix x = random_normal(n, cfg.d, rng);
  const auto perm = random_permutation(n, rng);
  const Matrix enc = encoder_stack(x, m.encoder);
  const Matrix enc_p = encoder_stack(permute_rows(x, perm), m.encoder);
  const double e_enc = (enc_p - permute_rows(enc, perm)).cwiseAbs().maxCoeff();
  const double e_dec =
      (decode_global(enc, m.decoder) - decode_global(permute_rows(enc, perm), m.decoder)).cwiseAbs().maxCoeff();
  SuiteReport rep{"permutation", {}};
  rep.checks.push_back({"encoder equivariance (a=0)", e_enc, tol, e_enc < tol, "seed " + std::to_string(seed)});
  rep.checks.push_back({"decoder invariance (a=0)", e_dec, tol, e_dec < tol, "seed " + std::to_string(seed)});
  return rep;
}

enum class GradcheckScale { Micro, Default };

/// Kernel-level and whole-model finite-difference checks.
inline SuiteReport gradcheck_suite(std::uint64_t seed, GradcheckScale scale, double kernel_tol = 1e-4,
                                   double model_tol = 1e-3) {
  SuiteReport rep{"gradcheck", {}};
  auto add = [&](const std::string& name, const GradCheckResult& r, double tol) {
    rep.checks.push_back({name, r.max_rel_err, tol, r.max_rel_err < tol,
                          "worst " + r.worst_tensor + "[" + std::to_string(r.worst_index) + "] over " +
                              std::to_string(r.checked) + " entries"});
  };
  add("kernel N=6 d=4 a=1.1", gradcheck_attention(6, 4, 1.1, seed), kernel_tol);
  if (scale == GradcheckScale::Default) {
    add("kernel N=16 d=8 a=1.3169", gradcheck_attention(16, 8, kMaxReweightScale, seed + 1), kernel_tol);
    add("kernel N=32 d=4 a=0", gradcheck_attention(32, 4, 0.0, seed + 2), kernel_tol);
    add("kernel N=12 d=4 a=0.5 raw V", gradcheck_attention(12, 4, 0.5, seed + 3, 1e-5, false, ValueMode::Raw),
        kernel_tol);
  }
  add("whole micro model (N=8 d=8 H=2)", gradcheck_model(micro_toy_config(), seed), model_tol);
  return rep;
}

}  // namespace chtr
