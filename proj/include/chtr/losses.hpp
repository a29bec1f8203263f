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

#include "chtr/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace chtr {

/// Box residual in (x, y, z, l, w, h, theta) order.
using Residual = std::array<double, 7>;

struct TargetConfig {
  double alpha_f = 0.75;  // foreground IoU threshold
  double alpha_b = 0.25;  // background IoU threshold
  double alpha_r = 0.55;  // regression gate
};

/// Clamped linear ramp from alpha_b (0) to alpha_f (1).
inline double confidence_target(double iou, double alpha_f = 0.75, double alpha_b = 0.25) {
  if (!(alpha_b < alpha_f) || alpha_b < 0 || alpha_f > 1) {
    throw ParameterError("confidence_target: need 0 <= alpha_b < alpha_f <= 1");
  }
  return std::min(1.0, std::max(0.0, (iou - alpha_b) / (alpha_f - alpha_b)));
}

inline double bottom_diagonal(const Box3D& b) { return std::sqrt(b.l * b.l + b.w * b.w); }

inline Residual regression_targets(const Box3D& prop, const Box3D& gt) {
  if (!(prop.l > 0 && prop.w > 0 && prop.h > 0) || !(gt.l > 0 && gt.w > 0 && gt.h > 0)) {
    throw ParameterError("regression_targets: box extents must be positive");
  }
  const double diag = bottom_diagonal(prop);
  return {(gt.x - prop.x) / diag,     (gt.y - prop.y) / diag,     (gt.z - prop.z) / prop.h,
          std::log(gt.l / prop.l),    std::log(gt.w / prop.w),    std::log(gt.h / prop.h),
          gt.theta - prop.theta};
}

/// Inverse of regression_targets.
inline Box3D decode_regression(const Box3D& prop, const Residual& r) {
  const double diag = bottom_diagonal(prop);
  Box3D b;
  b.x = prop.x + r[0] * diag;
  b.y = prop.y + r[1] * diag;
  b.z = prop.z + r[2] * prop.h;
  b.l = prop.l * std::exp(r[3]);
  b.w = prop.w * std::exp(r[4]);
  b.h = prop.h * std::exp(r[5]);
  b.theta = normalize_angle(prop.theta + r[6]);
  return b;
}

struct TrainTargets {
  double c_t = 0;
  Residual reg_t{};
  double iou = 0;
};

inline TrainTargets make_targets(const Box3D& prop, const Box3D& gt, const TargetConfig& cfg = {}) {
  TrainTargets t;
  t.iou = iou_3d(prop, gt);
  t.c_t = confidence_target(t.iou, cfg.alpha_f, cfg.alpha_b);
  t.reg_t = regression_targets(prop, gt);
  return t;
}

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Binary cross-entropy on a probability. Terms with a zero coefficient are
/// dropped so exact 0/1 predictions of 0/1 targets cost nothing.
inline double confidence_loss(double c_pred, double c_t) {
  constexpr double tiny = 1e-300;
  double loss = 0;
  if (c_t > 0) loss -= c_t * std::log(std::max(c_pred, tiny));
  if (c_t < 1) loss -= (1 - c_t) * std::log(std::max(1 - c_pred, tiny));
  return loss;
}

/// The same loss written in terms of the logit z, with c = sigmoid(z):
/// max(z, 0) - z c_t + log(1 + exp(-|z|)).
inline double confidence_loss_logit(double z, double c_t) {
  return std::max(z, 0.0) - z * c_t + std::log1p(std::exp(-std::abs(z)));
}

inline double confidence_loss_logit_grad(double z, double c_t) { return sigmoid(z) - c_t; }

inline double smooth_l1(double u) {
  const double a = std::abs(u);
  return a < 1.0 ? 0.5 * u * u : a - 0.5;
}

inline double smooth_l1_grad(double u) {
  if (std::abs(u) < 1.0) return u;
  return u > 0 ? 1.0 : -1.0;
}

/// Sum of smooth-L1 over the seven components, or 0 below the IoU gate.
inline double regression_loss(const Residual& pred, const Residual& target, double iou,
                              double alpha_r = 0.55) {
  if (iou < alpha_r) return 0.0;
  double acc = 0;
  for (std::size_t r = 0; r < pred.size(); ++r) acc += smooth_l1(pred[r] - target[r]);
  return acc;
}

struct LossBreakdown {
  double l_iou = 0;
  double l_reg = 0;
  double l_rcnn = 0;
  bool gated = false;  // at least one proposal contributed to l_reg
};

struct ProposalRecord {
  double logit = 0;
  Residual reg_pred{};
  TrainTargets target;
};

struct LossConfig {
  TargetConfig thresholds;
  int conf_samples = 128;
  int reg_samples = 64;
  std::uint64_t seed = 0;
};

struct LossGradients {
  std::vector<double> d_logit;
  std::vector<Residual> d_reg;
};

namespace detail {

// First `keep` entries of a seeded shuffle, or everything when it fits.
inline std::vector<std::size_t> subsample(std::vector<std::size_t> idx, int keep, Rng& rng) {
  if (keep < 0 || idx.size() <= static_cast<std::size_t>(keep)) return idx;
  for (std::size_t k = 0; k < static_cast<std::size_t>(keep); ++k) {
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(k, idx.size() - 1)(rng);
    std::swap(idx[k], idx[pick]);
  }
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Mean confidence loss over a random subsample of the batch plus mean
/// regression loss over a subsample of the proposals that pass the gate.
inline LossBreakdown rcnn_loss(std::span<const ProposalRecord> batch, const LossConfig& cfg = {},
                               LossGradients* grads = nullptr) {
  if (batch.empty()) throw std::invalid_argument("rcnn_loss: empty batch");
  Rng rng(cfg.seed);
  std::vector<std::size_t> all(batch.size());
  std::iota(all.begin(), all.end(), 0);
  const auto conf_idx = detail::subsample(all, cfg.conf_samples, rng);
  std::vector<std::size_t> gated;
  for (std::size_t i : all) {
    if (batch[i].target.iou >= cfg.thresholds.alpha_r) gated.push_back(i);
  }
  const auto reg_idx = detail::subsample(gated, cfg.reg_samples, rng);

  if (grads != nullptr) {
    grads->d_logit.assign(batch.size(), 0.0);
    grads->d_reg.assign(batch.size(), Residual{});
  }
  LossBreakdown out;
  if (!conf_idx.empty()) {
    const double inv = 1.0 / static_cast<double>(conf_idx.size());
    for (std::size_t i : conf_idx) {
      out.l_iou += confidence_loss_logit(batch[i].logit, batch[i].target.c_t) * inv;
      if (grads != nullptr) {
        grads->d_logit[i] = confidence_loss_logit_grad(batch[i].logit, batch[i].target.c_t) * inv;
      }
    }
  }
  if (!reg_idx.empty()) {
    out.gated = true;
    const double inv = 1.0 / static_cast<double>(reg_idx.size());
    for (std::size_t i : reg_idx) {
      const auto& rec = batch[i];
      out.l_reg += regression_loss(rec.reg_pred, rec.target.reg_t, rec.target.iou,
                                   cfg.thresholds.alpha_r) * inv;
      if (grads != nullptr) {
        for (std::size_t r = 0; r < 7; ++r) {
          grads->d_reg[i][r] = smooth_l1_grad(rec.reg_pred[r] - rec.target.reg_t[r]) * inv;
        }
      }
    }
  }
  out.l_rcnn = out.l_iou + out.l_reg;
  return out;
}

}  // namespace chtr
