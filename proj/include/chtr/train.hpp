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

#include "chtr/model.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chtr {

/// Desk-scale training setup: a small synthetic batch and a reduced model.
struct ToyConfig {
  SceneConfig scene{.n_boxes = 3, .points_per_box = 300, .background_points = 1200};
  int scenes = 1;
  ModelConfig model{.d = 32, .heads = 4, .blocks = 3, .d_ff = 128, .hidden = 32, .a = 1.1};
  int points_per_roi = 64;
  double roi_alpha = 1.1;
  int proposals_per_box = 4;
  int negatives_per_scene = 12;
  ProposalNoise noise;
  LossConfig loss;
};

struct TrainingBatch {
  std::vector<Matrix> features;  // N x 28 per proposal
  std::vector<Box3D> proposals;
  std::vector<Box3D> matched_gt;
  std::vector<TrainTargets> targets;

  std::size_t size() const { return proposals.size(); }
};

struct TrainingError : std::runtime_error {
  TrainingError(int step, const std::string& msg)
      : std::runtime_error("step " + std::to_string(step) + ": " + msg), step(step) {}
  int step;
};

/// Ground truth with the highest IoU, nearest center when nothing overlaps.
inline std::size_t match_ground_truth(const Box3D& prop, const std::vector<Box3D>& gts) {
  if (gts.empty()) throw std::invalid_argument("match_ground_truth: no ground truth boxes");
  std::size_t best = 0;
  double best_iou = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const double iou = iou_3d(prop, gts[g]);
    const double dist = (prop.center() - gts[g].center()).norm();
    if (iou > best_iou || (iou == best_iou && dist < best_dist)) {
      best = g;
      best_iou = iou;
      best_dist = dist;
    }
  }
  return best;
}

inline void append_proposals(TrainingBatch& batch, const PointCloudScene& scene,
                             const std::vector<Box3D>& proposals, const ToyConfig& cfg,
                             std::uint64_t seed) {
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    const Box3D& prop = proposals[p];
    const Box3D& gt = scene.gt_boxes[match_ground_truth(prop, scene.gt_boxes)];
    const auto pts = sample_roi_points(scene, prop, cfg.roi_alpha, cfg.points_per_roi, seed + 7919 * p);
    batch.features.push_back(encode_proposal_features(pts, prop));
    batch.proposals.push_back(prop);
    batch.matched_gt.push_back(gt);
    batch.targets.push_back(make_targets(prop, gt, cfg.loss.thresholds));
  }
}

/// Background boxes with zero IoU against every ground truth box.
inline std::vector<Box3D> sample_negatives(const PointCloudScene& scene, const SceneConfig& sc, int count,
                                           Rng& rng) {
  std::vector<Box3D> out;
  for (int tries = 0; static_cast<int>(out.size()) < count && tries < 1000 * std::max(count, 1); ++tries) {
    Box3D b;
    b.l = detail::uniform(rng, sc.l_min, sc.l_max);
    b.w = detail::uniform(rng, sc.w_min, sc.w_max);
    b.h = detail::uniform(rng, sc.h_min, sc.h_max);
    b.x = detail::uniform(rng, sc.x_min, sc.x_max);
    b.y = detail::uniform(rng, sc.y_min, sc.y_max);
    b.z = sc.ground_z + 0.5 * b.h;
    b.theta = detail::uniform(rng, -std::numbers::pi, std::numbers::pi);
    const bool clear = std::all_of(scene.gt_boxes.begin(), scene.gt_boxes.end(),
                                   [&](const Box3D& g) { return iou_3d(b, g) == 0.0; });
    if (clear) out.push_back(b);
  }
  return out;
}

/// Noisy copies of every ground truth box (foreground) plus background boxes.
inline std::vector<Box3D> make_proposals(const PointCloudScene& scene, const ToyConfig& cfg,
                                         std::uint64_t seed) {
  std::vector<Box3D> props;
  for (std::size_t g = 0; g < scene.gt_boxes.size(); ++g) {
    for (int k = 0; k < cfg.proposals_per_box; ++k) {
      props.push_back(perturb_to_proposal(scene.gt_boxes[g], cfg.noise, seed * 1000003 + g * 131 + k));
    }
  }
  if (!scene.gt_boxes.empty() && cfg.negatives_per_scene > 0) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto neg = sample_negatives(scene, cfg.scene, cfg.negatives_per_scene, rng);
    props.insert(props.end(), neg.begin(), neg.end());
  }
  return props;
}

inline TrainingBatch make_toy_batch(const ToyConfig& cfg, std::uint64_t seed) {
  TrainingBatch batch;
  for (int s = 0; s < cfg.scenes; ++s) {
    const std::uint64_t scene_seed = seed * 7777 + static_cast<std::uint64_t>(s);
    const auto scene = generate_scene(cfg.scene, scene_seed);
    append_proposals(batch, scene, make_proposals(scene, cfg, scene_seed), cfg, scene_seed);
  }
  if (batch.size() == 0) throw ConfigError("toy batch is empty");
  return batch;
}

/// l_rcnn over the batch. When `grad` is given it receives the gradient with
/// respect to every model parameter (accumulated, so pass zeros).
inline LossBreakdown batch_loss(const RefinementModel& m, const TrainingBatch& batch, const LossConfig& cfg,
                                RefinementModel* grad = nullptr) {
  std::vector<ProposalRecord> records(batch.size());
  std::vector<RefinementCache> caches(grad ? batch.size() : 0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto out = refine_forward(m, batch.features[i], grad ? &caches[i] : nullptr);
    records[i] = {out.logit, out.residual, batch.targets[i]};
  }
  LossGradients lg;
  const auto loss = rcnn_loss(records, cfg, grad ? &lg : nullptr);
  if (grad != nullptr) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const bool touched = lg.d_logit[i] != 0.0 ||
                           std::any_of(lg.d_reg[i].begin(), lg.d_reg[i].end(), [](double v) { return v != 0.0; });
      if (touched) refine_backward(m, caches[i], lg.d_logit[i], lg.d_reg[i], *grad);
    }
  }
  return loss;
}

inline void gradient_step(RefinementModel& m, const RefinementModel& grad, double lr) {
  std::vector<const Matrix*> g;
  grad.visit([&](const std::string&, const Matrix& t) { g.push_back(&t); });
  std::size_t k = 0;
  m.visit([&](const std::string&, Matrix& t) { t -= lr * *g[k++]; });
}

struct TrainResult {
  RefinementModel model;
  std::vector<LossBreakdown> history;  // loss before each update

  double initial_loss() const { return history.front().l_rcnn; }
  double final_loss() const { return history.back().l_rcnn; }
  double reduction() const { return 1.0 - final_loss() / initial_loss(); }
};

/// Plain gradient descent with a fixed learning rate.
inline TrainResult train_on_batch(RefinementModel model, const TrainingBatch& batch, int steps, double lr,
                                  const LossConfig& cfg) {
  if (steps < 1) throw ConfigError("training needs at least one step");
  TrainResult res;
  res.history.reserve(static_cast<std::size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    RefinementModel grad = model.zeros_like();
    const auto loss = batch_loss(model, batch, cfg, &grad);
    if (!std::isfinite(loss.l_rcnn)) throw TrainingError(step, "loss is not finite");
    res.history.push_back(loss);
    gradient_step(model, grad, lr);
  }
  res.model = std::move(model);
  return res;
}

inline TrainResult train_toy(const ToyConfig& cfg, int steps, double lr, std::uint64_t seed) {
  const auto batch = make_toy_batch(cfg, seed);
  return train_on_batch(RefinementModel::init(cfg.model, seed), batch, steps, lr, cfg.loss);
}

inline void write_loss_history_csv(std::ostream& os, const std::vector<LossBreakdown>& history) {
  os << "step,l_iou,l_reg,l_rcnn\n";
  for (std::size_t s = 0; s < history.size(); ++s) {
    os << s << ',' << format_double(history[s].l_iou) << ',' << format_double(history[s].l_reg) << ','
       << format_double(history[s].l_rcnn) << '\n';
  }
}

}  // namespace chtr
