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

#include "chtr/scene.hpp"
#include "chtr/verify.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>
#include <set>
#include <sstream>

namespace chtr {
namespace {

Box3D grown(Box3D b, double eps) {
  b.l += eps;
  b.w += eps;
  b.h += eps;
  return b;
}

TEST(GenerateScene, CountsAndPlacement) {
  const SceneConfig cfg;
  const PointCloudScene s = generate_scene(cfg, 0);
  ASSERT_EQ(s.gt_boxes.size(), 4u);
  ASSERT_EQ(s.points.size(), 4u * 400u + 1500u);
  for (const Box3D& b : s.gt_boxes) {
    EXPECT_NEAR(b.z - 0.5 * b.h, cfg.ground_z, 1e-12);
    EXPECT_GE(b.l, cfg.l_min);
    EXPECT_LE(b.l, cfg.l_max);
    EXPECT_GT(b.theta, -std::numbers::pi);
    EXPECT_LE(b.theta, std::numbers::pi);
  }
  for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < s.gt_boxes.size(); ++j) EXPECT_EQ(iou_3d(s.gt_boxes[i], s.gt_boxes[j]), 0.0);
  }
}

TEST(GenerateScene, ObjectPointsInsideBackgroundOutside) {
  const SceneConfig cfg;
  const PointCloudScene s = generate_scene(cfg, 1);
  for (std::size_t b = 0; b < s.gt_boxes.size(); ++b) {
    const Box3D box = grown(s.gt_boxes[b], 1e-9);
    for (int k = 0; k < cfg.points_per_box; ++k) {
      const Point& p = s.points[b * cfg.points_per_box + static_cast<std::size_t>(k)];
      EXPECT_TRUE(box_contains(box, p.position()));
      EXPECT_GE(p.r, 0.0);
      EXPECT_LE(p.r, 1.0);
    }
  }
  for (std::size_t i = s.gt_boxes.size() * cfg.points_per_box; i < s.points.size(); ++i) {
    for (const Box3D& b : s.gt_boxes) EXPECT_FALSE(box_contains(b, s.points[i].position()));
  }
}

TEST(GenerateScene, DeterministicPerSeed) {
  EXPECT_EQ(generate_scene({}, 5), generate_scene({}, 5));
  EXPECT_NE(generate_scene({}, 5), generate_scene({}, 6));
}

TEST(GenerateScene, ImpossiblePlacementThrows) {
  SceneConfig cfg;
  cfg.n_boxes = 50;
  cfg.x_max = 5;
  cfg.y_min = -2.5;
  cfg.y_max = 2.5;
  cfg.max_attempts = 20;
  EXPECT_THROW(generate_scene(cfg, 0), GenerationError);
  SceneConfig bad;
  bad.x_max = bad.x_min;
  EXPECT_THROW(generate_scene(bad, 0), ConfigError);
}

TEST(PerturbToProposal, RespectsNoiseBoundsAndFloor) {
  const Box3D gt{10, 2, -0.8, 4, 1.8, 1.6, 0.3};
  const ProposalNoise noise;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Box3D p = perturb_to_proposal(gt, noise, seed);
    EXPECT_LE(std::abs(p.x - gt.x), noise.center);
    EXPECT_LE(std::abs(std::log(p.l / gt.l)), noise.log_extent + 1e-12);
    EXPECT_LE(std::abs(normalize_angle(p.theta - gt.theta)), noise.yaw + 1e-12);
    EXPECT_GE(iou_3d(p, gt), noise.iou_floor);
  }
}

TEST(PerturbToProposal, ZeroNoiseIsIdentity) {
  const Box3D gt{1, 2, 3, 4, 2, 1, -0.5};
  EXPECT_EQ(perturb_to_proposal(gt, ProposalNoise{0, 0, 0, 0.3, 10}, 0), gt);
}

TEST(PerturbToProposal, RejectsInvalidNoise) {
  const Box3D gt{0, 0, 0, 4, 2, 1, 0};
  EXPECT_THROW(perturb_to_proposal(gt, ProposalNoise{.yaw = 1.6}, 0), ParameterError);
  EXPECT_THROW(perturb_to_proposal(gt, ProposalNoise{.center = -1}, 0), ParameterError);
  EXPECT_THROW(perturb_to_proposal(gt, ProposalNoise{.center = 10, .iou_floor = 0.99, .max_tries = 3}, 0),
               ParameterError);
}

PointCloudScene grid_scene() {
  PointCloudScene s;
  for (int i = -5; i <= 5; ++i) {
    for (int j = -5; j <= 5; ++j) s.points.push_back({0.3 * i, 0.3 * j, 0.0, 0.01 * (i + 5)});
  }
  return s;
}

TEST(SampleRoiPoints, WithoutReplacementWhenEnough) {
  const PointCloudScene s = grid_scene();
  const Box3D b{0, 0, 0, 2, 2, 2, 0};
  const double radius = roi_radius(b, 1.0);
  const auto pts = sample_roi_points(s, b, 1.0, 20, 3);
  ASSERT_EQ(pts.size(), 20u);
  std::set<std::pair<double, double>> seen;
  for (const Point& p : pts) {
    EXPECT_LE(p.position().norm(), radius);
    seen.insert({p.px, p.py});
  }
  EXPECT_EQ(seen.size(), 20u);
}

TEST(SampleRoiPoints, WithReplacementWhenScarce) {
  PointCloudScene s;
  s.points = {{0.1, 0, 0, 0.5}, {-0.1, 0, 0, 0.6}, {50, 0, 0, 0.7}};
  const auto pts = sample_roi_points(s, Box3D{0, 0, 0, 1, 1, 1, 0}, 1.1, 16, 0);
  ASSERT_EQ(pts.size(), 16u);
  for (const Point& p : pts) EXPECT_LT(std::abs(p.px), 0.2);
}

TEST(SampleRoiPoints, EmptySpherePadsWithCenter) {
  PointCloudScene s;
  s.points = {{50, 0, 0, 0.7}};
  const Box3D b{1, 2, 3, 1, 1, 1, 0};
  const auto pts = sample_roi_points(s, b, 1.1, 4, 0);
  ASSERT_EQ(pts.size(), 4u);
  for (const Point& p : pts) EXPECT_EQ(p, (Point{1, 2, 3, 0}));
  EXPECT_THROW(sample_roi_points(s, b, 1.1, 0, 0), ParameterError);
}

TEST(SampleRoiPoints, DeterministicPerSeed) {
  const PointCloudScene s = grid_scene();
  const Box3D b{0, 0, 0, 2, 2, 2, 0};
  EXPECT_EQ(sample_roi_points(s, b, 1.0, 10, 7), sample_roi_points(s, b, 1.0, 10, 7));
}

TEST(ProposalFeatures, LayoutMatchesOffsets) {
  const Box3D b{1, 2, 3, 4, 2, 1, 0.7};
  const std::vector<Point> pts{{1.5, 2.5, 3.2, 0.4}, {0, 0, 0, 0.9}};
  const Matrix f = encode_proposal_features(pts, b);
  ASSERT_EQ(f.cols(), kProposalFeatureWidth);
  ASSERT_EQ(f.rows(), 2);
  const auto corners = box_corners(b);
  for (Index i = 0; i < 2; ++i) {
    const Vec3 p = pts[static_cast<std::size_t>(i)].position();
    EXPECT_DOUBLE_EQ(f(i, 0), p.x - b.x);
    EXPECT_DOUBLE_EQ(f(i, 2), p.z - b.z);
    for (int j = 0; j < 8; ++j) {
      EXPECT_DOUBLE_EQ(f(i, 3 + 3 * j), p.x - corners[j].x);
      EXPECT_DOUBLE_EQ(f(i, 4 + 3 * j), p.y - corners[j].y);
      EXPECT_DOUBLE_EQ(f(i, 5 + 3 * j), p.z - corners[j].z);
    }
    EXPECT_DOUBLE_EQ(f(i, 27), pts[static_cast<std::size_t>(i)].r);
  }
}

TEST(ProposalFeatures, TranslationInvariant) {
  Box3D b{1, 2, 3, 4, 2, 1, 0.7};
  std::vector<Point> pts{{1.5, 2.5, 3.2, 0.4}, {0.2, 1.0, 2.0, 0.9}};
  const Matrix f = encode_proposal_features(pts, b);
  b.x += 10;
  b.y -= 3;
  b.z += 1;
  for (Point& p : pts) {
    p.px += 10;
    p.py -= 3;
    p.pz += 1;
  }
  EXPECT_LT((encode_proposal_features(pts, b) - f).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ProposalFeatures, RotationEquivariant) {
  Box3D b{0, 0, 0, 4, 2, 1, 0.2};
  std::vector<Point> pts{{1.5, 0.5, 0.2, 0.4}, {-0.7, 0.3, -0.1, 0.9}};
  const Matrix f = encode_proposal_features(pts, b);
  const double phi = 0.9, c = std::cos(phi), s = std::sin(phi);
  b.theta += phi;
  for (Point& p : pts) {
    const double x = p.px, y = p.py;
    p.px = c * x - s * y;
    p.py = s * x + c * y;
  }
  const Matrix g = encode_proposal_features(pts, b);
  for (Index i = 0; i < 2; ++i) {
    for (int j = 0; j < 9; ++j) {
      EXPECT_NEAR(g(i, 3 * j), c * f(i, 3 * j) - s * f(i, 3 * j + 1), 1e-12);
      EXPECT_NEAR(g(i, 3 * j + 1), s * f(i, 3 * j) + c * f(i, 3 * j + 1), 1e-12);
      EXPECT_NEAR(g(i, 3 * j + 2), f(i, 3 * j + 2), 1e-12);
    }
  }
}

TEST(SceneIo, RoundTripIsExact) {
  const PointCloudScene s = generate_scene({.n_boxes = 2, .points_per_box = 20, .background_points = 30}, 9);
  std::stringstream ss;
  write_scene(ss, s);
  EXPECT_EQ(read_scene(ss), s);
}

TEST(SceneIo, FileRoundTrip) {
  const PointCloudScene s = generate_scene({.n_boxes = 1, .points_per_box = 5, .background_points = 5}, 2);
  const auto path = std::filesystem::temp_directory_path() / "chtr_scene_io_test.txt";
  save_scene(path.string(), s);
  EXPECT_EQ(load_scene(path.string()), s);
  std::filesystem::remove(path);
  EXPECT_THROW(load_scene(path.string()), IoError);
}

int parse_error_line(const std::string& text) {
  std::istringstream in(text);
  try {
    read_scene(in);
  } catch (const SceneParseError& e) {
    return e.line;
  }
  return -1;
}

TEST(SceneIo, MalformedInputReportsLine) {
  EXPECT_EQ(parse_error_line(""), 1);
  EXPECT_EQ(parse_error_line("hello\n"), 1);
  EXPECT_EQ(parse_error_line("scene v1 x 0\n"), 1);
  EXPECT_EQ(parse_error_line("scene v1 2 0\nP 1 2 3 0.5\nP 1 2 oops 0.5\n"), 3);
  EXPECT_EQ(parse_error_line("scene v1 2 0\nP 1 2 3 0.5\n"), 3);
  EXPECT_EQ(parse_error_line("scene v1 0 1\nB 0 0 0 1 1 1\n"), 2);
  EXPECT_EQ(parse_error_line("scene v1 0 1\nB 0 0 0 1 -1 1 0\n"), 2);
  EXPECT_EQ(parse_error_line("scene v1 1 0\n\nP 0 0 0 nan\n"), 3);
  EXPECT_EQ(parse_error_line("scene v1 0 0\nP 0 0 0 0\n"), 2);
  EXPECT_EQ(parse_error_line("scene v1 1 0\nP 0 0 0 0\n\n"), -1);
}

}  // namespace
}  // namespace chtr
