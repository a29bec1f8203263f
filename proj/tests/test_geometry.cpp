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

#include "chtr/geometry.hpp"
#include "chtr/oracles.hpp"
#include "chtr/verify.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace chtr {
namespace {

constexpr double kPi = std::numbers::pi;

TEST(NormalizeAngle, MapsIntoHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(normalize_angle(0.0), 0.0);
  EXPECT_DOUBLE_EQ(normalize_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(normalize_angle(-kPi), kPi);
  EXPECT_NEAR(normalize_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  EXPECT_NEAR(normalize_angle(7.0), 7.0 - 2 * kPi, 1e-15);
  for (double t = -20; t < 20; t += 0.37) {
    const double n = normalize_angle(t);
    EXPECT_GT(n, -kPi);
    EXPECT_LE(n, kPi);
    EXPECT_NEAR(std::cos(n), std::cos(t), 1e-12);
    EXPECT_NEAR(std::sin(n), std::sin(t), 1e-12);
  }
}

TEST(BoxCorners, AxisAligned) {
  const auto c = box_corners(Box3D{1, 2, 3, 4, 2, 1, 0});
  EXPECT_EQ(c[0], (Vec3{3, 3, 2.5}));
  EXPECT_EQ(c[1], (Vec3{-1, 3, 2.5}));
  EXPECT_EQ(c[2], (Vec3{-1, 1, 2.5}));
  EXPECT_EQ(c[3], (Vec3{3, 1, 2.5}));
  EXPECT_EQ(c[4], (Vec3{3, 3, 3.5}));
}

TEST(BoxCorners, QuarterTurnRotation) {
  const auto c = box_corners(Box3D{0, 0, 0, 4, 2, 1, kPi / 4});
  const double want[4][2] = {{0.7071067811865476, 2.1213203435596424},
                             {-2.1213203435596424, -0.7071067811865476},
                             {-0.7071067811865476, -2.1213203435596424},
                             {2.1213203435596424, 0.7071067811865476}};
  for (int k = 0; k < 4; ++k) {
    for (int level = 0; level < 2; ++level) {
      const Vec3& p = c[level * 4 + k];
      EXPECT_NEAR(p.x, want[k][0], 1e-12);
      EXPECT_NEAR(p.y, want[k][1], 1e-12);
      EXPECT_DOUBLE_EQ(p.z, level == 0 ? -0.5 : 0.5);
    }
  }
}

TEST(BoxCorners, BottomFaceIsCounterClockwise) {
  Rng rng(0);
  for (int t = 0; t < 50; ++t) {
    const auto c = box_corners(random_box(rng));
    double area2 = 0;
    for (int k = 0; k < 4; ++k) area2 += c[k].x * c[(k + 1) % 4].y - c[(k + 1) % 4].x * c[k].y;
    EXPECT_GT(area2, 0.0);
  }
}

TEST(BoxContains, CenterAndCorners) {
  const Box3D b{1, -1, 0, 4, 2, 2, 0.6};
  EXPECT_TRUE(box_contains(b, b.center()));
  for (const Vec3& c : box_corners(b)) {
    EXPECT_TRUE(box_contains(b, b.center() + 0.999 * (c - b.center())));
    EXPECT_FALSE(box_contains(b, b.center() + 1.001 * (c - b.center())));
  }
}

TEST(RoiRadius, KnownValue) {
  const Box3D b{0, 0, 0, 4, 2, 2, 0.3};
  EXPECT_NEAR(roi_radius(b, 1.1), 2.694438717061496, 1e-14);
  EXPECT_THROW(roi_radius(b, 0.0), ParameterError);
  EXPECT_THROW(roi_radius(b, -1.0), ParameterError);
}

TEST(Iou, AnalyticCases) {
  const Box3D unit{0, 0, 0, 1, 1, 1, 0};
  EXPECT_NEAR(iou_3d(unit, unit), 1.0, 1e-12);
  EXPECT_EQ(iou_3d(unit, Box3D{100, 0, 0, 1, 1, 1, 0}), 0.0);
  EXPECT_NEAR(iou_3d(unit, Box3D{0.5, 0, 0, 1, 1, 1, 0}), 1.0 / 3.0, 1e-12);
  // Vertical half overlap.
  EXPECT_NEAR(iou_3d(unit, Box3D{0, 0, 0.5, 1, 1, 1, 0}), 1.0 / 3.0, 1e-12);
  // Nested: inner volume over outer volume.
  EXPECT_NEAR(iou_3d(Box3D{0, 0, 0, 2, 2, 2, 0}, unit), 1.0 / 8.0, 1e-12);
}

TEST(Iou, SquareRotatedByQuarterTurn) {
  // Unit squares, one turned by 45 degrees: intersection is a regular octagon
  // with area 2 (sqrt(2) - 1).
  const double inter = 2.0 * (std::sqrt(2.0) - 1.0);
  EXPECT_NEAR(iou_3d(Box3D{0, 0, 0, 1, 1, 1, 0}, Box3D{0, 0, 0, 1, 1, 1, kPi / 4}), inter / (2.0 - inter),
              1e-12);
}

TEST(Iou, HalfTurnIsSameBox) {
  const Box3D b{3, 4, 1, 4, 2, 1.5, 0.4};
  Box3D flipped = b;
  flipped.theta = normalize_angle(b.theta + kPi);
  EXPECT_NEAR(iou_3d(b, flipped), 1.0, 1e-12);
}

TEST(Iou, TouchingBoxesAreZero) {
  const Box3D a{0, 0, 0, 1, 1, 1, 0};
  EXPECT_NEAR(iou_3d(a, Box3D{1, 0, 0, 1, 1, 1, 0}), 0.0, 1e-12);
  EXPECT_NEAR(iou_3d(a, Box3D{0, 0, 1, 1, 1, 1, 0}), 0.0, 1e-12);
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    const Box3D a = random_box(rng);
    const Box3D b = t % 2 == 0 ? overlapping_box(a, rng) : random_box(rng);
    const double ab = iou_3d(a, b);
    EXPECT_EQ(ab, iou_3d(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0 + 1e-12);
  }
}

TEST(Iou, InvariantUnderRigidMotionOfBoth) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const Box3D a = random_box(rng);
    const Box3D b = overlapping_box(a, rng);
    const double phi = std::uniform_real_distribution<double>(-kPi, kPi)(rng);
    const double c = std::cos(phi), s = std::sin(phi);
    auto move = [&](Box3D x) {
      const double px = x.x, py = x.y;
      x.x = c * px - s * py + 3.0;
      x.y = s * px + c * py - 2.0;
      x.z += 0.7;
      x.theta = normalize_angle(x.theta + phi);
      return x;
    };
    EXPECT_NEAR(iou_3d(move(a), move(b)), iou_3d(a, b), 1e-9);
  }
}

TEST(Iou, DegenerateBoxesAreFlagged) {
  const Box3D a{0, 0, 0, 1, 1, 1, 0};
  const auto flat = iou_3d_checked(a, Box3D{0, 0, 0, 0, 1, 1, 0});
  EXPECT_TRUE(flat.degenerate);
  EXPECT_EQ(flat.iou, 0.0);
  EXPECT_TRUE(iou_3d_checked(Box3D{0, 0, 0, 1, -1, 1, 0}, a).degenerate);
  EXPECT_TRUE(iou_3d_checked(Box3D{std::nan(""), 0, 0, 1, 1, 1, 0}, a).degenerate);
  EXPECT_FALSE(iou_3d_checked(a, a).degenerate);
}

TEST(Iou, MatchesMonteCarloOracle) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const Box3D a = random_box(rng);
    const Box3D b = overlapping_box(a, rng);
    EXPECT_NEAR(iou_3d(a, b), oracle::iou_monte_carlo(a, b, 400000, 50 + t), 0.006) << t;
  }
}

TEST(Iou, BevIntersectionOfIdenticalRotatedBoxesIsArea) {
  const Box3D b{1, 1, 0, 3, 1.5, 1, 1.0};
  EXPECT_NEAR(bev_intersection_area(b, b), 4.5, 1e-12);
}

}  // namespace
}  // namespace chtr
