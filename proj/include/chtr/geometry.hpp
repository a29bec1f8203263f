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
#include <array>
#include <cmath>
#include <numbers>
#include <tuple>
#include <vector>

namespace chtr {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

/// Maps an angle to (-pi, pi].
inline double normalize_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double t = std::fmod(theta, two_pi);
  if (t <= -std::numbers::pi) t += two_pi;
  if (t > std::numbers::pi) t -= two_pi;
  return t;
}

/// Oriented box: center, extents along its local x (l), y (w), z (h), and yaw.
struct Box3D {
  double x = 0, y = 0, z = 0;
  double l = 1, w = 1, h = 1;
  double theta = 0;

  Vec3 center() const { return {x, y, z}; }
  double volume() const { return l * w * h; }
  bool valid() const {
    return l > 0 && w > 0 && h > 0 && std::isfinite(x) && std::isfinite(y) && std::isfinite(z) &&
           std::isfinite(l) && std::isfinite(w) && std::isfinite(h) && std::isfinite(theta);
  }
  friend bool operator==(const Box3D&, const Box3D&) = default;
};

struct Point {
  double px = 0, py = 0, pz = 0;
  double r = 0;  // reflectance in [0, 1]

  Vec3 position() const { return {px, py, pz}; }
  friend bool operator==(const Point&, const Point&) = default;
};

/// Bottom face counterclockwise seen from above starting at (+l/2, +w/2),
/// then the top face in the same order.
inline std::array<Vec3, 8> box_corners(const Box3D& b) {
  static constexpr std::array<std::array<double, 2>, 4> kSigns{{{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  std::array<Vec3, 8> out;
  for (int level = 0; level < 2; ++level) {
    const double dz = (level == 0 ? -0.5 : 0.5) * b.h;
    for (int k = 0; k < 4; ++k) {
      const double dx = kSigns[k][0] * 0.5 * b.l;
      const double dy = kSigns[k][1] * 0.5 * b.w;
      out[level * 4 + k] = {b.x + c * dx - s * dy, b.y + s * dx + c * dy, b.z + dz};
    }
  }
  return out;
}

/// Point in the box frame (origin at the center, axes along l, w, h).
inline Vec3 to_box_frame(const Box3D& b, const Vec3& p) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double dx = p.x - b.x, dy = p.y - b.y;
  return {c * dx + s * dy, -s * dx + c * dy, p.z - b.z};
}

inline bool box_contains(const Box3D& b, const Vec3& p) {
  const Vec3 q = to_box_frame(b, p);
  return std::abs(q.x) <= 0.5 * b.l && std::abs(q.y) <= 0.5 * b.w && std::abs(q.z) <= 0.5 * b.h;
}

inline double half_diagonal(const Box3D& b) {
  return std::sqrt(0.25 * (b.l * b.l + b.w * b.w + b.h * b.h));
}

/// Spherical RoI radius: alpha times the center-to-corner distance.
inline double roi_radius(const Box3D& b, double alpha) {
  if (!(alpha > 0)) throw ParameterError("roi_radius: alpha must be positive");
  return alpha * half_diagonal(b);
}

namespace detail {

struct P2 {
  double x, y;
};

inline double cross(P2 o, P2 a, P2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

inline double polygon_area(const std::vector<P2>& poly) {
  double acc = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const P2& a = poly[i];
    const P2& b = poly[(i + 1) % poly.size()];
    acc += a.x * b.y - a.y * b.x;
  }
  return 0.5 * std::abs(acc);
}

inline std::vector<P2> bev_footprint(const Box3D& b) {
  const auto c = box_corners(b);
  return {{c[0].x, c[0].y}, {c[1].x, c[1].y}, {c[2].x, c[2].y}, {c[3].x, c[3].y}};
}

// Sutherland-Hodgman: clip `subject` against every edge of the convex,
// counterclockwise polygon `clip`.
inline std::vector<P2> clip_convex(std::vector<P2> subject, const std::vector<P2>& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const P2 a = clip[e];
    const P2 b = clip[(e + 1) % clip.size()];
    std::vector<P2> input;
    input.swap(subject);
    for (std::size_t i = 0; i < input.size(); ++i) {
      const P2 cur = input[i];
      const P2 prev = input[(i + input.size() - 1) % input.size()];
      const double dc = cross(a, b, cur);
      const double dp = cross(a, b, prev);
      if (dc >= 0) {
        if (dp < 0) {
          const double t = dp / (dp - dc);
          subject.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
        }
        subject.push_back(cur);
      } else if (dp >= 0) {
        const double t = dp / (dp - dc);
        subject.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
      }
    }
  }
  return subject;
}

inline auto box_key(const Box3D& b) { return std::tie(b.x, b.y, b.z, b.l, b.w, b.h, b.theta); }

}  // namespace detail

/// Bird's-eye-view overlap area of two boxes.
inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto poly = detail::clip_convex(detail::bev_footprint(a), detail::bev_footprint(b));
  return poly.size() < 3 ? 0.0 : detail::polygon_area(poly);
}

struct IoUResult {
  double iou = 0;
  bool degenerate = false;  // a box had non-positive volume or non-finite fields
};

/// Rotated 3D IoU: BEV polygon intersection times the vertical overlap.
inline IoUResult iou_3d_checked(const Box3D& b1, const Box3D& b2) {
  if (!b1.valid() || !b2.valid()) return {0.0, true};
  // Canonical argument order makes the result exactly symmetric.
  const bool swap = detail::box_key(b2) < detail::box_key(b1);
  const Box3D& a = swap ? b2 : b1;
  const Box3D& b = swap ? b1 : b2;
  const double zlo = std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
  const double zhi = std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
  const double dz = zhi - zlo;
  if (dz <= 0) return {0.0, false};
  const double inter = bev_intersection_area(a, b) * dz;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0) return {0.0, true};
  return {std::clamp(inter / uni, 0.0, 1.0), false};
}

inline double iou_3d(const Box3D& b1, const Box3D& b2) { return iou_3d_checked(b1, b2).iou; }

}  // namespace chtr
