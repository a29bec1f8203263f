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
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace chtr {

struct PointCloudScene {
  std::vector<Point> points;
  std::vector<Box3D> gt_boxes;

  friend bool operator==(const PointCloudScene&, const PointCloudScene&) = default;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SceneConfig {
  int n_boxes = 4;
  int points_per_box = 400;
  int background_points = 1500;
  double surface_fraction = 0.3;  // share of box points placed near the faces
  double x_min = 0.0, x_max = 40.0;
  double y_min = -20.0, y_max = 20.0;
  double ground_z = -1.6;
  double l_min = 3.2, l_max = 4.8;
  double w_min = 1.5, w_max = 2.0;
  double h_min = 1.4, h_max = 1.8;
  double min_gap = 0.5;  // BEV clearance between bounding circles
  int max_attempts = 1000;
};

namespace detail {

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 from_box_frame(const Box3D& b, const Vec3& q) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  return {b.x + c * q.x - s * q.y, b.y + s * q.x + c * q.y, b.z + q.z};
}

// Uniform in the box, or within a thin shell inside one of the faces.
inline Vec3 sample_in_box(const Box3D& b, bool near_surface, Rng& rng) {
  const double hl = 0.5 * b.l, hw = 0.5 * b.w, hh = 0.5 * b.h;
  Vec3 q{uniform(rng, -hl, hl), uniform(rng, -hw, hw), uniform(rng, -hh, hh)};
  if (near_surface) {
    const int face = std::uniform_int_distribution<int>(0, 5)(rng);
    const double shell = 0.02;
    const double t = uniform(rng, 1.0 - shell, 1.0);
    switch (face) {
      case 0: q.x = t * hl; break;
      case 1: q.x = -t * hl; break;
      case 2: q.y = t * hw; break;
      case 3: q.y = -t * hw; break;
      case 4: q.z = t * hh; break;
      default: q.z = -t * hh; break;
    }
  }
  return from_box_frame(b, q);
}

}  // namespace detail

/// Places non-overlapping boxes on the ground plane, fills each with points,
/// and scatters background points outside every box.
inline PointCloudScene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  if (cfg.n_boxes < 0 || cfg.points_per_box < 0 || cfg.background_points < 0 ||
      cfg.x_max <= cfg.x_min || cfg.y_max <= cfg.y_min) {
    throw ConfigError("generate_scene: invalid configuration");
  }
  Rng rng(seed);
  PointCloudScene scene;
  for (int n = 0; n < cfg.n_boxes; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      Box3D b;
      b.l = detail::uniform(rng, cfg.l_min, cfg.l_max);
      b.w = detail::uniform(rng, cfg.w_min, cfg.w_max);
      b.h = detail::uniform(rng, cfg.h_min, cfg.h_max);
      b.x = detail::uniform(rng, cfg.x_min, cfg.x_max);
      b.y = detail::uniform(rng, cfg.y_min, cfg.y_max);
      b.z = cfg.ground_z + 0.5 * b.h;
      b.theta = normalize_angle(detail::uniform(rng, -std::numbers::pi, std::numbers::pi));
      const double rb = 0.5 * std::hypot(b.l, b.w);
      placed = std::all_of(scene.gt_boxes.begin(), scene.gt_boxes.end(), [&](const Box3D& o) {
        return std::hypot(o.x - b.x, o.y - b.y) > rb + 0.5 * std::hypot(o.l, o.w) + cfg.min_gap;
      });
      if (placed) scene.gt_boxes.push_back(b);
    }
    if (!placed) {
      throw GenerationError("could not place box " + std::to_string(n) + " without overlap in " +
                            std::to_string(cfg.max_attempts) + " attempts");
    }
  }
  std::uniform_real_distribution<double> refl(0.0, 1.0);
  std::bernoulli_distribution surface(std::clamp(cfg.surface_fraction, 0.0, 1.0));
  for (const Box3D& b : scene.gt_boxes) {
    for (int k = 0; k < cfg.points_per_box; ++k) {
      const Vec3 p = detail::sample_in_box(b, surface(rng), rng);
      scene.points.push_back({p.x, p.y, p.z, refl(rng)});
    }
  }
  int background = 0;
  while (background < cfg.background_points) {
    const Vec3 p{detail::uniform(rng, cfg.x_min, cfg.x_max), detail::uniform(rng, cfg.y_min, cfg.y_max),
                 detail::uniform(rng, cfg.ground_z - 0.2, cfg.ground_z + 3.0)};
    const bool inside = std::any_of(scene.gt_boxes.begin(), scene.gt_boxes.end(),
                                    [&](const Box3D& b) { return box_contains(b, p); });
    if (inside) continue;
    scene.points.push_back({p.x, p.y, p.z, refl(rng)});
    ++background;
  }
  return scene;
}

struct ProposalNoise {
  double center = 0.25;      // meters, per axis
  double log_extent = 0.1;   // added to log(l), log(w), log(h)
  double yaw = 0.15;         // radians, must stay below pi/2
  double iou_floor = 0.3;
  int max_tries = 100;
};

/// Simulated first-stage output: bounded uniform noise on center, log-extents
/// and yaw, resampled until the IoU with the ground truth reaches the floor.
inline Box3D perturb_to_proposal(const Box3D& gt, const ProposalNoise& noise, std::uint64_t seed) {
  if (noise.center < 0 || noise.log_extent < 0 || noise.yaw < 0) {
    throw ParameterError("perturb_to_proposal: noise scales must be >= 0");
  }
  if (noise.yaw >= 0.5 * std::numbers::pi) {
    throw ParameterError("perturb_to_proposal: yaw noise must stay below pi/2");
  }
  Rng rng(seed);
  auto draw = [&](double s) { return s > 0 ? detail::uniform(rng, -s, s) : 0.0; };
  for (int t = 0; t < noise.max_tries; ++t) {
    Box3D p = gt;
    p.x += draw(noise.center);
    p.y += draw(noise.center);
    p.z += draw(noise.center);
    p.l *= std::exp(draw(noise.log_extent));
    p.w *= std::exp(draw(noise.log_extent));
    p.h *= std::exp(draw(noise.log_extent));
    p.theta = normalize_angle(p.theta + draw(noise.yaw));
    if (iou_3d(p, gt) >= noise.iou_floor) return p;
  }
  throw ParameterError("perturb_to_proposal: IoU floor " + std::to_string(noise.iou_floor) +
                       " not reached in " + std::to_string(noise.max_tries) + " tries");
}

/// Draws n points from the sphere of radius roi_radius(b, alpha) around the
/// box center: without replacement when enough candidates exist, with
/// replacement otherwise, and center-padded (r = 0) when the sphere is empty.
inline std::vector<Point> sample_roi_points(const PointCloudScene& scene, const Box3D& b, double alpha,
                                            int n, std::uint64_t seed) {
  if (n < 1) throw ParameterError("sample_roi_points: n must be >= 1");
  const double radius = roi_radius(b, alpha);
  const Vec3 c = b.center();
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    if ((scene.points[i].position() - c).norm() <= radius) candidates.push_back(i);
  }
  std::vector<Point> out;
  out.reserve(static_cast<std::size_t>(n));
  if (candidates.empty()) {
    out.assign(static_cast<std::size_t>(n), Point{b.x, b.y, b.z, 0.0});
    return out;
  }
  Rng rng(seed);
  const auto want = static_cast<std::size_t>(n);
  if (candidates.size() >= want) {
    for (std::size_t k = 0; k < want; ++k) {
      const std::size_t pick = std::uniform_int_distribution<std::size_t>(k, candidates.size() - 1)(rng);
      std::swap(candidates[k], candidates[pick]);
      out.push_back(scene.points[candidates[k]]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    for (std::size_t k = 0; k < want; ++k) out.push_back(scene.points[candidates[pick(rng)]]);
  }
  return out;
}

inline constexpr Index kProposalFeatureWidth = 28;

/// One row per point: offsets to the box center and its 8 corners (in
/// box_corners order), then reflectance.
inline Matrix encode_proposal_features(const std::vector<Point>& points, const Box3D& b) {
  const auto corners = box_corners(b);
  std::array<Vec3, 9> refs;
  refs[0] = b.center();
  std::copy(corners.begin(), corners.end(), refs.begin() + 1);
  Matrix f(static_cast<Index>(points.size()), kProposalFeatureWidth);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 p = points[i].position();
    const auto row = static_cast<Index>(i);
    for (int j = 0; j < 9; ++j) {
      const Vec3 d = p - refs[j];
      f(row, 3 * j) = d.x;
      f(row, 3 * j + 1) = d.y;
      f(row, 3 * j + 2) = d.z;
    }
    f(row, 27) = points[i].r;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Scene text format:
//   scene v1 <n_points> <n_boxes>
//   P px py pz r        (n_points lines)
//   B x y z l w h theta (n_boxes lines)

struct SceneParseError : std::runtime_error {
  SceneParseError(int line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line(line) {}
  int line;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_scene(std::ostream& os, const PointCloudScene& s) {
  os << "scene v1 " << s.points.size() << ' ' << s.gt_boxes.size() << '\n';
  for (const Point& p : s.points) {
    os << "P " << format_double(p.px) << ' ' << format_double(p.py) << ' ' << format_double(p.pz)
       << ' ' << format_double(p.r) << '\n';
  }
  for (const Box3D& b : s.gt_boxes) {
    os << "B " << format_double(b.x) << ' ' << format_double(b.y) << ' ' << format_double(b.z) << ' '
       << format_double(b.l) << ' ' << format_double(b.w) << ' ' << format_double(b.h) << ' '
       << format_double(b.theta) << '\n';
  }
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline double parse_double(std::string_view tok, int line) {
  double v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw SceneParseError(line, "invalid number '" + std::string(tok) + "'");
  }
  return v;
}

inline std::size_t parse_count(std::string_view tok, int line) {
  std::size_t v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw SceneParseError(line, "invalid count '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace detail

inline PointCloudScene read_scene(std::istream& is) {
  std::string line;
  int lineno = 0;
  auto next = [&]() -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      if (!detail::split_ws(line).empty()) return true;
    }
    return false;
  };
  if (!next()) throw SceneParseError(lineno + 1, "missing header");
  auto head = detail::split_ws(line);
  if (head.size() != 4 || head[0] != "scene" || head[1] != "v1") {
    throw SceneParseError(lineno, "expected 'scene v1 <n_points> <n_boxes>'");
  }
  const std::size_t n_points = detail::parse_count(head[2], lineno);
  const std::size_t n_boxes = detail::parse_count(head[3], lineno);
  PointCloudScene s;
  s.points.reserve(n_points);
  for (std::size_t k = 0; k < n_points; ++k) {
    if (!next()) throw SceneParseError(lineno + 1, "unexpected end of file in point records");
    auto t = detail::split_ws(line);
    if (t.size() != 5 || t[0] != "P") throw SceneParseError(lineno, "expected 'P px py pz r'");
    s.points.push_back({detail::parse_double(t[1], lineno), detail::parse_double(t[2], lineno),
                        detail::parse_double(t[3], lineno), detail::parse_double(t[4], lineno)});
  }
  for (std::size_t k = 0; k < n_boxes; ++k) {
    if (!next()) throw SceneParseError(lineno + 1, "unexpected end of file in box records");
    auto t = detail::split_ws(line);
    if (t.size() != 8 || t[0] != "B") throw SceneParseError(lineno, "expected 'B x y z l w h theta'");
    Box3D b{detail::parse_double(t[1], lineno), detail::parse_double(t[2], lineno),
            detail::parse_double(t[3], lineno), detail::parse_double(t[4], lineno),
            detail::parse_double(t[5], lineno), detail::parse_double(t[6], lineno),
            detail::parse_double(t[7], lineno)};
    if (!(b.l > 0 && b.w > 0 && b.h > 0)) throw SceneParseError(lineno, "box extents must be positive");
    s.gt_boxes.push_back(b);
  }
  if (next()) throw SceneParseError(lineno, "trailing content after declared records");
  return s;
}

inline PointCloudScene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file '" + path + "'");
  return read_scene(in);
}

inline void save_scene(const std::string& path, const PointCloudScene& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scene file '" + path + "'");
  write_scene(out, s);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace chtr
