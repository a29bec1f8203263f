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

// Brute-force reference computations. Nothing here reuses the optimized
// code paths it is compared against.

#include "chtr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace chtr::oracle {

/// Per-element evaluation of row-normalized cosh-attention with scalar loops:
/// O_i = sum_j w_ij V'_j / sum_j w_ij, w_ij = <Q'_i, K'_j> (2 - cosh(a (i - j) / M)).
inline Matrix cosh_attention_loops(const Matrix& q, const Matrix& k, const Matrix& v, double a, Index m,
                                   bool rectify_values = true, double eps = 1e-9) {
  auto r = [](double x) { return x > 0 ? x : 0.0; };
  Matrix out = Matrix::Zero(q.rows(), v.cols());
  for (Index i = 0; i < q.rows(); ++i) {
    double den = 0;
    std::vector<double> num(static_cast<std::size_t>(v.cols()), 0.0);
    for (Index j = 0; j < k.rows(); ++j) {
      double dot = 0;
      for (Index c = 0; c < q.cols(); ++c) dot += r(q(i, c)) * r(k(j, c));
      const double w = dot * (2.0 - std::cosh(a * static_cast<double>(i - j) / static_cast<double>(m)));
      den += w;
      for (Index c = 0; c < v.cols(); ++c) num[c] += w * (rectify_values ? r(v(j, c)) : v(j, c));
    }
    if (den >= eps) {
      for (Index c = 0; c < v.cols(); ++c) out(i, c) = num[c] / den;
    }
  }
  return out;
}

/// exp / normalize per element, no max shift.
inline Matrix softmax_attention_loops(const Matrix& q, const Matrix& k, const Matrix& v) {
  Matrix out = Matrix::Zero(q.rows(), v.cols());
  for (Index i = 0; i < q.rows(); ++i) {
    std::vector<double> w(static_cast<std::size_t>(k.rows()));
    double total = 0;
    for (Index j = 0; j < k.rows(); ++j) {
      double dot = 0;
      for (Index c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
      w[j] = std::exp(dot);
      total += w[j];
    }
    for (Index j = 0; j < k.rows(); ++j) {
      for (Index c = 0; c < v.cols(); ++c) out(i, c) += w[j] / total * v(j, c);
    }
  }
  return out;
}

inline bool inside_box(const Box3D& b, double x, double y, double z) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double dx = x - b.x, dy = y - b.y;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.l && std::abs(ly) <= 0.5 * b.w && std::abs(z - b.z) <= 0.5 * b.h;
}

/// IoU estimated from uniform samples in the joint axis-aligned bounding box.
inline double iou_monte_carlo(const Box3D& a, const Box3D& b, std::int64_t samples, std::uint64_t seed) {
  auto extent_xy = [](const Box3D& bx) { return 0.5 * std::hypot(bx.l, bx.w); };
  const double xmin = std::min(a.x - extent_xy(a), b.x - extent_xy(b));
  const double xmax = std::max(a.x + extent_xy(a), b.x + extent_xy(b));
  const double ymin = std::min(a.y - extent_xy(a), b.y - extent_xy(b));
  const double ymax = std::max(a.y + extent_xy(a), b.y + extent_xy(b));
  const double zmin = std::min(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
  const double zmax = std::max(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(xmin, xmax), uy(ymin, ymax), uz(zmin, zmax);
  std::int64_t both = 0, either = 0;
  for (std::int64_t s = 0; s < samples; ++s) {
    const double x = ux(rng), y = uy(rng), z = uz(rng);
    const bool ia = inside_box(a, x, y, z);
    const bool ib = inside_box(b, x, y, z);
    both += ia && ib;
    either += ia || ib;
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

}  // namespace chtr::oracle
