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

#include "chtr/attention.hpp"
#include "chtr/scene.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace chtr {

/// Keeps freed memory inside the allocator so large temporaries are not
/// handed back to the kernel and page-faulted in again on every timed run.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

struct BenchRecord {
  std::string kernel;
  Index n = 0;
  Index d = 0;
  int heads = 1;
  double a = 0;
  int reps = 0;
  double median_ns = 0;
  double mean_ns = 0;
  double stddev_ns = 0;
  std::string status = "ok";
};

struct BenchConfig {
  std::vector<Index> sizes{256, 1024, 4096, 16384};
  Index d = 64;
  int heads = 1;
  double a = 1.1;
  int reps = 5;
  int warmup = 2;
  std::vector<std::string> kernels{"softmax", "cosh_linear"};
  std::uint64_t seed = 0;
};

inline bool is_known_kernel(const std::string& k) {
  return k == "softmax" || k == "cosh_linear" || k == "cosh_direct";
}

namespace detail {

inline Matrix run_kernel(const std::string& kernel, const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                         double a) {
  const Index dh = q.cols() / heads;
  Matrix out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    const Matrix qh = q.middleCols(h * dh, dh), kh = k.middleCols(h * dh, dh), vh = v.middleCols(h * dh, dh);
    if (kernel == "softmax") {
      out.middleCols(h * dh, dh) = softmax_attention(qh, kh, vh);
    } else if (kernel == "cosh_linear") {
      out.middleCols(h * dh, dh) = cosh_attention_linear(qh, kh, vh, a, q.rows());
    } else {
      out.middleCols(h * dh, dh) = cosh_attention_direct(qh, kh, vh, a, q.rows());
    }
  }
  return out;
}

}  // namespace detail

/// Median, mean and stddev of `reps` timed runs after `warmup` untimed ones.
/// Inputs are generated before the timed region.
inline BenchRecord bench_kernel(const std::string& kernel, Index n, Index d, int heads, double a, int reps,
                                int warmup, std::uint64_t seed) {
  if (!is_known_kernel(kernel)) throw ConfigError("unknown kernel '" + kernel + "'");
  if (reps < 5) throw ConfigError("benchmarks need at least 5 repetitions");
  if (heads < 1 || d % heads != 0) throw ConfigError("head count must divide d");
  BenchRecord rec{kernel, n, d, heads, a, reps};
  try {
    Rng rng(seed);
    // Scaled so softmax scores stay in a moderate range at d = 64.
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    const Matrix q = random_normal(n, d, rng, std::sqrt(s)), k = random_normal(n, d, rng, std::sqrt(s)),
                 v = random_normal(n, d, rng);
    double sink = 0;
    for (int w = 0; w < warmup; ++w) sink += detail::run_kernel(kernel, q, k, v, heads, a)(0, 0);
    std::vector<double> times;
    for (int r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const Matrix out = detail::run_kernel(kernel, q, k, v, heads, a);
      const auto t1 = std::chrono::steady_clock::now();
      sink += out(0, 0);
      times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
    if (!std::isfinite(sink)) rec.status = "nonfinite";
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    rec.median_ns = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    rec.mean_ns = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
    double var = 0;
    for (double t : times) var += (t - rec.mean_ns) * (t - rec.mean_ns);
    rec.stddev_ns = std::sqrt(var / static_cast<double>(times.size() - 1));
  } catch (const std::bad_alloc&) {
    rec.status = "oom";
  }
  return rec;
}

inline std::vector<BenchRecord> run_bench(const BenchConfig& cfg) {
  if (!std::is_sorted(cfg.sizes.begin(), cfg.sizes.end())) throw ConfigError("bench sizes must be ascending");
  retain_freed_memory();
  std::vector<BenchRecord> out;
  for (const auto& kernel : cfg.kernels) {
    for (Index n : cfg.sizes) {
      out.push_back(bench_kernel(kernel, n, cfg.d, cfg.heads, cfg.a, cfg.reps, cfg.warmup, cfg.seed));
    }
  }
  return out;
}

/// Least-squares slope of log(median time) against log(N) for one kernel.
inline double loglog_slope(const std::vector<BenchRecord>& records, const std::string& kernel) {
  std::vector<double> xs, ys;
  for (const auto& r : records) {
    if (r.kernel != kernel || r.status != "ok" || r.median_ns <= 0) continue;
    xs.push_back(std::log(static_cast<double>(r.n)));
    ys.push_back(std::log(r.median_ns));
  }
  if (xs.size() < 2) return std::nan("");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

inline const BenchRecord* find_record(const std::vector<BenchRecord>& records, const std::string& kernel, Index n) {
  for (const auto& r : records) {
    if (r.kernel == kernel && r.n == n) return &r;
  }
  return nullptr;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records) {
  os << "kernel,N,d,H,a,reps,median_ns,mean_ns,stddev_ns,status\n";
  for (const auto& r : records) {
    os << r.kernel << ',' << r.n << ',' << r.d << ',' << r.heads << ',' << format_double(r.a) << ',' << r.reps << ','
       << format_double(r.median_ns) << ',' << format_double(r.mean_ns) << ',' << format_double(r.stddev_ns) << ','
       << r.status << '\n';
  }
}

}  // namespace chtr
