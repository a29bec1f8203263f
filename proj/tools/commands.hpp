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

#include "chtr/bench.hpp"
#include "chtr/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace chtr::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kIoError = 3 };

using nlohmann::json;

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool json = false;
  std::string out;
  std::optional<double> tol;
};

struct CommandResult {
  int exit_code = kOk;
  json report = json::object();
  std::string text;
};

inline json to_json(const CheckResult& c) {
  return {{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"pass", c.pass}, {"detail", c.detail}};
}

inline json to_json(const SuiteReport& s) {
  json checks = json::array();
  for (const auto& c : s.checks) checks.push_back(to_json(c));
  return {{"suite", s.suite}, {"pass", s.pass()}, {"checks", checks}};
}

inline void append_text(std::ostringstream& os, const SuiteReport& s) {
  os << "[" << s.suite << "]\n";
  for (const auto& c : s.checks) {
    os << "  " << (c.pass ? "PASS " : "FAIL ") << c.name << "  value=" << format_double(c.value)
       << " threshold=" << format_double(c.threshold);
    if (!c.detail.empty()) os << "  (" << c.detail << ")";
    os << '\n';
  }
}

inline CommandResult from_suites(const std::string& command, const std::vector<SuiteReport>& suites) {
  CommandResult r;
  std::ostringstream os;
  json arr = json::array();
  bool ok = true;
  for (const auto& s : suites) {
    append_text(os, s);
    arr.push_back(to_json(s));
    ok = ok && s.pass();
  }
  os << (ok ? "all checks passed\n" : "some checks FAILED\n");
  r.exit_code = ok ? kOk : kCheckFailed;
  r.report = {{"command", command}, {"pass", ok}, {"suites", arr}};
  r.text = os.str();
  return r;
}

template <typename Writer>
void write_file(const std::string& path, Writer&& writer) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  writer(f);
  if (!f) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------

struct VerifyOptions {
  std::vector<Index> sizes{1, 2, 3, 8, 64};
  int seeds = 10;
  int iou_pairs = 100;
  std::int64_t mc_samples = 1000000;
  int roundtrip_pairs = 1000;
};

inline CommandResult cmd_verify(const GlobalOptions& g, const VerifyOptions& o) {
  EquivalenceGrid grid;
  grid.sizes = o.sizes;
  grid.seeds = o.seeds;
  const double tol = g.tol.value_or(1e-6);
  std::vector<SuiteReport> suites;
  suites.push_back(verify_equivalence(grid, g.seed, tol));
  suites.push_back(verify_nonnegativity(100000, g.seed));
  suites.push_back(verify_confidence_targets());
  suites.push_back(verify_roundtrip(o.roundtrip_pairs, g.seed));
  suites.push_back(verify_iou_oracle(o.iou_pairs, o.mc_samples, g.seed));
  return from_suites("verify", suites);
}

struct BenchOptions {
  BenchConfig config;
  bool check = false;
};

inline CommandResult cmd_bench(const GlobalOptions& g, BenchOptions o) {
  o.config.seed = g.seed;
  const auto records = run_bench(o.config);
  CommandResult r;
  std::ostringstream csv;
  write_bench_csv(csv, records);
  if (!g.out.empty()) write_file(g.out, [&](std::ostream& f) { f << csv.str(); });

  std::ostringstream os;
  if (g.out.empty()) os << csv.str();
  json slopes = json::object();
  for (const auto& k : o.config.kernels) {
    const double s = loglog_slope(records, k);
    slopes[k] = std::isfinite(s) ? json(s) : json(nullptr);
    os << "log-log slope " << k << ": " << format_double(s) << '\n';
  }
  json rows = json::array();
  for (const auto& rec : records) {
    rows.push_back({{"kernel", rec.kernel}, {"N", rec.n}, {"d", rec.d}, {"H", rec.heads}, {"a", rec.a},
                    {"reps", rec.reps}, {"median_ns", rec.median_ns}, {"mean_ns", rec.mean_ns},
                    {"stddev_ns", rec.stddev_ns}, {"status", rec.status}});
  }
  r.report = {{"command", "bench"}, {"records", rows}, {"slopes", slopes}};
  if (o.check) {
    SuiteReport rep{"complexity", {}};
    const double sl = loglog_slope(records, "cosh_linear");
    const double ss = loglog_slope(records, "softmax");
    rep.checks.push_back({"cosh_linear slope in (0.8, 1.4)", sl, 1.4, sl > 0.8 && sl < 1.4, ""});
    rep.checks.push_back({"softmax slope in (1.7, 2.3)", ss, 2.3, ss > 1.7 && ss < 2.3, ""});
    const Index n_max = o.config.sizes.empty() ? 0 : o.config.sizes.back();
    const auto* lin = find_record(records, "cosh_linear", n_max);
    const auto* soft = find_record(records, "softmax", n_max);
    const bool faster = lin && soft && lin->status == "ok" && soft->status == "ok" && lin->median_ns < soft->median_ns;
    rep.checks.push_back({"cosh_linear faster than softmax at N=" + std::to_string(n_max),
                          lin && soft ? lin->median_ns / soft->median_ns : 0.0, 1.0, faster, "ratio of medians"});
    append_text(os, rep);
    r.report["checks"] = to_json(rep);
    r.exit_code = rep.pass() ? kOk : kCheckFailed;
  }
  r.text = os.str();
  return r;
}

struct GradcheckOptions {
  GradcheckScale scale = GradcheckScale::Default;
  bool zero_upstream = false;
};

inline CommandResult cmd_gradcheck(const GlobalOptions& g, const GradcheckOptions& o) {
  if (o.zero_upstream) {
    const auto r = gradcheck_attention(6, 4, 1.1, g.seed, 1e-5, true);
    Rng rng(g.seed);
    const Index n = 6, d = 4;
    const Matrix q = random_normal(n, d, rng), k = random_normal(n, d, rng), v = random_normal(n, d, rng);
    const auto grads = cosh_attention_backward<double>(q, k, v, 1.1, n, Matrix::Zero(n, d));
    const double max_abs = std::max({grads.dq.cwiseAbs().maxCoeff(), grads.dk.cwiseAbs().maxCoeff(),
                                     grads.dv.cwiseAbs().maxCoeff()});
    SuiteReport rep{"gradcheck_zero_upstream", {}};
    rep.checks.push_back({"max |gradient| with d_out = 0", max_abs, 1e-300, max_abs == 0.0, "exact zero"});
    rep.checks.push_back({"finite differences agree", r.max_rel_err, 1e-4, r.max_rel_err < 1e-4, ""});
    return from_suites("gradcheck", {rep});
  }
  return from_suites("gradcheck", {gradcheck_suite(g.seed, o.scale)});
}

struct AblateOptions {
  std::vector<double> scales{0.1, 0.3, 0.5, 0.7, 0.9, 1.1, kMaxReweightScale};
  int steps = 200;
  double lr = 0.03;
  double required_reduction = 0.5;
};

struct AblationRow {
  double a;
  double init_loss;
  double final_loss;
  double reduction_pct;
};

inline std::vector<AblationRow> run_ablation(const AblateOptions& o, std::uint64_t seed) {
  std::vector<AblationRow> rows;
  for (double a : o.scales) {
    check_reweight_scale(a);
    ToyConfig cfg;
    cfg.model.a = a;
    const auto res = train_toy(cfg, o.steps, o.lr, seed);
    rows.push_back({a, res.initial_loss(), res.final_loss(), 100.0 * res.reduction()});
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "a,init_loss,final_loss,reduction_pct\n";
  for (const auto& r : rows) {
    os << format_double(r.a) << ',' << format_double(r.init_loss) << ',' << format_double(r.final_loss) << ','
       << format_double(r.reduction_pct) << '\n';
  }
}

inline CommandResult cmd_ablate_a(const GlobalOptions& g, const AblateOptions& o) {
  const auto rows = run_ablation(o, g.seed);
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  if (!g.out.empty()) write_file(g.out, [&](std::ostream& f) { f << csv.str(); });
  SuiteReport rep{"ablate_a", {}};
  for (const auto& r : rows) {
    const double red = r.reduction_pct / 100.0;
    rep.checks.push_back({"a=" + format_double(r.a) + " loss reduction", red, o.required_reduction,
                          red >= o.required_reduction,
                          "pass iff value >= threshold; " + format_double(r.init_loss) + " -> " +
                              format_double(r.final_loss)});
  }
  auto res = from_suites("ablate-a", {rep});
  if (g.out.empty()) res.text = csv.str() + res.text;
  return res;
}

struct DemoOptions {
  std::string scene_path;  // empty selects the synthetic generator
  int steps = 300;
  double lr = 0.03;
  double noise_scale = 1.0;
  std::string load_model;
  std::string save_model;
};

struct DemoProposal {
  Box3D proposal, gt, refined;
  double iou_before, iou_after, confidence;
};

struct DemoReport {
  std::vector<DemoProposal> proposals;
  double mean_before = 0, mean_after = 0;
  bool trained = false;
  std::vector<LossBreakdown> history;
};

/// Perturbs every ground truth box into proposals, trains (or loads) a model
/// on them, refines each foreground proposal and compares IoU.
inline DemoReport run_demo(const DemoOptions& o, std::uint64_t seed) {
  ToyConfig cfg;
  cfg.noise.center *= o.noise_scale;
  cfg.noise.log_extent *= o.noise_scale;
  cfg.noise.yaw *= o.noise_scale;
  const PointCloudScene scene = o.scene_path.empty() ? generate_scene(cfg.scene, seed) : load_scene(o.scene_path);
  if (scene.gt_boxes.empty()) throw ConfigError("demo scene has no ground truth boxes");
  TrainingBatch batch;
  append_proposals(batch, scene, make_proposals(scene, cfg, seed), cfg, seed);

  DemoReport rep;
  RefinementModel model = o.load_model.empty() ? RefinementModel::init(cfg.model, seed) : load_model(o.load_model);
  if (!o.load_model.empty()) rep.trained = true;
  if (o.steps > 0) {
    auto res = train_on_batch(std::move(model), batch, o.steps, o.lr, cfg.loss);
    model = std::move(res.model);
    rep.history = std::move(res.history);
    rep.trained = true;
  }
  if (!o.save_model.empty()) save_model(o.save_model, model);

  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.targets[i].iou <= 0) continue;  // background proposals
    const auto out = refine_forward(model, batch.features[i]);
    const Box3D refined = decode_regression(batch.proposals[i], out.residual);
    rep.proposals.push_back({batch.proposals[i], batch.matched_gt[i], refined, batch.targets[i].iou,
                             iou_3d(refined, batch.matched_gt[i]), out.confidence});
  }
  for (const auto& p : rep.proposals) {
    rep.mean_before += p.iou_before / static_cast<double>(rep.proposals.size());
    rep.mean_after += p.iou_after / static_cast<double>(rep.proposals.size());
  }
  return rep;
}

inline json box_json(const Box3D& b) { return json::array({b.x, b.y, b.z, b.l, b.w, b.h, b.theta}); }

inline CommandResult cmd_demo(const GlobalOptions& g, const DemoOptions& o) {
  const auto rep = run_demo(o, g.seed);
  if (!g.out.empty()) write_file(g.out, [&](std::ostream& f) { write_loss_history_csv(f, rep.history); });
  CommandResult r;
  std::ostringstream os;
  json props = json::array();
  os << "proposal  iou_before  iou_after  confidence\n";
  for (std::size_t i = 0; i < rep.proposals.size(); ++i) {
    const auto& p = rep.proposals[i];
    os << i << "  " << format_double(p.iou_before) << "  " << format_double(p.iou_after) << "  "
       << format_double(p.confidence) << '\n';
    props.push_back({{"proposal", box_json(p.proposal)}, {"gt", box_json(p.gt)}, {"refined", box_json(p.refined)},
                     {"iou_before", p.iou_before}, {"iou_after", p.iou_after}, {"confidence", p.confidence}});
  }
  os << "mean IoU before " << format_double(rep.mean_before) << " after " << format_double(rep.mean_after)
     << " delta " << format_double(rep.mean_after - rep.mean_before) << '\n';
  const bool pass = !rep.trained || rep.mean_after >= rep.mean_before;
  if (rep.trained) os << (pass ? "PASS" : "FAIL") << " mean IoU after >= before\n";
  r.exit_code = pass ? kOk : kCheckFailed;
  r.report = {{"command", "demo"},          {"proposals", props},
              {"mean_iou_before", rep.mean_before}, {"mean_iou_after", rep.mean_after},
              {"trained", rep.trained},     {"pass", pass}};
  if (!rep.history.empty()) {
    r.report["initial_loss"] = rep.history.front().l_rcnn;
    r.report["final_loss"] = rep.history.back().l_rcnn;
  }
  r.text = os.str();
  return r;
}

inline CommandResult cmd_gen_scene(const GlobalOptions& g, const SceneConfig& cfg) {
  const auto scene = generate_scene(cfg, g.seed);
  CommandResult r;
  std::ostringstream os;
  if (g.out.empty()) {
    write_scene(os, scene);
  } else {
    save_scene(g.out, scene);
    os << "wrote " << scene.points.size() << " points and " << scene.gt_boxes.size() << " boxes to " << g.out << '\n';
  }
  r.text = os.str();
  r.report = {{"command", "gen-scene"}, {"points", scene.points.size()}, {"boxes", scene.gt_boxes.size()},
              {"out", g.out}};
  return r;
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one subcommand; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cosh-attention proposal refinement toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  double tol = 0;
  app.add_option("--seed", g.seed, "RNG seed")->default_val(0);
  app.add_flag("--json", g.json, "print a machine-readable JSON report");
  app.add_option("--out", g.out, "output path (CSV, scene file, or loss history)");
  auto* tol_opt = app.add_option("--tol", tol, "tolerance override for verify");

  VerifyOptions vo;
  auto* verify = app.add_subcommand("verify", "oracle equivalence, IoU oracle and round-trip suites");
  verify->add_option("--sizes", vo.sizes, "sequence lengths for the equivalence grid");
  verify->add_option("--seeds", vo.seeds, "seeds per grid cell");
  verify->add_option("--mc-samples", vo.mc_samples, "Monte Carlo samples per IoU pair");
  verify->add_option("--iou-pairs", vo.iou_pairs, "random box pairs for the IoU oracle");

  BenchOptions bo;
  auto* bench = app.add_subcommand("bench", "attention runtime scaling benchmark");
  bench->add_option("--n-list", bo.config.sizes, "ascending sequence lengths");
  bench->add_option("--d", bo.config.d, "feature width");
  bench->add_option("--heads", bo.config.heads, "head count");
  bench->add_option("--a", bo.config.a, "re-weighting scale");
  bench->add_option("--kernels", bo.config.kernels, "softmax, cosh_linear, cosh_direct");
  bench->add_option("--reps", bo.config.reps, "timed repetitions (>= 5)");
  bench->add_flag("--check", bo.check, "fail unless the slopes match linear / quadratic scaling");

  GradcheckOptions go;
  std::string scale = "default";
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad->add_option("--scale", scale, "micro or default")->check(CLI::IsMember({"micro", "default"}));
  grad->add_flag("--zero-upstream", go.zero_upstream, "inject d_out = 0 and report the gradients");

  AblateOptions ao;
  auto* ablate = app.add_subcommand("ablate-a", "toy training sweep over the re-weighting scale");
  ablate->add_option("--a-list", ao.scales, "values of a in [0, 1.3169]");
  ablate->add_option("--steps", ao.steps, "gradient steps per run");
  ablate->add_option("--lr", ao.lr, "learning rate");

  DemoOptions dm;
  bool synthetic = false;
  auto* demo = app.add_subcommand("demo", "end-to-end proposal refinement demo");
  auto* scene_opt = demo->add_option("--scene", dm.scene_path, "scene file to load");
  demo->add_flag("--synthetic", synthetic, "generate a synthetic scene (default)")->excludes(scene_opt);
  demo->add_option("--steps", dm.steps, "training steps (0 keeps the initial or loaded model)");
  demo->add_option("--lr", dm.lr, "learning rate");
  demo->add_option("--noise-scale", dm.noise_scale, "multiplier on the default proposal noise");
  demo->add_option("--load-model", dm.load_model, "parameter file to start from");
  demo->add_option("--save-model", dm.save_model, "write parameters after training");

  SceneConfig sc;
  auto* gen = app.add_subcommand("gen-scene", "write a synthetic scene file");
  gen->add_option("--boxes", sc.n_boxes, "number of boxes");
  gen->add_option("--points-per-box", sc.points_per_box, "points inside each box");
  gen->add_option("--background", sc.background_points, "background points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kUsage;
  }
  if (*tol_opt) g.tol = tol;
  go.scale = scale == "micro" ? GradcheckScale::Micro : GradcheckScale::Default;

  try {
    CommandResult r;
    if (*verify) r = cmd_verify(g, vo);
    else if (*bench) r = cmd_bench(g, bo);
    else if (*grad) r = cmd_gradcheck(g, go);
    else if (*ablate) r = cmd_ablate_a(g, ao);
    else if (*demo) r = cmd_demo(g, dm);
    else r = cmd_gen_scene(g, sc);
    if (g.json) {
      out << r.report.dump(2) << '\n';
    } else {
      out << r.text;
    }
    return r.exit_code;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const SceneParseError& e) {
    err << "scene parse error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
}

}  // namespace chtr::cli
