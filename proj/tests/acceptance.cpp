// Acceptance suite: one PASS/FAIL line per criterion, followed by indented
// detail lines. Usage: attclf_acceptance [work-dir]
//
// The full benchmark pipeline runs through the same command implementations
// as the CLI, with the default configuration, inside the work directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attclf/commands.hpp"
#include "oracles.hpp"

namespace {

using namespace attclf;
using attclf::testing::check_gradients;
using attclf::testing::enumerate_qp;
using attclf::testing::finite_difference_vdot;
using attclf::testing::grid_integral;
using attclf::testing::near_active_set_change;
using attclf::testing::random_qp;
using attclf::testing::relative_error;
using attclf::testing::synthetic_dataset;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;
};

template <typename... Ts>
std::string cat(const Ts&... parts) {
  std::ostringstream os;
  os.precision(4);
  (os << ... << parts);
  return os.str();
}

// ------------------------------------------------------------------ 1

Outcome qp_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2025);
  double worst_kkt = 0.0, worst_diff = 0.0;
  int bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 3, m = 1 + trial % 3;
    const QpProblem p = random_qp(rng, n, m);
    const QpSolution s = solve(p);
    const auto oracle = enumerate_qp(p);
    const double diff = oracle.found ? (s.primal - oracle.x).cwiseAbs().maxCoeff() : INFINITY;
    worst_kkt = std::max(worst_kkt, s.kkt_residual);
    worst_diff = std::max(worst_diff, diff);
    if (s.status != QpStatus::optimal || s.kkt_residual > 1e-8 || diff > 1e-5) ++bad;
  }
  const double elapsed = seconds_since(t0);
  return {bad == 0 && elapsed < 5.0,
          cat("200 random QPs, max KKT residual ", worst_kkt, ", max |x - oracle| ", worst_diff, ", ", elapsed, " s"),
          {cat("failing instances: ", bad)}};
}

// ------------------------------------------------------------------ 2

Outcome differentiable_qp() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal;
  const QpSettings cfg;
  int checked = 0, skipped = 0;
  double worst = 0.0;
  while (checked < 100) {
    const QpProblem p = random_qp(rng, 3, 2);
    const QpSolution s = solve(p, cfg);
    if (near_active_set_change(p, s, 1e-6)) {
      ++skipped;
      continue;
    }
    Eigen::VectorXd g(3);
    for (int i = 0; i < 3; ++i) g(i) = normal(rng);
    worst = std::max(worst, check_gradients(p, g, cfg).max_rel);
    ++checked;
  }

  double worst_e2e = 0.0;
  int e2e_checked = 0, e2e_skipped = 0;
  for (ObservationMode mode : {ObservationMode::true_state, ObservationMode::estimated}) {
    LearnerContext ctx;
    ctx.mode = mode;
    HeadConfig hc;
    hc.state_estimate = mode == ObservationMode::estimated;
    AttentionHead head(ctx.features.dim(), hc, 11);
    TrainConfig tc;
    tc.noise = {0.1, 0.02, 0.1, 0.01};
    const auto data = synthetic_dataset(ctx.features, {0.5, 2.0, 3.0}, ctx.clf, ctx.vehicle, 10, 21);
    std::mt19937_64 pick_rng(4);
    std::uniform_int_distribution<Eigen::Index> pick(0, head.num_params() - 1);
    for (const ExpertSample& s : data) {
      const Eigen::VectorXd z = training_features(ctx, tc, s, 1, 0);
      const SampleResult r = sample_loss(head, ctx, tc, s, z, true);
      if (r.skipped) {
        ++e2e_skipped;
        continue;
      }
      for (int t = 0; t < 10; ++t) {
        const Eigen::Index i = pick(pick_rng);
        const double h = 1e-6, old = head.theta()(i);
        head.theta()(i) = old + h;
        const SampleResult a = sample_loss(head, ctx, tc, s, z, false);
        head.theta()(i) = old - h;
        const SampleResult b = sample_loss(head, ctx, tc, s, z, false);
        head.theta()(i) = old;
        const double fd = (a.control_loss + tc.state_weight * a.state_loss - b.control_loss -
                           tc.state_weight * b.state_loss) / (2 * h);
        worst_e2e = std::max(worst_e2e, relative_error(r.grad(i), fd, 1e-6));
        ++e2e_checked;
      }
    }
  }
  return {worst <= 1e-4 && worst_e2e <= 1e-3 && e2e_skipped == 0,
          cat("QP gradient max rel. error ", worst, " (100 instances, ", skipped,
              " degenerate excluded); end-to-end max rel. error ", worst_e2e),
          {cat("end-to-end checks: ", e2e_checked, " parameter entries over both observation modes, ", e2e_skipped,
               " skipped samples")}};
}

// ------------------------------------------------------------------ 3

struct DecayStudy {
  int candidates = 0;
  int qualifying = 0;
  int violating_steps = 0;
  int steps = 0;
  double worst_excess = 0.0;  // max (V_{k+1} - envelope) / V_k
};

DecayStudy decay_study(const ClfConfig& clf, double dt, int want, int max_candidates) {
  const VehicleParams p;
  const AttentionParams att{1, 1, 1};
  const PathSpec path({{500.0, 0.0}});
  EpisodeConfig cfg;
  cfg.dt = dt;
  cfg.max_steps = static_cast<int>(std::lround(15.0 / dt));
  cfg.seed = 77;
  DecayStudy st;
  for (int i = 0; i < max_candidates && st.qualifying < want; ++i) {
    ++st.candidates;
    const std::uint64_t seed = episode_seed(cfg, i);
    const EpisodeLog log = run_episode(fixed_clf_controller(att, clf, p)(path, seed), path, p, cfg, seed);
    if (!std::all_of(log.steps.begin(), log.steps.end(), [](const StepRecord& r) { return r.slack <= 1e-8; }))
      continue;
    ++st.qualifying;
    for (std::size_t k = 0; k + 1 < log.steps.size(); ++k) {
      const double v0 = attclf_value(att, transform_state(p, path, log.steps[k].state));
      const double v1 = attclf_value(att, transform_state(p, path, log.steps[k + 1].state));
      const double env = v0 * std::exp(-0.9 * clf.epsilon * dt) + 1e-6;
      ++st.steps;
      if (v1 > env) {
        ++st.violating_steps;
        st.worst_excess = std::max(st.worst_excess, (v1 - env) / v0);
      }
    }
  }
  return st;
}

Outcome lyapunov_decay() {
  ClfConfig base;
  const DecayStudy defaults = decay_study(base, 0.05, 50, 300);
  ClfConfig hard = base;
  hard.slack_weight = 1e10;
  const DecayStudy main = decay_study(hard, 0.05, 50, 300);
  const DecayStudy fine = decay_study(hard, 0.001, 50, 300);
  auto line = [](const char* label, const DecayStudy& s) {
    return cat(label, ": ", s.qualifying, "/", s.candidates, " episodes with slack <= 1e-8 throughout, ",
               s.violating_steps, "/", s.steps, " steps above the envelope, worst excess ", s.worst_excess,
               " x V_k");
  };
  return {main.qualifying >= 50 && main.violating_steps == 0,
          cat("dt=0.05, straight road, slack_weight 1e10: ", main.violating_steps, " of ", main.steps,
              " steps violate V_{k+1} <= V_k exp(-0.9 eps dt) + 1e-6"),
          {line("default slack_weight 1000, dt=0.05", defaults), line("slack_weight 1e10, dt=0.05", main),
           line("slack_weight 1e10, dt=0.001", fine)}};
}

// ------------------------------------------------------------------ 4

Outcome lie_derivative() {
  const VehicleParams p;
  const ClfConfig cfg;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  TrackParams tp;
  tp.smoothing_window = 10.0;
  std::vector<PathSpec> paths;
  for (std::uint64_t i = 0; i < 5; ++i) paths.push_back(make_track(TrackKind::random, mix_seed(31, i), tp));
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const PathSpec& path = paths[static_cast<std::size_t>(trial) % paths.size()];
    const VehicleState x{0.5 * (1.0 + unit(rng)) * path.total_length(), 1.0 * unit(rng), 0.3 * unit(rng),
                         8.0 + 4.0 * unit(rng), 0.3 * unit(rng)};
    const double kappa = path.curvature_at(x.s);
    const AttentionParams att{1.0 + 0.8 * unit(rng), 1.0 + 0.8 * unit(rng), 1.0 + 0.8 * unit(rng)};
    const ConstraintCoeffs c = attclf_constraint_coeffs(att, cfg, p, kappa, x);
    const ControlInput u{2.0 * unit(rng), 0.5 * unit(rng)};
    const double h = 1e-6;
    const double fd0 = finite_difference_vdot(p, kappa, att, x, {0.0, 0.0}, h);
    const double fda = finite_difference_vdot(p, kappa, att, x, {1.0, 0.0}, h) - fd0;
    const double fdw = finite_difference_vdot(p, kappa, att, x, {0.0, 1.0}, h) - fd0;
    const double fdu = finite_difference_vdot(p, kappa, att, x, u, h);
    worst = std::max({worst, std::abs(c.b + fd0 + cfg.epsilon * c.V), std::abs(c.a(0) - fda),
                      std::abs(c.a(1) - fdw), std::abs(c.vdot(u) - fdu)});
  }
  return {worst <= 1e-6, cat("1000 random states on smoothed random tracks, max |analytic - FD| = ", worst),
          {"curvature is frozen at kappa(s) for the difference quotient"}};
}

// --------------------------------------------------------------- 5, 6, 8

struct PipelineRun {
  bool ok = false;
  std::string error;
  double seconds = 0.0;
  ExpertReport expert;
  std::vector<EpochStats> curve_true, curve_est;
  BenchmarkReport bench;
};

PipelineRun run_pipeline(const fs::path& dir) {
  PipelineRun run;
  const auto t0 = Clock::now();
  try {
    fs::remove_all(dir);
    const RunConfig rc = load_run_config("", {"out=\"" + dir.string() + "\""});
    std::ostringstream log;
    cmd_generate_tracks(rc, log);
    run.expert = cmd_collect_expert(rc, log);
    run.curve_true = cmd_train(rc, ObservationMode::true_state, false, log).curve;
    run.curve_est = cmd_train(rc, ObservationMode::estimated, false, log).curve;
    run.bench = cmd_benchmark(rc, false, log);
    run.ok = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  run.seconds = seconds_since(t0);
  return run;
}

Outcome table_ordering(const PipelineRun& run) {
  if (!run.ok) return {false, "pipeline failed: " + run.error, {}};
  std::vector<std::string> details;
  for (const auto& r : run.bench.rows) {
    details.push_back(r.error.empty() ? cat(r.name, ": mean deviation ", r.metrics.mean_deviation, " m over ",
                                            r.metrics.episodes, " episodes, ", r.metrics.interventions,
                                            " interventions")
                                      : cat(r.name, ": failed: ", r.error));
  }
  details.push_back(cat("expert data: ", run.expert.data.samples.size(), " samples, expert mean deviation ",
                        run.expert.data.mean_deviation, " m vs fixed CLF ", run.expert.fixed_clf_deviation, " m"));
  details.push_back(cat("training control loss (true state): ", run.curve_true.front().control_loss, " -> ",
                        run.curve_true.back().control_loss));
  details.push_back(cat("full pipeline wall time ", run.seconds, " s"));
  return {run.bench.ordering.ok && run.seconds < 600.0, run.bench.ordering.detail, details};
}

Outcome inference_time(const PipelineRun& run) {
  if (!run.ok) return {false, "pipeline failed: " + run.error, {}};
  const double nmpc = find_row(run.bench.rows, kNmpc).metrics.mean_inference_time;
  const double fixed = find_row(run.bench.rows, kFixedClf).metrics.mean_inference_time;
  const double att = find_row(run.bench.rows, kAttTrue).metrics.mean_inference_time;
  return {fixed <= 0.1 * nmpc && att <= 0.1 * nmpc,
          cat("CLF-QP step ", fixed * 1e6, " us (fixed), ", att * 1e6, " us (att-CLF) vs online NMPC ", nmpc * 1e6,
              " us"),
          {cat("ratio att-CLF / NMPC = ", att / nmpc)}};
}

Outcome attention_trend(const PipelineRun& run) {
  if (!run.ok) return {false, "pipeline failed: " + run.error, {}};
  const AttentionProfile& prof = run.bench.profile_true;
  std::vector<std::string> details;
  for (const auto& b : prof.bins) {
    details.push_back(cat("|d| in [", b.d_lo, ", ", b.d_hi, "]: mean k1 ", b.mean_att(0), ", k2 ", b.mean_att(1),
                          ", c1 ", b.mean_att(2)));
  }
  return {prof.spearman_k1 > 0.0,
          cat("Spearman(k1, |d|) = ", prof.spearman_k1, " over ", prof.samples,
              " att-CLF(true) evaluation steps (trend-level)"),
          details};
}

// ------------------------------------------------------------------ 7

Outcome epsilon_sweep(const fs::path& dir) {
  try {
    const RunConfig rc = load_run_config("", {"out=\"" + dir.string() + "\"", "sweep.parameter=\"clf.epsilon\"",
                                              "sweep.values=[0.2,0.8,2.0]", "sweep.suites=[\"straight\",\"sharp\"]"});
    std::ostringstream log;
    const auto rows = cmd_sweep(rc, log);
    const double straight_small = rows.front().per_suite[0].mean_deviation;
    const double straight_large = rows.back().per_suite[0].mean_deviation;
    const double sharp_small = rows.front().per_suite[1].mean_deviation;
    const double sharp_large = rows.back().per_suite[1].mean_deviation;
    std::vector<std::string> details;
    for (const auto& r : rows) {
      details.push_back(cat("eps=", r.value, ": straight ", r.per_suite[0].mean_deviation, " m, sharp ",
                            r.per_suite[1].mean_deviation, " m"));
    }
    return {straight_small < straight_large && sharp_small > sharp_large,
            cat("straight: eps 0.2 -> ", straight_small, " m vs eps 2 -> ", straight_large,
                " m (need smaller for 0.2); sharp: ", sharp_small, " m vs ", sharp_large, " m (need larger for 0.2)"),
            details};
  } catch (const std::exception& e) {
    return {false, cat("sweep failed: ", e.what()), {}};
  }
}

// ------------------------------------------------------------------ 9

double steer_rate_variance(const EpisodeLog& log) {
  if (log.steps.empty()) return 0.0;
  double m = 0.0;
  for (const auto& s : log.steps) m += s.control.steer_rate;
  m /= static_cast<double>(log.steps.size());
  double v = 0.0;
  for (const auto& s : log.steps) v += (s.control.steer_rate - m) * (s.control.steer_rate - m);
  return v / static_cast<double>(log.steps.size());
}

Outcome uncertainty_pipeline(const fs::path& pipeline_dir, bool pipeline_ok) {
  std::vector<std::string> details;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  double worst_integral = 0.0;
  for (int t = 0; t < 20; ++t) {
    StateDistribution est;
    est.mean = {0.3 * n01(rng), 0.05 * n01(rng), 0.02 * n01(rng)};
    est.logvar = {std::log(0.01), std::log(0.001), std::log(1e-5)};
    const auto samples = sample_states(est, {10.0, 0.0, 0.0, 8.0, 0.05 * n01(rng)}, 20, rng);
    const Propagation prop = propagate({1, 1, 1}, {}, {}, samples);
    worst_integral = std::max(worst_integral, std::abs(grid_integral(kde(prop.controls)) - 1.0));
  }
  const bool integral_ok = worst_integral <= 1e-2;
  details.push_back(cat("KDE grid integral: max |integral - 1| = ", worst_integral, " over 20 propagated sets"));

  bool single_ok = true;
  for (int t = 0; t < 20; ++t) {
    const ControlInput u{n01(rng), 0.2 * n01(rng)};
    const ControlDistribution d = kde({u});
    single_ok = single_ok && select_control(d, uniform_prior, default_probes(d, VehicleParams{}, 21)) == u;
  }
  details.push_back(cat("N=1 select_control returns the sample: ", single_ok ? "yes" : "no"));

  int smoother = 0, episodes = 0;
  if (pipeline_ok) {
    const RunConfig rc = load_run_config("", {"out=\"" + pipeline_dir.string() + "\""});
    std::ifstream is(pipeline_dir / "head_estimated.ckpt");
    const Checkpoint ck = read_checkpoint(is);
    UncertaintyConfig one = rc.uncertainty, many = rc.uncertainty;
    one.samples = 1;
    many.samples = 20;
    const auto rows = benchmark(
        {{"N=1", att_clf_estimated_controller(ck.state.head, ck.features, rc.noise, one, rc.clf, rc.vehicle, rc.qp)},
         {"N=20",
          att_clf_estimated_controller(ck.state.head, ck.features, rc.noise, many, rc.clf, rc.vehicle, rc.qp)}},
        load_tracks(rc), rc.vehicle, rc.episode, 50, false);
    for (std::size_t i = 0; i < rows[0].logs.size(); ++i) {
      ++episodes;
      if (steer_rate_variance(rows[1].logs[i]) <= steer_rate_variance(rows[0].logs[i])) ++smoother;
    }
    details.push_back(cat("noisy-state suite (noise d ", rc.noise.d, " m, mu ", rc.noise.mu, " rad, v ", rc.noise.v,
                          " m/s, delta ", rc.noise.delta, " rad): mean deviation N=1 ",
                          rows[0].metrics.mean_deviation, " m, N=20 ", rows[1].metrics.mean_deviation, " m"));
  }
  const bool smoothing_ok = episodes == 50 && smoother >= 45;
  return {integral_ok && single_ok && smoothing_ok,
          cat("u_w variance with N=20 <= N=1 in ", smoother, "/", episodes, " episodes (need >= 45/50)"), details};
}

// ------------------------------------------------------------------ 10

/// CSV text with every column whose header ends in "time" removed.
std::string strip_time_columns(const std::string& text) {
  std::istringstream is(text);
  std::ostringstream os;
  std::string line;
  std::vector<bool> keep;
  bool header_done = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '#') {
      os << line << '\n';
      continue;
    }
    const auto cells = csv::split(line);
    if (!header_done) {
      for (const auto& c : cells) keep.push_back(c.size() < 4 || c.compare(c.size() - 4, 4, "time") != 0);
      header_done = true;
    }
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (i >= keep.size() || keep[i]) os << cells[i] << ',';
    os << '\n';
  }
  return os.str();
}

std::map<std::string, std::string> collect_outputs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext != ".csv" && ext != ".ckpt") continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ext == ".csv" ? strip_time_columns(ss.str()) : ss.str();
  }
  return out;
}

Outcome determinism(const fs::path& root) {
  const std::string cli = ATTCLF_CLI;
  const std::string common =
      " --seed 3 --set tracks.count=3 expert.episodes=3 episode.max_steps=60 nmpc.max_iters=20 train.epochs=2"
      " benchmark.episodes=4 sweep.episodes=3";
  const std::vector<std::string> commands{"generate-tracks", "collect-expert", "train --mode true",
                                          "train --mode estimated", "benchmark", "sweep"};
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* tag : {"a", "b"}) {
    const fs::path dir = root / tag;
    fs::remove_all(dir);
    for (const auto& c : commands) {
      const std::string line = cli + " " + c + " -o " + dir.string() + common + " >/dev/null 2>&1";
      if (std::system(line.c_str()) != 0) return {false, "command failed: " + c, {line}};
    }
    runs.push_back(collect_outputs(dir));
  }
  std::vector<std::string> diffs;
  for (const auto& [name, text] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != text) diffs.push_back(name);
  }
  if (runs[1].size() != runs[0].size()) diffs.push_back("file sets differ");
  std::vector<std::string> details{cat(commands.size(), " commands run twice into separate directories")};
  for (const auto& d : diffs) details.push_back("differs: " + d);
  return {diffs.empty() && !runs[0].empty(),
          cat(runs[0].size(), " CSV and checkpoint files compared (timing columns removed), ", diffs.size(),
              " differ"),
          details};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "attclf_acceptance";
  fs::create_directories(work);
  std::cout << "work directory: " << work.string() << "\n" << std::flush;

  int passed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, cat("exception: ", e.what()), {}};
    }
    std::printf("CRITERION %2d %-28s %s  %s  [%.1f s]\n", id, name, o.pass ? "PASS" : "FAIL", o.summary.c_str(),
                seconds_since(t0));
    for (const auto& d : o.details) std::printf("      %s\n", d.c_str());
    std::fflush(stdout);
    passed += o.pass ? 1 : 0;
  };

  report(1, "qp-correctness", qp_correctness);
  report(2, "differentiable-qp", differentiable_qp);
  report(3, "lyapunov-decay", lyapunov_decay);
  report(4, "lie-derivative", lie_derivative);
  PipelineRun pipeline;
  report(5, "benchmark-ordering", [&] {
    pipeline = run_pipeline(work / "pipeline");
    return table_ordering(pipeline);
  });
  report(6, "inference-time", [&] { return inference_time(pipeline); });
  report(7, "epsilon-sweep", [&] { return epsilon_sweep(work / "sweep"); });
  report(8, "attention-trend", [&] { return attention_trend(pipeline); });
  report(9, "uncertainty", [&] { return uncertainty_pipeline(work / "pipeline", pipeline.ok); });
  report(10, "determinism", [&] { return determinism(work / "determinism"); });
  std::printf("%d/10 criteria passed\n", passed);
  return passed == 10 ? 0 : 1;
}
