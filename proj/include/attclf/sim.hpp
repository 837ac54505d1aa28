#pragma once

// Closed-loop episodes, evaluation metrics and the paired-seed benchmark.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "attclf/controllers.hpp"
#include "attclf/csv.hpp"
#include "attclf/errors.hpp"
#include "attclf/learner.hpp"
#include "attclf/path_geometry.hpp"
#include "attclf/vehicle.hpp"

namespace attclf {

struct InitialStateRanges {
  Bounds d{-0.5, 0.5};     // m
  Bounds mu{-0.1, 0.1};    // rad
  Bounds v{6.0, 10.0};     // m/s
  bool random_s = true;    // start at a uniform arc length instead of s = 0
};

struct EpisodeConfig {
  int max_steps = 300;
  double dt = 0.05;
  InitialStateRanges init;
  double intervention_threshold = 1.5;  // m
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(max_steps >= 1, "episode.max_steps", "must be >= 1");
    detail::require(dt > 0.0, "episode.dt", "must be > 0");
    detail::require(intervention_threshold > 0.0, "episode.intervention_threshold", "must be > 0");
    detail::require(init.d.min <= init.d.max && init.mu.min <= init.mu.max && init.v.min <= init.v.max,
                    "episode.init", "range min must be <= max");
  }
};

enum class Termination { max_steps, intervention, singularity, controller_error };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::max_steps: return "max_steps";
    case Termination::intervention: return "intervention";
    case Termination::singularity: return "singularity";
    case Termination::controller_error: return "controller_error";
  }
  return "unknown";
}

struct StepRecord {
  double t = 0.0;
  VehicleState state;
  ControlInput control;  // after clamping
  double V = std::numeric_limits<double>::quiet_NaN();
  double slack = std::numeric_limits<double>::quiet_NaN();
  double solver_time = 0.0;  // s
  std::optional<AttentionParams> attention;
};

struct EpisodeLog {
  int path_id = 0;
  std::uint64_t seed = 0;
  VehicleState initial;
  std::vector<StepRecord> steps;
  Termination reason = Termination::max_steps;
  std::string message;
};

inline VehicleState sample_initial_state(const EpisodeConfig& cfg, const PathSpec& path, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const Bounds& b) { return b.min + unit(rng) * (b.max - b.min); };
  VehicleState x;
  x.s = cfg.init.random_s ? unit(rng) * path.total_length() : 0.0;
  x.d = draw(cfg.init.d);
  x.mu = draw(cfg.init.mu);
  x.v = draw(cfg.init.v);
  return x;
}

/// Runs one episode from an explicit initial state. Each step: intervention
/// check on the current state, controller call (timed), clamp, log, RK4 step.
inline EpisodeLog run_episode_from(const Controller& controller, const PathSpec& path, const VehicleParams& p,
                                   const EpisodeConfig& cfg, const VehicleState& x0, int path_id = 0,
                                   std::uint64_t seed = 0) {
  cfg.validate();
  EpisodeLog log;
  log.path_id = path_id;
  log.seed = seed;
  log.initial = x0;
  log.steps.reserve(static_cast<std::size_t>(cfg.max_steps));
  VehicleState x = x0;
  for (int k = 0; k < cfg.max_steps; ++k) {
    if (std::abs(x.d) > cfg.intervention_threshold) {
      log.reason = Termination::intervention;
      return log;
    }
    StepRecord rec;
    rec.t = k * cfg.dt;
    rec.state = x;
    ControlStep cs;
    try {
      const auto t0 = std::chrono::steady_clock::now();
      cs = controller(x);
      rec.solver_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } catch (const std::exception& e) {
      log.reason = Termination::controller_error;
      log.message = e.what();
      return log;
    }
    rec.control = clamp_control(p, cs.control);
    rec.V = cs.V;
    rec.slack = cs.slack;
    rec.attention = cs.attention;
    log.steps.push_back(rec);
    try {
      x = step_rk4(p, path, x, rec.control, cfg.dt);
    } catch (const SingularityError& e) {
      log.reason = Termination::singularity;
      log.message = e.what();
      return log;
    }
  }
  log.reason = Termination::max_steps;
  return log;
}

inline EpisodeLog run_episode(const Controller& controller, const PathSpec& path, const VehicleParams& p,
                              const EpisodeConfig& cfg, std::uint64_t seed, int path_id = 0) {
  return run_episode_from(controller, path, p, cfg, sample_initial_state(cfg, path, seed), path_id, seed);
}

// ---------------------------------------------------------------- metrics

struct Metrics {
  double mean_deviation = 0.0;                              // m, step weighted
  std::vector<std::pair<double, double>> deviation_recall;  // (lambda, P(|d| < lambda))
  double mean_inference_time = 0.0;                         // s per control step
  int interventions = 0;
  int singularities = 0;
  int controller_errors = 0;
  int episodes = 0;
  int completed = 0;  // reached max_steps
  long steps = 0;
};

inline std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 40; ++i) g.push_back(0.05 * i);
  return g;
}

inline Metrics compute_metrics(const std::vector<EpisodeLog>& logs,
                               const std::vector<double>& lambdas = default_lambda_grid()) {
  detail::require(!logs.empty(), "metrics.logs", "need at least one episode");
  Metrics m;
  std::vector<double> dev;
  double time_sum = 0.0;
  for (const EpisodeLog& log : logs) {
    ++m.episodes;
    switch (log.reason) {
      case Termination::max_steps: ++m.completed; break;
      case Termination::intervention: ++m.interventions; break;
      case Termination::singularity: ++m.singularities; break;
      case Termination::controller_error: ++m.controller_errors; break;
    }
    for (const StepRecord& s : log.steps) {
      dev.push_back(std::abs(s.state.d));
      time_sum += s.solver_time;
    }
  }
  m.steps = static_cast<long>(dev.size());
  std::sort(dev.begin(), dev.end());
  if (!dev.empty()) {
    m.mean_deviation = std::accumulate(dev.begin(), dev.end(), 0.0) / static_cast<double>(dev.size());
    m.mean_inference_time = time_sum / static_cast<double>(dev.size());
  }
  for (double lam : lambdas) {
    const auto below = std::lower_bound(dev.begin(), dev.end(), lam) - dev.begin();
    m.deviation_recall.emplace_back(lam, dev.empty() ? 0.0 : static_cast<double>(below) / dev.size());
  }
  return m;
}

// -------------------------------------------------------------- benchmark

struct SuiteEntry {
  std::string name;
  ControllerFactory factory;
};

struct BenchmarkRow {
  std::string name;
  Metrics metrics;
  std::vector<EpisodeLog> logs;
  std::string error;  // set when the controller could not be run at all
};

/// Seed of episode `index`; shared by every controller of a benchmark.
inline std::uint64_t episode_seed(const EpisodeConfig& cfg, int index) {
  return mix_seed(cfg.seed, static_cast<std::uint64_t>(index));
}

/// Paired-seed benchmark: episode i runs on paths[i % paths.size()] from the
/// same initial state for every controller. One warm-up episode per controller
/// is run first and discarded.
inline std::vector<BenchmarkRow> benchmark(const std::vector<SuiteEntry>& suite, const std::vector<PathSpec>& paths,
                                           const VehicleParams& p, const EpisodeConfig& cfg, int episodes,
                                           bool warm_up = true) {
  cfg.validate();
  detail::require(!paths.empty(), "benchmark.paths", "need at least one path");
  detail::require(episodes >= 1, "benchmark.episodes", "must be >= 1");
  std::vector<BenchmarkRow> rows;
  for (const SuiteEntry& entry : suite) {
    BenchmarkRow row;
    row.name = entry.name;
    try {
      if (warm_up) {
        const std::uint64_t seed = episode_seed(cfg, 0);
        run_episode(entry.factory(paths[0], seed), paths[0], p, cfg, seed, 0);
      }
      for (int i = 0; i < episodes; ++i) {
        const auto pid = static_cast<std::size_t>(i) % paths.size();
        const std::uint64_t seed = episode_seed(cfg, i);
        row.logs.push_back(run_episode(entry.factory(paths[pid], seed), paths[pid], p, cfg, seed,
                                       static_cast<int>(pid)));
      }
      row.metrics = compute_metrics(row.logs);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ------------------------------------------------------- attention profile

struct ProfileBin {
  double d_lo = 0.0, d_hi = 0.0;  // |d| range of the bin
  double mean_abs_d = 0.0;
  Eigen::Vector3d mean_att = Eigen::Vector3d::Zero();  // (k1, k2, c1)
  int count = 0;
};

struct AttentionProfile {
  std::vector<ProfileBin> bins;
  double spearman_k1 = 0.0;  // rank correlation of k1 with |d|
  int samples = 0;
};

/// Average ranks (ties share the mean rank), 1-based.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation; 0 when either variable is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  detail::require(x.size() == y.size(), "spearman", "inputs must have equal length");
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Equal-count bins over |d| of all steps that carry attention parameters.
inline AttentionProfile attention_profile(const std::vector<EpisodeLog>& logs, int bins = 10) {
  detail::require(bins >= 1, "profile.bins", "must be >= 1");
  std::vector<std::pair<double, AttentionParams>> pts;
  for (const auto& log : logs)
    for (const auto& s : log.steps)
      if (s.attention) pts.emplace_back(std::abs(s.state.d), *s.attention);
  AttentionProfile prof;
  prof.samples = static_cast<int>(pts.size());
  if (pts.empty()) return prof;
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t n = pts.size();
  const auto nb = std::min<std::size_t>(static_cast<std::size_t>(bins), n);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t lo = b * n / nb, hi = (b + 1) * n / nb;
    ProfileBin bin;
    bin.d_lo = pts[lo].first;
    bin.d_hi = pts[hi - 1].first;
    for (std::size_t i = lo; i < hi; ++i) {
      bin.mean_abs_d += pts[i].first;
      bin.mean_att += pts[i].second.vec();
    }
    bin.count = static_cast<int>(hi - lo);
    bin.mean_abs_d /= bin.count;
    bin.mean_att /= bin.count;
    prof.bins.push_back(bin);
  }
  std::vector<double> d(n), k1(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = pts[i].first;
    k1[i] = pts[i].second.k1;
  }
  prof.spearman_k1 = spearman(d, k1);
  return prof;
}

// -------------------------------------------------------------------- csv
//
// Columns whose name ends in "time" hold wall-clock measurements; every other
// column is a deterministic function of configuration and seed.

inline void write_episode_csv(std::ostream& os, const EpisodeLog& log) {
  os << "# path_id=" << log.path_id << " seed=" << log.seed << " termination=" << to_string(log.reason) << '\n';
  os << "t,s,d,mu,v,delta,u_a,u_w,V,slack,k1,k2,c1,solver_time\n";
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  for (const StepRecord& r : log.steps) {
    const AttentionParams a = r.attention.value_or(AttentionParams{nan, nan, nan});
    csv::row(os, r.t, r.state.s, r.state.d, r.state.mu, r.state.v, r.state.delta, r.control.accel,
             r.control.steer_rate, r.V, r.slack, a.k1, a.k2, a.c1, r.solver_time);
  }
}

inline void write_metrics_header(std::ostream& os) {
  os << "controller,mean_deviation,interventions,singularities,controller_errors,episodes,completed,steps,"
        "mean_inference_time\n";
}

inline void write_metrics_row(std::ostream& os, const std::string& name, const Metrics& m) {
  csv::row(os, name, m.mean_deviation, m.interventions, m.singularities, m.controller_errors, m.episodes,
           m.completed, m.steps, m.mean_inference_time);
}

inline void write_recall_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows) {
  os << "controller,lambda,recall\n";
  for (const auto& r : rows)
    for (const auto& [lam, rec] : r.metrics.deviation_recall) csv::row(os, r.name, lam, rec);
}

inline void write_profile_csv(std::ostream& os, const AttentionProfile& prof) {
  os << "# spearman_k1=" << csv::fmt(prof.spearman_k1) << " samples=" << prof.samples << '\n';
  os << "bin,abs_d_lo,abs_d_hi,mean_abs_d,k1,k2,c1,count\n";
  for (std::size_t i = 0; i < prof.bins.size(); ++i) {
    const ProfileBin& b = prof.bins[i];
    csv::row(os, i, b.d_lo, b.d_hi, b.mean_abs_d, b.mean_att(0), b.mean_att(1), b.mean_att(2), b.count);
  }
}

/// Aligned human-readable benchmark table.
inline void print_table(std::ostream& os, const std::vector<BenchmarkRow>& rows) {
  std::size_t w = 10;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %12s  %8s  %8s  %14s\n", static_cast<int>(w), "controller", "mean_dev[m]",
                "interv", "episodes", "infer_time[s]");
  os << buf;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      os << r.name << "  failed: " << r.error << '\n';
      continue;
    }
    const Metrics& m = r.metrics;
    std::snprintf(buf, sizeof(buf), "%-*s  %12.5f  %8d  %8d  %14.3e\n", static_cast<int>(w), r.name.c_str(),
                  m.mean_deviation, m.interventions, m.episodes, m.mean_inference_time);
    os << buf;
  }
}

}  // namespace attclf
