#pragma once

// Implementations of the command-line subcommands. Each command reads its
// inputs from and writes its outputs to the run's output directory:
//
//   tracks/track_NNN.csv        generate-tracks
//   expert.csv, expert_meta.txt collect-expert
//   head_<mode>.ckpt,
//   curve_<mode>.csv            train --mode true|estimated
//   benchmark/...               benchmark
//   sweep/...                   sweep

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attclf/config.hpp"
#include "attclf/svg.hpp"

namespace attclf {

namespace fs = std::filesystem;

/// Raised by `benchmark --assert-ordering` when the expected ordering fails.
class AssertionFailure : public std::runtime_error {
 public:
  explicit AssertionFailure(const std::string& what) : std::runtime_error(what) {}
};

inline std::string provenance(const RunConfig& rc) {
  return std::string("attclf ") + kToolVersion + " config=" + rc.hash + " seed=" + std::to_string(rc.seed);
}

namespace cmd_detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());
  }
}

inline void write_file(const fs::path& file, const std::function<void(std::ostream&)>& body) {
  ensure_dir(file.parent_path().empty() ? fs::path(".") : file.parent_path());
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + file.string() + "'");
  body(os);
  os.flush();
  if (!os) throw std::runtime_error("error while writing '" + file.string() + "'");
}

inline std::ifstream open_input(const fs::path& file, const std::string& hint) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw ValidationError(file.string(), "not found; " + hint);
  return is;
}

inline std::string track_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "track_%03d.csv", i);
  return buf;
}

inline fs::path checkpoint_path(const RunConfig& rc, ObservationMode mode) {
  return fs::path(rc.out) / ("head_" + to_string(mode) + ".ckpt");
}

inline Checkpoint load_checkpoint(const RunConfig& rc, ObservationMode mode) {
  auto is = open_input(checkpoint_path(rc, mode), "run 'train --mode " + to_string(mode) + "' first");
  Checkpoint c = read_checkpoint(is);
  if (c.mode != mode) throw ValidationError(checkpoint_path(rc, mode).string(), "checkpoint was trained in another mode");
  return c;
}

}  // namespace cmd_detail

// ---------------------------------------------------------- generate-tracks

inline std::vector<fs::path> cmd_generate_tracks(const RunConfig& rc, std::ostream& log) {
  const std::vector<PathSpec> paths = make_suite(rc.tracks);
  std::vector<fs::path> files;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const fs::path f = fs::path(rc.out) / "tracks" / cmd_detail::track_name(static_cast<int>(i));
    cmd_detail::write_file(f, [&](std::ostream& os) {
      write_path_csv(os, paths[i], provenance(rc) + " kind=" + to_string(rc.tracks.kind) + " index=" +
                                       std::to_string(i));
    });
    files.push_back(f);
  }
  log << "wrote " << files.size() << " tracks to " << (fs::path(rc.out) / "tracks").string() << '\n';
  return files;
}

/// The curvy suite as written by generate-tracks.
inline std::vector<PathSpec> load_tracks(const RunConfig& rc) {
  std::vector<PathSpec> paths;
  for (int i = 0; i < rc.tracks.count; ++i) {
    auto is = cmd_detail::open_input(fs::path(rc.out) / "tracks" / cmd_detail::track_name(i),
                                     "run 'generate-tracks' first");
    paths.push_back(read_path_csv(is));
  }
  return paths;
}

// ----------------------------------------------------------- collect-expert

/// Episodes used for expert data; distinct from the benchmark episodes.
inline EpisodeConfig expert_episode_config(const RunConfig& rc) {
  EpisodeConfig ec = rc.episode;
  ec.seed = stage_seed(rc.seed, "expert");
  return ec;
}

struct ExpertReport {
  ExpertDataset data;
  double fixed_clf_deviation = 0.0;  // fixed CLF from the same initial states
};

inline ExpertReport cmd_collect_expert(const RunConfig& rc, std::ostream& log) {
  const std::vector<PathSpec> paths = load_tracks(rc);
  const EpisodeConfig ec = expert_episode_config(rc);
  ExpertReport rep;
  rep.data = collect_expert(rc.nmpc, rc.vehicle, rc.features, paths, ec, rc.expert_episodes, rc.exploration);
  std::vector<EpisodeLog> fixed;
  const ControllerFactory fixed_clf = fixed_clf_controller(rc.baseline, rc.clf, rc.vehicle, {}, rc.qp);
  for (int i = 0; i < rc.expert_episodes; ++i) {
    const auto pid = static_cast<std::size_t>(i) % paths.size();
    const std::uint64_t seed = episode_seed(ec, i);
    fixed.push_back(run_episode(fixed_clf(paths[pid], seed), paths[pid], rc.vehicle, ec, seed, static_cast<int>(pid)));
  }
  rep.fixed_clf_deviation = compute_metrics(fixed, rc.lambdas).mean_deviation;

  const fs::path out(rc.out);
  cmd_detail::write_file(out / "expert.csv", [&](std::ostream& os) {
    os << "# " << provenance(rc) << '\n';
    write_dataset_csv(os, rep.data.samples, rc.features.dim());
  });
  cmd_detail::write_file(out / "expert_meta.txt", [&](std::ostream& os) {
    os << "# " << provenance(rc) << '\n';
    os << "seed=" << rc.seed << '\n';
    os << "episodes=" << rep.data.episodes << '\n';
    os << "excluded_singular=" << rep.data.excluded << '\n';
    os << "samples=" << rep.data.samples.size() << '\n';
    os << "exploration_accel=" << csv::fmt(rc.exploration.accel) << '\n';
    os << "exploration_steer_rate=" << csv::fmt(rc.exploration.steer_rate) << '\n';
    os << "expert_mean_deviation=" << csv::fmt(rep.data.mean_deviation) << '\n';
    os << "fixed_clf_mean_deviation=" << csv::fmt(rep.fixed_clf_deviation) << '\n';
  });
  log << "collected " << rep.data.samples.size() << " samples from " << rep.data.episodes - rep.data.excluded << '/'
      << rep.data.episodes << " episodes\n";
  log << "expert mean deviation " << std::setprecision(4) << rep.data.mean_deviation << " m (fixed CLF on the same "
      << "initial states " << rep.fixed_clf_deviation << " m)\n";
  return rep;
}

inline std::vector<ExpertSample> load_dataset(const RunConfig& rc) {
  auto is = cmd_detail::open_input(fs::path(rc.out) / "expert.csv", "run 'collect-expert' first");
  return read_dataset_csv(is, rc.features.dim());
}

// -------------------------------------------------------------------- train

inline LearnerContext learner_context(const RunConfig& rc, ObservationMode mode) {
  return {mode, rc.features, rc.clf, rc.vehicle, rc.qp};
}

inline HeadConfig head_config(const RunConfig& rc, ObservationMode mode) {
  HeadConfig h = rc.head;
  h.state_estimate = mode == ObservationMode::estimated;
  h.init_params = rc.baseline;
  return h;
}

inline TrainState fresh_train_state(const RunConfig& rc, ObservationMode mode) {
  return {AttentionHead(rc.features.dim(), head_config(rc, mode), stage_seed(rc.seed, "head:" + to_string(mode))),
          {},
          0};
}

struct TrainReport {
  std::vector<EpochStats> curve;
  TrainState state;
};

/// Trains a head on expert.csv. With `resume`, continues from the stored
/// checkpoint of the same mode up to the configured epoch count.
inline TrainReport cmd_train(const RunConfig& rc, ObservationMode mode, bool resume, std::ostream& log) {
  const std::vector<ExpertSample> data = load_dataset(rc);
  TrainReport rep;
  rep.state = resume ? cmd_detail::load_checkpoint(rc, mode).state : fresh_train_state(rc, mode);
  rep.curve = train(rep.state, learner_context(rc, mode), rc.train, data);

  const fs::path out(rc.out);
  cmd_detail::write_file(cmd_detail::checkpoint_path(rc, mode), [&](std::ostream& os) {
    write_checkpoint(os, Checkpoint{rc.hash, rc.features, mode, rep.state});
  });
  cmd_detail::write_file(out / ("curve_" + to_string(mode) + ".csv"), [&](std::ostream& os) {
    os << "# " << provenance(rc) << " mode=" << to_string(mode) << '\n';
    os << "epoch,control_loss,state_loss,skip_rate\n";
    for (const auto& e : rep.curve) csv::row(os, e.epoch, e.control_loss, e.state_loss, e.skip_rate);
  });
  if (!rep.curve.empty()) {
    log << "trained " << to_string(mode) << " head to epoch " << rep.state.epoch << ": control loss "
        << std::setprecision(5) << rep.curve.front().control_loss << " -> " << rep.curve.back().control_loss << '\n';
  } else {
    log << "checkpoint already at epoch " << rep.state.epoch << "; nothing to do\n";
  }
  return rep;
}

// ---------------------------------------------------------------- benchmark

inline constexpr const char* kNmpc = "NMPC";
inline constexpr const char* kFixedClf = "fixed-CLF";
inline constexpr const char* kAttTrue = "att-CLF(true)";
inline constexpr const char* kAttEstimated = "att-CLF(estimated)";

inline std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!s.empty() && s.back() != '_') {
      s += '_';
    }
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

inline const BenchmarkRow& find_row(const std::vector<BenchmarkRow>& rows, const std::string& name) {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw std::runtime_error("benchmark has no row '" + name + "'");
}

struct OrderingCheck {
  bool ok = false;
  std::string detail;
};

/// NMPC < att-CLF(true) < fixed-CLF in mean deviation, and att-CLF(true) at
/// most `ratio` times the fixed CLF.
inline OrderingCheck check_ordering(const std::vector<BenchmarkRow>& rows, double ratio = 0.75) {
  const BenchmarkRow &n = find_row(rows, kNmpc), &a = find_row(rows, kAttTrue), &f = find_row(rows, kFixedClf);
  std::ostringstream msg;
  for (const BenchmarkRow* r : {&n, &a, &f}) {
    if (!r->error.empty()) return {false, r->name + " failed: " + r->error};
  }
  const double dn = n.metrics.mean_deviation, da = a.metrics.mean_deviation, df = f.metrics.mean_deviation;
  msg << std::setprecision(4) << "NMPC " << dn << " < att-CLF " << da << " < fixed " << df << ", ratio " << da / df
      << " <= " << ratio;
  return {dn < da && da < df && da <= ratio * df, msg.str()};
}

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  AttentionProfile profile_true;
  AttentionProfile profile_estimated;
  OrderingCheck ordering;
};

inline std::vector<SuiteEntry> benchmark_suite(const RunConfig& rc, const Checkpoint& head_true,
                                               const Checkpoint& head_est) {
  return {
      {kNmpc, nmpc_controller(rc.online_nmpc(), rc.vehicle, rc.episode.dt)},
      {kFixedClf, fixed_clf_controller(rc.baseline, rc.clf, rc.vehicle, {}, rc.qp)},
      {kAttTrue, att_clf_true_controller(head_true.state.head, head_true.features, rc.clf, rc.vehicle, rc.qp)},
      {kAttEstimated, att_clf_estimated_controller(head_est.state.head, head_est.features, rc.noise, rc.uncertainty,
                                                   rc.clf, rc.vehicle, rc.qp)},
  };
}

inline void write_benchmark_plots(const RunConfig& rc, const fs::path& dir, const std::vector<PathSpec>& paths,
                                  const BenchmarkReport& rep) {
  const std::string stamp = provenance(rc);
  std::vector<svg::Series> recall;
  for (const auto& r : rep.rows) {
    if (!r.error.empty()) continue;
    svg::Series s{r.name, {}, {}};
    for (const auto& [lam, rec] : r.metrics.deviation_recall) {
      s.x.push_back(lam);
      s.y.push_back(rec);
    }
    recall.push_back(std::move(s));
  }
  cmd_detail::write_file(dir / "recall.svg", [&](std::ostream& os) {
    svg::line_plot(os, recall, {"Deviation recall", "lambda [m]", "fraction of steps with |d| < lambda", stamp});
  });

  std::vector<svg::Series> traj;
  svg::Series centre{"centerline", {}, {}};
  const PathSpec& path = paths.front();
  for (double s = 0.0; s <= path.total_length(); s += 1.0) {
    const GlobalPose g = global_pose(path, s, 0.0, 0.0);
    centre.x.push_back(g.x);
    centre.y.push_back(g.y);
  }
  traj.push_back(std::move(centre));
  for (const auto& r : rep.rows) {
    if (r.logs.empty()) continue;
    svg::Series s{r.name, {}, {}};
    for (const auto& st : r.logs.front().steps) {
      const GlobalPose g = global_pose(path, st.state.s, st.state.d, st.state.mu);
      s.x.push_back(g.x);
      s.y.push_back(g.y);
    }
    traj.push_back(std::move(s));
  }
  cmd_detail::write_file(dir / "trajectories.svg", [&](std::ostream& os) {
    svg::PlotOptions o{"Episode 0 trajectories", "x [m]", "y [m]", stamp};
    o.equal_aspect = true;
    svg::line_plot(os, traj, o);
  });

  std::vector<svg::Series> att{{"k1", {}, {}}, {"k2", {}, {}}, {"c1", {}, {}}};
  for (const auto& b : rep.profile_true.bins) {
    for (int j = 0; j < 3; ++j) {
      att[static_cast<std::size_t>(j)].x.push_back(b.mean_abs_d);
      att[static_cast<std::size_t>(j)].y.push_back(b.mean_att(j));
    }
  }
  char title[96];
  std::snprintf(title, sizeof(title), "Learned attention vs |d| (Spearman k1 = %.3f)", rep.profile_true.spearman_k1);
  cmd_detail::write_file(dir / "attention.svg", [&](std::ostream& os) {
    svg::line_plot(os, att, {title, "mean |d| in bin [m]", "attention parameter", stamp});
  });
}

inline BenchmarkReport cmd_benchmark(const RunConfig& rc, bool assert_ordering, std::ostream& log) {
  const std::vector<PathSpec> paths = load_tracks(rc);
  const Checkpoint head_true = cmd_detail::load_checkpoint(rc, ObservationMode::true_state);
  const Checkpoint head_est = cmd_detail::load_checkpoint(rc, ObservationMode::estimated);

  BenchmarkReport rep;
  rep.rows = benchmark(benchmark_suite(rc, head_true, head_est), paths, rc.vehicle, rc.episode, rc.benchmark_episodes);
  for (auto& r : rep.rows) {
    if (r.error.empty()) r.metrics = compute_metrics(r.logs, rc.lambdas);
  }
  const BenchmarkRow& at = find_row(rep.rows, kAttTrue);
  const BenchmarkRow& ae = find_row(rep.rows, kAttEstimated);
  if (at.error.empty()) rep.profile_true = attention_profile(at.logs, rc.profile_bins);
  if (ae.error.empty()) rep.profile_estimated = attention_profile(ae.logs, rc.profile_bins);
  rep.ordering = check_ordering(rep.rows);

  const fs::path dir = fs::path(rc.out) / "benchmark";
  const std::string stamp = provenance(rc);
  cmd_detail::write_file(dir / "metrics.csv", [&](std::ostream& os) {
    os << "# " << stamp << '\n';
    write_metrics_header(os);
    for (const auto& r : rep.rows)
      if (r.error.empty()) write_metrics_row(os, r.name, r.metrics);
  });
  cmd_detail::write_file(dir / "recall.csv", [&](std::ostream& os) {
    os << "# " << stamp << '\n';
    write_recall_csv(os, rep.rows);
  });
  cmd_detail::write_file(dir / "profile_true.csv", [&](std::ostream& os) {
    os << "# " << stamp << '\n';
    write_profile_csv(os, rep.profile_true);
  });
  cmd_detail::write_file(dir / "profile_estimated.csv", [&](std::ostream& os) {
    os << "# " << stamp << '\n';
    write_profile_csv(os, rep.profile_estimated);
  });
  for (const auto& r : rep.rows) {
    for (std::size_t i = 0; i < r.logs.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "episode_%03zu.csv", i);
      cmd_detail::write_file(dir / "episodes" / slug(r.name) / name, [&](std::ostream& os) {
        os << "# " << stamp << " controller=" << r.name << '\n';
        write_episode_csv(os, r.logs[i]);
      });
    }
  }
  write_benchmark_plots(rc, dir, paths, rep);
  std::ostringstream table;
  print_table(table, rep.rows);
  table << "spearman(k1, |d|) = " << std::setprecision(4) << rep.profile_true.spearman_k1 << '\n';
  table << "ordering " << (rep.ordering.ok ? "holds" : "FAILS") << ": " << rep.ordering.detail << '\n';
  cmd_detail::write_file(dir / "summary.txt", [&](std::ostream& os) { os << "# " << stamp << '\n' << table.str(); });
  log << table.str();
  if (assert_ordering && !rep.ordering.ok) throw AssertionFailure("benchmark ordering failed: " + rep.ordering.detail);
  return rep;
}

// -------------------------------------------------------------------- sweep

struct SweepParameter {
  std::string name;
  std::function<void(RunConfig&, double)> apply;
};

inline const std::vector<SweepParameter>& sweep_parameters() {
  static const std::vector<SweepParameter> params{
      {"clf.epsilon", [](RunConfig& r, double v) { r.clf.epsilon = v; }},
      {"clf.slack_weight", [](RunConfig& r, double v) { r.clf.slack_weight = v; }},
      {"clf.speed_gain", [](RunConfig& r, double v) { r.clf.speed_gain = v; }},
      {"clf.v_ref", [](RunConfig& r, double v) { r.clf.v_ref = v; }},
      {"clf.robustness_margin", [](RunConfig& r, double v) { r.clf.robustness_margin = v; }},
      {"clf.baseline.k1", [](RunConfig& r, double v) { r.baseline.k1 = v; }},
      {"clf.baseline.k2", [](RunConfig& r, double v) { r.baseline.k2 = v; }},
      {"clf.baseline.c1", [](RunConfig& r, double v) { r.baseline.c1 = v; }},
  };
  return params;
}

inline const SweepParameter& find_sweep_parameter(const std::string& name) {
  std::string valid;
  for (const auto& p : sweep_parameters()) {
    if (p.name == name) return p;
    valid += (valid.empty() ? "" : ", ") + p.name;
  }
  throw ValidationError("sweep.parameter", "unknown parameter '" + name + "'; valid names: " + valid);
}

struct SweepRow {
  double value = 0.0;
  std::vector<Metrics> per_suite;  // in rc.sweep_suites order
};

/// Fixed-CLF benchmark on each sweep suite for every value of one parameter.
inline std::vector<SweepRow> cmd_sweep(const RunConfig& rc, std::ostream& log) {
  const SweepParameter& param = find_sweep_parameter(rc.sweep_parameter);
  detail::require(!rc.sweep_values.empty(), "sweep.values", "need at least one value");
  detail::require(!rc.sweep_suites.empty(), "sweep.suites", "need at least one suite");
  std::vector<std::vector<PathSpec>> suites;
  for (const auto& name : rc.sweep_suites) suites.push_back(make_suite(rc.suite(name)));

  std::vector<SweepRow> rows;
  for (double v : rc.sweep_values) {
    RunConfig r = rc;
    param.apply(r, v);
    try {
      r.clf.validate();
      r.baseline.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("sweep.values", param.name + "=" + csv::fmt(v) + " is invalid (" + e.what() + ")");
    }
    SweepRow row{v, {}};
    for (const auto& paths : suites) {
      const auto res = benchmark({{kFixedClf, fixed_clf_controller(r.baseline, r.clf, r.vehicle, {}, r.qp)}}, paths,
                                 r.vehicle, r.episode, rc.sweep_episodes, false);
      if (!res.front().error.empty()) throw std::runtime_error(res.front().error);
      row.per_suite.push_back(compute_metrics(res.front().logs, rc.lambdas));
    }
    rows.push_back(std::move(row));
  }

  const fs::path dir = fs::path(rc.out) / "sweep";
  cmd_detail::write_file(dir / "sweep.csv", [&](std::ostream& os) {
    os << "# " << provenance(rc) << " controller=" << kFixedClf << '\n';
    os << "parameter,value";
    for (const auto& s : rc.sweep_suites) os << ',' << s << "_mean_deviation," << s << "_interventions," << s << "_completed";
    os << '\n';
    for (const auto& row : rows) {
      os << param.name << ',' << csv::fmt(row.value);
      for (const auto& m : row.per_suite) os << ',' << csv::fmt(m.mean_deviation) << ',' << m.interventions << ',' << m.completed;
      os << '\n';
    }
  });
  std::vector<svg::Series> series;
  for (std::size_t k = 0; k < rc.sweep_suites.size(); ++k) {
    svg::Series s{rc.sweep_suites[k], {}, {}};
    for (const auto& row : rows) {
      s.x.push_back(row.value);
      s.y.push_back(row.per_suite[k].mean_deviation);
    }
    series.push_back(std::move(s));
  }
  cmd_detail::write_file(dir / "sweep.svg", [&](std::ostream& os) {
    svg::line_plot(os, series, {"Fixed-CLF sweep", param.name, "mean deviation [m]", provenance(rc)});
  });
  for (const auto& row : rows) {
    log << param.name << "=" << row.value;
    for (std::size_t k = 0; k < row.per_suite.size(); ++k)
      log << "  " << rc.sweep_suites[k] << ": " << std::setprecision(4) << row.per_suite[k].mean_deviation << " m";
    log << '\n';
  }
  return rows;
}

}  // namespace attclf
