#pragma once

// End-to-end building blocks shared by the command-line tool and the
// acceptance suite: track suites, expert data collection, dataset I/O.

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "attclf/controllers.hpp"
#include "attclf/csv.hpp"
#include "attclf/learner.hpp"
#include "attclf/nmpc.hpp"
#include "attclf/path_geometry.hpp"
#include "attclf/sim.hpp"

namespace attclf {

struct SuiteSpec {
  TrackKind kind = TrackKind::random;
  int count = 5;
  std::uint64_t seed = 1;
  TrackParams params;

  void validate() const {
    detail::require(count >= 1, "suite.count", "must be >= 1");
    params.validate(kind);
  }
};

/// Track i of a suite is make_track(kind, mix_seed(seed, i), params).
inline std::vector<PathSpec> make_suite(const SuiteSpec& spec) {
  spec.validate();
  std::vector<PathSpec> out;
  for (int i = 0; i < spec.count; ++i) {
    out.push_back(make_track(spec.kind, mix_seed(spec.seed, static_cast<std::uint64_t>(i)), spec.params));
  }
  return out;
}

struct ExpertDataset {
  std::vector<ExpertSample> samples;
  int episodes = 0;
  int excluded = 0;  // singular episodes, dropped entirely
  double mean_deviation = 0.0;  // over the kept episodes
};

/// Gaussian perturbation added to the executed control during expert
/// collection. Labels stay the unperturbed expert output, so the dataset
/// covers recoveries from states the expert alone would never visit.
struct ExplorationNoise {
  double accel = 0.0;       // m/s^2
  double steer_rate = 0.0;  // rad/s

  void validate() const {
    detail::require(accel >= 0.0 && steer_rate >= 0.0, "expert.exploration", "standard deviations must be >= 0");
  }
};

/// Rolls the NMPC expert over the paths (episode i on path i mod n, initial
/// state and noise seeded by episode_seed(ec, i)) and keeps every step of
/// non-singular episodes as a labelled sample.
inline ExpertDataset collect_expert(const NmpcConfig& nmpc, const VehicleParams& p, const FeatureConfig& fc,
                                    const std::vector<PathSpec>& paths, const EpisodeConfig& ec, int episodes,
                                    const ExplorationNoise& explore = {}) {
  fc.validate();
  ec.validate();
  explore.validate();
  detail::require(!paths.empty(), "expert.paths", "need at least one path");
  detail::require(episodes >= 1, "expert.episodes", "must be >= 1");
  ExpertDataset ds;
  ds.episodes = episodes;
  double dev_sum = 0.0;
  std::size_t dev_n = 0;
  std::normal_distribution<double> n01;
  for (int i = 0; i < episodes; ++i) {
    const auto pid = static_cast<std::size_t>(i) % paths.size();
    const PathSpec& path = paths[pid];
    const std::uint64_t seed = episode_seed(ec, i);
    std::mt19937_64 rng(mix_seed(seed, 0xE4));
    NmpcController expert(nmpc, p, path, ec.dt);
    VehicleState x = sample_initial_state(ec, path, seed);
    std::vector<ExpertSample> episode;
    bool singular = false;
    for (int k = 0; k < ec.max_steps; ++k) {
      if (std::abs(x.d) > ec.intervention_threshold) break;
      const ControlInput label = clamp_control(p, expert(x).first_control);
      ExpertSample s;
      s.path_id = static_cast<int>(pid);
      s.t = k * ec.dt;
      s.state = x;
      s.kappa = path.curvature_at(x.s);
      s.features = featurize(fc, path, x);
      s.expert = label;
      episode.push_back(std::move(s));
      ControlInput applied = label;
      if (explore.accel > 0.0 || explore.steer_rate > 0.0) {
        applied.accel += explore.accel * n01(rng);
        applied.steer_rate += explore.steer_rate * n01(rng);
      }
      try {
        x = step_rk4(p, path, x, clamp_control(p, applied), ec.dt);
      } catch (const SingularityError&) {
        singular = true;
        break;
      }
    }
    if (singular) {
      ++ds.excluded;
      continue;
    }
    for (auto& s : episode) {
      dev_sum += std::abs(s.state.d);
      ++dev_n;
      ds.samples.push_back(std::move(s));
    }
  }
  if (dev_n > 0) ds.mean_deviation = dev_sum / static_cast<double>(dev_n);
  return ds;
}

inline void write_dataset_csv(std::ostream& os, const std::vector<ExpertSample>& data, int feature_dim) {
  os << "path_id,t,s,d,mu,v,delta,kappa";
  for (int i = 0; i < feature_dim; ++i) os << ",f" << i;
  os << ",u_a,u_w\n";
  for (const ExpertSample& s : data) {
    os << s.path_id;
    for (double v : {s.t, s.state.s, s.state.d, s.state.mu, s.state.v, s.state.delta, s.kappa}) os << ',' << csv::fmt(v);
    for (int i = 0; i < feature_dim; ++i) os << ',' << csv::fmt(s.features(i));
    os << ',' << csv::fmt(s.expert.accel) << ',' << csv::fmt(s.expert.steer_rate) << '\n';
  }
}

inline std::vector<ExpertSample> read_dataset_csv(std::istream& is, int feature_dim) {
  const csv::Table t = csv::read(is);
  auto col = [&](const std::string& n) { return t.column(n); };
  const std::size_t c_pid = col("path_id"), c_t = col("t"), c_s = col("s"), c_d = col("d"), c_mu = col("mu"),
                    c_v = col("v"), c_delta = col("delta"), c_k = col("kappa"), c_ua = col("u_a"), c_uw = col("u_w");
  std::vector<std::size_t> c_f;
  for (int i = 0; i < feature_dim; ++i) c_f.push_back(col("f" + std::to_string(i)));
  if (t.column("u_a") != static_cast<std::size_t>(8 + feature_dim)) {
    throw ValidationError("dataset", "feature columns do not match the configured feature dimension");
  }
  std::vector<ExpertSample> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    ExpertSample s;
    s.path_id = static_cast<int>(csv::to_double(r[c_pid], "path_id"));
    s.t = csv::to_double(r[c_t], "t");
    s.state = {csv::to_double(r[c_s], "s"), csv::to_double(r[c_d], "d"), csv::to_double(r[c_mu], "mu"),
               csv::to_double(r[c_v], "v"), csv::to_double(r[c_delta], "delta")};
    s.kappa = csv::to_double(r[c_k], "kappa");
    s.features.resize(feature_dim);
    for (int i = 0; i < feature_dim; ++i) s.features(i) = csv::to_double(r[c_f[static_cast<std::size_t>(i)]], "f");
    s.expert = {csv::to_double(r[c_ua], "u_a"), csv::to_double(r[c_uw], "u_w")};
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace attclf
