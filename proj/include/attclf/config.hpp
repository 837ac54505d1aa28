#pragma once

// Run configuration: a JSON document merged over built-in defaults, then
// decoded into the typed configuration structs of every module. Unknown keys
// are rejected so typos surface as validation errors instead of silent no-ops.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "attclf/clf.hpp"
#include "attclf/errors.hpp"
#include "attclf/learner.hpp"
#include "attclf/nmpc.hpp"
#include "attclf/path_geometry.hpp"
#include "attclf/pipeline.hpp"
#include "attclf/qp.hpp"
#include "attclf/sim.hpp"
#include "attclf/uncertainty.hpp"
#include "attclf/vehicle.hpp"

namespace attclf {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

inline json default_config() {
  return json::parse(R"({
  "seed": 1,
  "out": "out",
  "vehicle": {
    "l_r": 1.4, "l_f": 1.4,
    "accel": [-4.0, 3.0], "steer_rate": [-0.5, 0.5], "steer_angle": [-0.5, 0.5], "speed": [0.0, 20.0],
    "denom_tol": 0.001
  },
  "clf": {
    "epsilon": 0.8, "slack_weight": 1000.0, "control_cost": [1.0, 4.0],
    "v_ref": 8.0, "speed_gain": 1.0, "robustness_margin": 0.0,
    "baseline": [1.0, 1.0, 1.0]
  },
  "qp": {"max_iter": 100, "feasibility_tol": 1e-10, "kkt_tol": 1e-8, "degenerate_tol": 1e-8},
  "nmpc": {
    "horizon_steps": 20, "dt": 0.1, "v_ref": 8.0, "max_iters": 200, "online_max_iters": 30,
    "initial_step": 0.05, "convergence_tol": 1e-7,
    "weights": {"d": 10.0, "mu": 5.0, "v": 1.0, "accel": 0.1, "steer_rate": 1.0, "terminal": 5.0}
  },
  "tracks": {
    "kind": "random", "count": 5, "length": 300.0, "radius": 50.0, "lane_half_width": 2.0,
    "smoothing_window": 0.0, "segment_length": [20.0, 80.0], "curvature": [0.01, 0.05],
    "straight_probability": 0.3
  },
  "suites": {
    "straight": {"kind": "straight", "count": 1, "length": 300.0},
    "sharp": {"kind": "s_curve", "count": 1, "length": 300.0, "radius": 15.0}
  },
  "episode": {
    "max_steps": 300, "dt": 0.05, "intervention_threshold": 1.5,
    "d0": [-0.5, 0.5], "mu0": [-0.1, 0.1], "v0": [6.0, 10.0], "random_s": true
  },
  "expert": {"episodes": 10, "exploration": {"accel": 1.0, "steer_rate": 0.25}},
  "features": {
    "lookaheads": [0.0, 5.0, 10.0, 20.0, 40.0],
    "kappa_scale": 0.05, "d_scale": 1.0, "mu_scale": 0.3, "v_center": 8.0, "v_scale": 4.0, "delta_scale": 0.3
  },
  "head": {"hidden": [32, 32], "positive_floor": 0.001},
  "train": {
    "learning_rate": 0.001, "batch_size": 32, "epochs": 20, "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8,
    "control_weights": [0.1, 1.0], "state_weight": 1.0, "aux_weight": 0.0, "max_skip_fraction": 0.1
  },
  "noise": {"d": 0.05, "mu": 0.01, "v": 0.1, "delta": 0.005},
  "uncertainty": {"samples": 20, "grid": 21, "bandwidth_floor": 1e-4, "common_draws": true},
  "benchmark": {"episodes": 50, "profile_bins": 10, "recall_max": 2.0, "recall_step": 0.05},
  "sweep": {"parameter": "clf.epsilon", "values": [0.2, 0.8, 2.0], "suites": ["straight", "sharp"], "episodes": 20}
})");
}

/// Recursively overlays `patch` onto `base`. Every key of `patch` must exist in
/// `base`; objects merge, everything else replaces. Entries under "suites" may
/// be added, since suites are user-defined.
inline void merge_config(json& base, const json& patch, const std::string& where = "") {
  if (!patch.is_object()) throw ValidationError(where.empty() ? "config" : where, "expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) {
      if (where == "suites") {
        base[it.key()] = it.value();
        continue;
      }
      throw ValidationError(key, "unknown configuration key");
    }
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object() && where != "suites") {
      merge_config(slot, it.value(), key);
    } else if (slot.is_object() && it.value().is_object()) {
      for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) slot[jt.key()] = jt.value();
    } else {
      slot = it.value();
    }
  }
}

/// Applies one `dotted.key=value` override; the value is parsed as JSON when
/// possible and taken as a string otherwise.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_config(cfg, patch);
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config", "cannot open '" + path + "'");
  json j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ValidationError("config", "'" + path + "' is not valid JSON");
  return j;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the canonical configuration dump. The output directory is excluded
/// so identical runs into different directories carry the same hash.
inline std::string config_hash(json cfg) {
  cfg.erase("out");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(cfg.dump())));
  return buf;
}

struct RunConfig {
  json raw;
  std::string hash;
  std::uint64_t seed = 1;
  std::string out = "out";
  VehicleParams vehicle;
  ClfConfig clf;
  AttentionParams baseline;
  QpSettings qp;
  NmpcConfig nmpc;
  int nmpc_online_iters = 30;
  SuiteSpec tracks;
  std::vector<std::pair<std::string, SuiteSpec>> suites;
  EpisodeConfig episode;
  int expert_episodes = 10;
  ExplorationNoise exploration;
  FeatureConfig features;
  HeadConfig head;
  TrainConfig train;
  ObservationNoise noise;
  UncertaintyConfig uncertainty;
  int benchmark_episodes = 50;
  int profile_bins = 10;
  std::vector<double> lambdas;
  std::string sweep_parameter;
  std::vector<double> sweep_values;
  std::vector<std::string> sweep_suites;
  int sweep_episodes = 20;

  NmpcConfig online_nmpc() const {
    NmpcConfig c = nmpc;
    c.max_iters = nmpc_online_iters;
    return c;
  }
  const SuiteSpec& suite(const std::string& name) const {
    for (const auto& [n, s] : suites)
      if (n == name) return s;
    throw ValidationError("suites", "no suite named '" + name + "'");
  }
};

/// Seed of one pipeline stage, derived from the top-level seed.
inline std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) { return mix_seed(seed, fnv1a(stage)); }

namespace detail {

inline const json& at(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + "." + key, "missing");
  return j.at(key);
}

inline double num(const json& j, const std::string& key, const std::string& where) {
  const json& v = at(j, key, where);
  if (!v.is_number()) throw ValidationError(where + "." + key, "expected a number");
  return v.get<double>();
}

inline int integer(const json& j, const std::string& key, const std::string& where) {
  const json& v = at(j, key, where);
  if (!v.is_number_integer()) throw ValidationError(where + "." + key, "expected an integer");
  return v.get<int>();
}

inline bool boolean(const json& j, const std::string& key, const std::string& where) {
  const json& v = at(j, key, where);
  if (!v.is_boolean()) throw ValidationError(where + "." + key, "expected true or false");
  return v.get<bool>();
}

inline std::vector<double> numbers(const json& j, const std::string& key, const std::string& where,
                                   std::size_t n = 0) {
  const json& v = at(j, key, where);
  if (!v.is_array()) throw ValidationError(where + "." + key, "expected an array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ValidationError(where + "." + key, "expected numbers");
    out.push_back(e.get<double>());
  }
  if (n != 0 && out.size() != n) {
    throw ValidationError(where + "." + key, "expected " + std::to_string(n) + " entries");
  }
  return out;
}

inline Bounds bounds(const json& j, const std::string& key, const std::string& where) {
  const auto v = numbers(j, key, where, 2);
  return {v[0], v[1]};
}

inline SuiteSpec suite_spec(const json& j, const std::string& where, std::uint64_t seed) {
  static const json defaults = default_config()["tracks"];
  json merged = defaults;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ValidationError(where + "." + it.key(), "unknown track key");
    merged[it.key()] = it.value();
  }
  SuiteSpec s;
  const json& kind = merged.at("kind");
  if (!kind.is_string()) throw ValidationError(where + ".kind", "expected a string");
  s.kind = parse_track_kind(kind.get<std::string>());
  s.count = integer(merged, "count", where);
  s.seed = seed;
  TrackParams& p = s.params;
  p.length = num(merged, "length", where);
  p.radius = num(merged, "radius", where);
  p.lane_half_width = num(merged, "lane_half_width", where);
  p.smoothing_window = num(merged, "smoothing_window", where);
  const Bounds seg = bounds(merged, "segment_length", where);
  p.segment_length_min = seg.min;
  p.segment_length_max = seg.max;
  const Bounds k = bounds(merged, "curvature", where);
  p.curvature_min = k.min;
  p.curvature_max = k.max;
  p.straight_probability = num(merged, "straight_probability", where);
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(where + "." + e.field(), e.what());
  }
  return s;
}

}  // namespace detail

/// Decodes and validates a merged configuration document.
inline RunConfig parse_run_config(const json& cfg) {
  using detail::boolean;
  using detail::bounds;
  using detail::integer;
  using detail::num;
  using detail::numbers;
  RunConfig rc;
  rc.raw = cfg;
  rc.hash = config_hash(cfg);
  const json& seed = detail::at(cfg, "seed", "config");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0)) {
    throw ValidationError("seed", "expected a non-negative integer");
  }
  rc.seed = seed.get<std::uint64_t>();
  if (!cfg.at("out").is_string()) throw ValidationError("out", "expected a string");
  rc.out = cfg.at("out").get<std::string>();

  const json& v = cfg.at("vehicle");
  rc.vehicle.l_r = num(v, "l_r", "vehicle");
  rc.vehicle.l_f = num(v, "l_f", "vehicle");
  rc.vehicle.accel = bounds(v, "accel", "vehicle");
  rc.vehicle.steer_rate = bounds(v, "steer_rate", "vehicle");
  rc.vehicle.steer_angle = bounds(v, "steer_angle", "vehicle");
  rc.vehicle.speed = bounds(v, "speed", "vehicle");
  rc.vehicle.denom_tol = num(v, "denom_tol", "vehicle");
  rc.vehicle.validate();

  const json& c = cfg.at("clf");
  rc.clf.epsilon = num(c, "epsilon", "clf");
  rc.clf.slack_weight = num(c, "slack_weight", "clf");
  const auto cc = numbers(c, "control_cost", "clf", 2);
  rc.clf.control_cost = {cc[0], cc[1]};
  rc.clf.v_ref = num(c, "v_ref", "clf");
  rc.clf.speed_gain = num(c, "speed_gain", "clf");
  rc.clf.robustness_margin = num(c, "robustness_margin", "clf");
  rc.clf.validate();
  const auto b = numbers(c, "baseline", "clf", 3);
  rc.baseline = {b[0], b[1], b[2]};
  try {
    rc.baseline.validate();
  } catch (const ValidationError&) {
    throw ValidationError("clf.baseline", "k1, k2, c1 must all be > 0");
  }

  const json& q = cfg.at("qp");
  rc.qp.max_iter = integer(q, "max_iter", "qp");
  rc.qp.feasibility_tol = num(q, "feasibility_tol", "qp");
  rc.qp.kkt_tol = num(q, "kkt_tol", "qp");
  rc.qp.degenerate_tol = num(q, "degenerate_tol", "qp");
  ::attclf::detail::require(rc.qp.max_iter >= 1, "qp.max_iter", "must be >= 1");
  ::attclf::detail::require(rc.qp.feasibility_tol > 0 && rc.qp.kkt_tol > 0 && rc.qp.degenerate_tol > 0, "qp",
                            "tolerances must be > 0");

  const json& n = cfg.at("nmpc");
  rc.nmpc.horizon_steps = integer(n, "horizon_steps", "nmpc");
  rc.nmpc.dt = num(n, "dt", "nmpc");
  rc.nmpc.v_ref = num(n, "v_ref", "nmpc");
  rc.nmpc.max_iters = integer(n, "max_iters", "nmpc");
  rc.nmpc_online_iters = integer(n, "online_max_iters", "nmpc");
  rc.nmpc.initial_step = num(n, "initial_step", "nmpc");
  rc.nmpc.convergence_tol = num(n, "convergence_tol", "nmpc");
  const json& w = detail::at(n, "weights", "nmpc");
  rc.nmpc.weights = {num(w, "d", "nmpc.weights"),     num(w, "mu", "nmpc.weights"),
                     num(w, "v", "nmpc.weights"),     num(w, "accel", "nmpc.weights"),
                     num(w, "steer_rate", "nmpc.weights"), num(w, "terminal", "nmpc.weights")};
  rc.nmpc.validate();
  ::attclf::detail::require(rc.nmpc_online_iters >= 0, "nmpc.online_max_iters", "must be >= 0");

  rc.tracks = detail::suite_spec(cfg.at("tracks"), "tracks", stage_seed(rc.seed, "tracks"));
  for (auto it = cfg.at("suites").begin(); it != cfg.at("suites").end(); ++it) {
    rc.suites.emplace_back(it.key(), detail::suite_spec(it.value(), "suites." + it.key(),
                                                        stage_seed(rc.seed, "suite:" + it.key())));
  }

  const json& e = cfg.at("episode");
  rc.episode.max_steps = integer(e, "max_steps", "episode");
  rc.episode.dt = num(e, "dt", "episode");
  rc.episode.intervention_threshold = num(e, "intervention_threshold", "episode");
  rc.episode.init.d = bounds(e, "d0", "episode");
  rc.episode.init.mu = bounds(e, "mu0", "episode");
  rc.episode.init.v = bounds(e, "v0", "episode");
  rc.episode.init.random_s = boolean(e, "random_s", "episode");
  rc.episode.seed = stage_seed(rc.seed, "benchmark");
  rc.episode.validate();

  const json& x = cfg.at("expert");
  rc.expert_episodes = integer(x, "episodes", "expert");
  ::attclf::detail::require(rc.expert_episodes >= 1, "expert.episodes", "must be >= 1");
  const json& xe = detail::at(x, "exploration", "expert");
  rc.exploration = {num(xe, "accel", "expert.exploration"), num(xe, "steer_rate", "expert.exploration")};
  rc.exploration.validate();

  const json& f = cfg.at("features");
  rc.features.lookaheads = numbers(f, "lookaheads", "features");
  rc.features.kappa_scale = num(f, "kappa_scale", "features");
  rc.features.d_scale = num(f, "d_scale", "features");
  rc.features.mu_scale = num(f, "mu_scale", "features");
  rc.features.v_center = num(f, "v_center", "features");
  rc.features.v_scale = num(f, "v_scale", "features");
  rc.features.delta_scale = num(f, "delta_scale", "features");
  rc.features.validate();

  const json& h = cfg.at("head");
  const auto hidden = numbers(h, "hidden", "head", 2);
  rc.head.hidden1 = static_cast<int>(hidden[0]);
  rc.head.hidden2 = static_cast<int>(hidden[1]);
  rc.head.positive_floor = num(h, "positive_floor", "head");
  rc.head.validate();

  const json& t = cfg.at("train");
  rc.train.learning_rate = num(t, "learning_rate", "train");
  rc.train.batch_size = integer(t, "batch_size", "train");
  rc.train.epochs = integer(t, "epochs", "train");
  rc.train.beta1 = num(t, "beta1", "train");
  rc.train.beta2 = num(t, "beta2", "train");
  rc.train.adam_eps = num(t, "adam_eps", "train");
  const auto cw = numbers(t, "control_weights", "train", 2);
  rc.train.control_weights = {cw[0], cw[1]};
  rc.train.state_weight = num(t, "state_weight", "train");
  rc.train.aux_weight = num(t, "aux_weight", "train");
  rc.train.max_skip_fraction = num(t, "max_skip_fraction", "train");
  rc.train.seed = stage_seed(rc.seed, "train");

  const json& no = cfg.at("noise");
  rc.noise = {num(no, "d", "noise"), num(no, "mu", "noise"), num(no, "v", "noise"), num(no, "delta", "noise")};
  rc.noise.validate();
  rc.train.noise = rc.noise;
  rc.train.validate();

  const json& u = cfg.at("uncertainty");
  rc.uncertainty.samples = integer(u, "samples", "uncertainty");
  rc.uncertainty.grid = integer(u, "grid", "uncertainty");
  rc.uncertainty.bandwidth_floor = num(u, "bandwidth_floor", "uncertainty");
  rc.uncertainty.common_draws = boolean(u, "common_draws", "uncertainty");
  rc.uncertainty.validate();

  const json& bm = cfg.at("benchmark");
  rc.benchmark_episodes = integer(bm, "episodes", "benchmark");
  rc.profile_bins = integer(bm, "profile_bins", "benchmark");
  const double rmax = num(bm, "recall_max", "benchmark"), rstep = num(bm, "recall_step", "benchmark");
  ::attclf::detail::require(rc.benchmark_episodes >= 1, "benchmark.episodes", "must be >= 1");
  ::attclf::detail::require(rc.profile_bins >= 1, "benchmark.profile_bins", "must be >= 1");
  ::attclf::detail::require(rmax > 0 && rstep > 0, "benchmark.recall", "recall_max and recall_step must be > 0");
  for (int i = 0; i * rstep <= rmax + 1e-12; ++i) rc.lambdas.push_back(i * rstep);

  const json& sw = cfg.at("sweep");
  const json& sp = detail::at(sw, "parameter", "sweep");
  if (!sp.is_string()) throw ValidationError("sweep.parameter", "expected a string");
  rc.sweep_parameter = sp.get<std::string>();
  rc.sweep_values = numbers(sw, "values", "sweep");
  rc.sweep_episodes = integer(sw, "episodes", "sweep");
  ::attclf::detail::require(rc.sweep_episodes >= 1, "sweep.episodes", "must be >= 1");
  for (const auto& s : detail::at(sw, "suites", "sweep")) {
    if (!s.is_string()) throw ValidationError("sweep.suites", "expected suite names");
    rc.sweep_suites.push_back(s.get<std::string>());
    rc.suite(rc.sweep_suites.back());
  }
  return rc;
}

/// Defaults, then the optional config file, then `--set` overrides.
inline RunConfig load_run_config(const std::string& file, const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!file.empty()) merge_config(cfg, load_config_file(file));
  for (const auto& o : overrides) apply_override(cfg, o);
  return parse_run_config(cfg);
}

}  // namespace attclf
