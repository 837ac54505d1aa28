#pragma once

// Sampling-based uncertainty propagation through the att-CLF QP: state samples
// -> control samples -> product-Gaussian KDE -> prior-weighted argmax over a
// probe set.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "attclf/clf.hpp"
#include "attclf/errors.hpp"
#include "attclf/learner.hpp"
#include "attclf/qp.hpp"
#include "attclf/vehicle.hpp"

namespace attclf {

struct UncertaintyConfig {
  int samples = 20;
  int grid = 21;               // probes per control axis
  double bandwidth_floor = 1e-4;
  bool common_draws = false;   // reuse one set of standard-normal draws at every control step

  void validate() const {
    detail::require(samples >= 1, "uncertainty.samples", "must be >= 1");
    detail::require(grid >= 1, "uncertainty.grid", "must be >= 1");
    detail::require(bandwidth_floor > 0.0, "uncertainty.bandwidth_floor", "must be > 0");
  }
};

/// One sampled hypothesis: a vehicle state plus the curvature it is paired with.
struct StateSample {
  VehicleState state;
  double kappa = 0.0;
};

/// Sample 0 is the mean; the rest draw (d, mu, kappa) independently from the
/// estimate. A log-variance of -inf gives exact copies of the mean.
inline std::vector<StateSample> sample_states(const StateDistribution& dist, const VehicleState& base, int n,
                                              std::mt19937_64& rng) {
  detail::require(n >= 1, "uncertainty.samples", "must be >= 1");
  detail::require(dist.mean.allFinite(), "estimate.mean", "must be finite");
  const Eigen::Vector3d sd = (0.5 * dist.logvar.array()).exp().matrix();
  std::normal_distribution<double> n01;
  std::vector<StateSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    StateSample s{base, dist.mean(2)};
    s.state.d = dist.mean(0);
    s.state.mu = dist.mean(1);
    if (i > 0) {
      s.state.d += sd(0) * n01(rng);
      s.state.mu += sd(1) * n01(rng);
      s.kappa += sd(2) * n01(rng);
    }
    out.push_back(s);
  }
  return out;
}

struct Propagation {
  std::vector<ControlInput> controls;  // order of the surviving samples
  int dropped = 0;                     // singular or failed samples
};

/// Maps every state sample through the att-CLF QP with one batched solve.
inline Propagation propagate(const AttentionParams& att, const ClfConfig& clf, const VehicleParams& p,
                             const std::vector<StateSample>& samples, const QpSettings& qp_cfg = {}) {
  std::vector<QpProblem> problems;
  problems.reserve(samples.size());
  Propagation out;
  for (const StateSample& s : samples) {
    try {
      problems.push_back(clf_qp(attclf_constraint_coeffs(att, clf, p, s.kappa, s.state), clf, p, s.state));
    } catch (const SingularityError&) {
      ++out.dropped;
    }
  }
  for (const QpBatchEntry& e : solve_batch(problems, qp_cfg)) {
    if (!e.ok()) {
      ++out.dropped;
      continue;
    }
    out.controls.push_back({e.solution->primal(0), e.solution->primal(1)});
  }
  if (out.controls.empty()) throw std::runtime_error("uncertainty propagation: every state sample failed");
  return out;
}

/// Product Gaussian kernel density over (u_a, u_w).
struct ControlDistribution {
  std::vector<ControlInput> samples;
  Eigen::Vector2d bandwidth = Eigen::Vector2d::Ones();

  double density(const ControlInput& u) const {
    const double norm = 1.0 / (2.0 * std::numbers::pi * bandwidth(0) * bandwidth(1));
    double acc = 0.0;
    for (const ControlInput& s : samples) {
      const double za = (u.accel - s.accel) / bandwidth(0);
      const double zw = (u.steer_rate - s.steer_rate) / bandwidth(1);
      acc += std::exp(-0.5 * (za * za + zw * zw));
    }
    return norm * acc / static_cast<double>(samples.size());
  }
};

/// Scott's rule per dimension: h_j = sigma_j * N^(-1/6), sigma_j the sample
/// standard deviation (floored).
inline ControlDistribution kde(const std::vector<ControlInput>& samples, double floor = 1e-4) {
  detail::require(!samples.empty(), "kde.samples", "need at least one sample");
  ControlDistribution dist;
  dist.samples = samples;
  const auto n = static_cast<double>(samples.size());
  for (int j = 0; j < 2; ++j) {
    double sigma = 0.0;
    if (samples.size() >= 2) {
      double mean = 0.0;
      for (const auto& s : samples) mean += s.vec()(j);
      mean /= n;
      double ss = 0.0;
      for (const auto& s : samples) ss += (s.vec()(j) - mean) * (s.vec()(j) - mean);
      sigma = std::sqrt(ss / (n - 1.0));
    }
    dist.bandwidth(j) = std::max(sigma, floor) * std::pow(n, -1.0 / 6.0);
  }
  return dist;
}

using ControlPrior = std::function<double(const ControlInput&)>;

inline double uniform_prior(const ControlInput&) { return 1.0; }

/// Default probe set: the samples followed by a grid x grid lattice over the control box.
inline std::vector<ControlInput> default_probes(const ControlDistribution& dist, const VehicleParams& p, int grid) {
  std::vector<ControlInput> probes = dist.samples;
  for (int i = 0; i < grid; ++i) {
    const double ta = grid == 1 ? 0.5 : static_cast<double>(i) / (grid - 1);
    for (int j = 0; j < grid; ++j) {
      const double tw = grid == 1 ? 0.5 : static_cast<double>(j) / (grid - 1);
      probes.push_back({p.accel.min + ta * (p.accel.max - p.accel.min),
                        p.steer_rate.min + tw * (p.steer_rate.max - p.steer_rate.min)});
    }
  }
  return probes;
}

/// argmax over probes of prior(u) * density(u); ties go to the smaller |u|,
/// then to the lexicographically smaller (u_a, u_w).
inline ControlInput select_control(const ControlDistribution& dist, const ControlPrior& prior,
                                   const std::vector<ControlInput>& probes) {
  detail::require(!probes.empty(), "select_control.probes", "probe set must not be empty");
  const auto& s0 = dist.samples.front();
  if (std::all_of(dist.samples.begin(), dist.samples.end(), [&](const ControlInput& s) { return s == s0; })) {
    return s0;
  }
  auto better = [](double score, const ControlInput& u, double best_score, const ControlInput& best) {
    if (score != best_score) return score > best_score;
    const double nu = u.vec().squaredNorm(), nb = best.vec().squaredNorm();
    if (nu != nb) return nu < nb;
    if (u.accel != best.accel) return u.accel < best.accel;
    return u.steer_rate < best.steer_rate;
  };
  ControlInput best = probes.front();
  double best_score = prior(best) * dist.density(best);
  for (std::size_t i = 1; i < probes.size(); ++i) {
    const double score = prior(probes[i]) * dist.density(probes[i]);
    if (better(score, probes[i], best_score, best)) {
      best = probes[i];
      best_score = score;
    }
  }
  return best;
}

struct UncertainControl {
  ControlInput control;
  Propagation propagation;
  ControlDistribution distribution;
};

/// Full pipeline for one control step.
inline UncertainControl uncertain_control(const AttentionParams& att, const ClfConfig& clf, const VehicleParams& p,
                                          const StateDistribution& est, const VehicleState& base,
                                          const UncertaintyConfig& ucfg, std::mt19937_64& rng,
                                          const ControlPrior& prior = uniform_prior, const QpSettings& qp_cfg = {}) {
  ucfg.validate();
  UncertainControl r;
  r.propagation = propagate(att, clf, p, sample_states(est, base, ucfg.samples, rng), qp_cfg);
  r.distribution = kde(r.propagation.controls, ucfg.bandwidth_floor);
  r.control = select_control(r.distribution, prior, default_probes(r.distribution, p, ucfg.grid));
  return r;
}

}  // namespace attclf
