#pragma once

// Closed-loop controller closures used by the simulation harness. A factory
// builds one closure per episode so per-rollout state (NMPC warm starts,
// observation-noise generators) never leaks between episodes.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "attclf/clf.hpp"
#include "attclf/learner.hpp"
#include "attclf/nmpc.hpp"
#include "attclf/path_geometry.hpp"
#include "attclf/uncertainty.hpp"
#include "attclf/vehicle.hpp"

namespace attclf {

struct ControlStep {
  ControlInput control;
  double V = std::numeric_limits<double>::quiet_NaN();
  double slack = std::numeric_limits<double>::quiet_NaN();
  std::optional<AttentionParams> attention;
};

using Controller = std::function<ControlStep(const VehicleState&)>;
using ControllerFactory = std::function<Controller(const PathSpec& path, std::uint64_t episode_seed)>;

inline ControllerFactory zero_controller() {
  return [](const PathSpec&, std::uint64_t) { return [](const VehicleState&) { return ControlStep{}; }; };
}

/// True state corrupted by independent Gaussian noise on (d, mu, v, delta).
inline VehicleState noisy_observation(const VehicleState& x, const ObservationNoise& noise, std::mt19937_64& rng) {
  if (noise.zero()) return x;
  std::normal_distribution<double> n01;
  VehicleState y = x;
  y.d += noise.d * n01(rng);
  y.mu += noise.mu * n01(rng);
  y.v += noise.v * n01(rng);
  y.delta += noise.delta * n01(rng);
  return y;
}

/// CLF-QP with constant attention parameters on the (optionally noisy) observed state.
inline ControllerFactory fixed_clf_controller(AttentionParams att, ClfConfig clf, VehicleParams p,
                                              ObservationNoise noise = {}, QpSettings qp = {}) {
  att.validate();
  clf.validate();
  noise.validate();
  return [=](const PathSpec& path, std::uint64_t seed) {
    auto rng = std::make_shared<std::mt19937_64>(mix_seed(seed, 0x0B5));
    return [=, &path](const VehicleState& x) {
      const ClfStep s = att_clf_control(att, clf, p, path, noisy_observation(x, noise, *rng), qp);
      return ControlStep{s.control, s.V, s.slack, att};
    };
  };
}

/// Learned attention on clean features of the true state.
inline ControllerFactory att_clf_true_controller(AttentionHead head, FeatureConfig fc, ClfConfig clf,
                                                 VehicleParams p, QpSettings qp = {}) {
  clf.validate();
  detail::require(head.input_dim() == fc.dim(), "head.input_dim", "does not match the feature configuration");
  return [=](const PathSpec& path, std::uint64_t) {
    return [=, &path](const VehicleState& x) {
      const AttentionParams att = head.forward(featurize(fc, path, x)).att;
      const ClfStep s = att_clf_control(att, clf, p, path, x, qp);
      return ControlStep{s.control, s.V, s.slack, att};
    };
  };
}

/// Learned attention plus state estimates from noisy features. The estimate is
/// propagated through the QP with `ucfg.samples` draws (1 = the mean only) and
/// the control is the KDE mode over the probe set. V and slack are those of the
/// mean hypothesis.
inline ControllerFactory att_clf_estimated_controller(AttentionHead head, FeatureConfig fc, ObservationNoise noise,
                                                      UncertaintyConfig ucfg, ClfConfig clf, VehicleParams p,
                                                      QpSettings qp = {}) {
  clf.validate();
  ucfg.validate();
  noise.validate();
  detail::require(head.config().state_estimate, "head.state_estimate", "estimated mode needs state outputs");
  detail::require(head.input_dim() == fc.dim(), "head.input_dim", "does not match the feature configuration");
  return [=](const PathSpec& path, std::uint64_t seed) {
    auto obs_rng = std::make_shared<std::mt19937_64>(mix_seed(seed, 0x0B5));
    auto sample_rng = std::make_shared<std::mt19937_64>(mix_seed(seed, 0x5A3));
    return [=, &path](const VehicleState& x) {
      const Eigen::VectorXd z = featurize(fc, path, x, noise, obs_rng.get());
      const HeadOutput f = head.forward(z);
      const ControllerView view = controller_view(ObservationMode::estimated, fc, x, 0.0, z, f);
      if (ucfg.common_draws) sample_rng->seed(mix_seed(seed, 0x5A3));
      const UncertainControl uc = uncertain_control(f.att, clf, p, *f.estimate, view.state, ucfg, *sample_rng,
                                                    uniform_prior, qp);
      ControlStep out{uc.control, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
                      f.att};
      try {
        const ClfStep mean_step = att_clf_control(f.att, clf, p, view.kappa, view.state, qp);
        out.V = mean_step.V;
        out.slack = mean_step.slack;
      } catch (const SingularityError&) {
      }
      return out;
    };
  };
}

/// Receding-horizon NMPC, warm-started within the episode.
inline ControllerFactory nmpc_controller(NmpcConfig cfg, VehicleParams p, double control_period) {
  cfg.validate();
  return [=](const PathSpec& path, std::uint64_t) {
    auto ctl = std::make_shared<NmpcController>(cfg, p, path, control_period);
    return [ctl](const VehicleState& x) {
      ControlStep s;
      s.control = (*ctl)(x).first_control;
      return s;
    };
  };
}

}  // namespace attclf
