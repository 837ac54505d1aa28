#pragma once

// Nonlinear MPC expert. Single shooting over a piecewise-constant control
// sequence, RK4 rollouts, reverse-mode gradients through the step Jacobians and
// projected gradient descent with a backtracking line search.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "attclf/errors.hpp"
#include "attclf/path_geometry.hpp"
#include "attclf/vehicle.hpp"

namespace attclf {

struct NmpcWeights {
  double d = 10.0;
  double mu = 5.0;
  double v = 1.0;
  double accel = 0.1;
  double steer_rate = 1.0;
  double terminal = 5.0;  // multiplies the state cost of the final state
};

struct NmpcConfig {
  int horizon_steps = 20;
  double dt = 0.1;
  NmpcWeights weights;
  double v_ref = 8.0;
  int max_iters = 200;
  double initial_step = 0.05;    // first trial step in normalized control units
  double min_step = 1e-12;
  double step_max = 10.0;
  double armijo = 1e-4;
  int max_backtracks = 40;
  double convergence_tol = 1e-7;  // projected-gradient infinity norm (normalized units)
  double singularity_penalty = 1e6;

  void validate() const {
    detail::require(horizon_steps >= 2, "nmpc.horizon_steps", "must be >= 2");
    detail::require(dt > 0.0, "nmpc.dt", "must be > 0");
    const NmpcWeights& w = weights;
    detail::require(w.d >= 0.0 && w.mu >= 0.0 && w.v >= 0.0 && w.accel >= 0.0 && w.steer_rate >= 0.0 &&
                        w.terminal >= 0.0,
                    "nmpc.weights", "all weights must be >= 0");
    detail::require(max_iters >= 0, "nmpc.max_iters", "must be >= 0");
    detail::require(initial_step > 0.0, "nmpc.initial_step", "must be > 0");
    detail::require(convergence_tol >= 0.0, "nmpc.convergence_tol", "must be >= 0");
  }
};

struct NmpcRollout {
  double cost = 0.0;
  std::vector<VehicleState> states;  // x_0 .. x_K, K = executed steps
  bool truncated = false;            // hit the Frenet singularity
  Eigen::MatrixXd gradient;          // horizon x 2, d cost / d u_k (physical units)
};

namespace detail {

inline double nmpc_state_cost(const NmpcConfig& cfg, const VehicleState& x) {
  const NmpcWeights& w = cfg.weights;
  const double ev = x.v - cfg.v_ref;
  return w.d * x.d * x.d + w.mu * x.mu * x.mu + w.v * ev * ev;
}

inline Vector5 nmpc_state_cost_grad(const NmpcConfig& cfg, const VehicleState& x) {
  const NmpcWeights& w = cfg.weights;
  Vector5 g = Vector5::Zero();
  g(1) = 2.0 * w.d * x.d;
  g(2) = 2.0 * w.mu * x.mu;
  g(3) = 2.0 * w.v * (x.v - cfg.v_ref);
  return g;
}

inline double nmpc_control_cost(const NmpcConfig& cfg, const ControlInput& u) {
  return cfg.weights.accel * u.accel * u.accel + cfg.weights.steer_rate * u.steer_rate * u.steer_rate;
}

}  // namespace detail

/// Cost of a control sequence, and optionally its gradient. Cost is
///   sum_k control(u_k) + sum_{k=1}^{N-1} state(x_k) + terminal * state(x_N).
/// A rollout that reaches the singularity stops there and is charged
/// singularity_penalty per missing step.
inline NmpcRollout nmpc_rollout(const NmpcConfig& cfg, const VehicleParams& p, const PathSpec& path,
                                const VehicleState& x0, const std::vector<ControlInput>& seq, bool with_gradient) {
  const int N = cfg.horizon_steps;
  if (static_cast<int>(seq.size()) != N) throw ValidationError("nmpc.sequence", "length must equal horizon_steps");
  NmpcRollout r;
  r.states.reserve(static_cast<std::size_t>(N) + 1);
  r.states.push_back(x0);
  std::vector<LinearizedStep> lin;
  if (with_gradient) lin.reserve(static_cast<std::size_t>(N));
  int executed = 0;
  for (int k = 0; k < N; ++k) {
    const ControlInput& u = seq[static_cast<std::size_t>(k)];
    r.cost += detail::nmpc_control_cost(cfg, u);
    try {
      if (with_gradient) {
        lin.push_back(step_rk4_linearized(p, path, r.states.back(), u, cfg.dt));
        r.states.push_back(lin.back().next);
      } else {
        r.states.push_back(step_rk4(p, path, r.states.back(), u, cfg.dt));
      }
    } catch (const SingularityError&) {
      r.truncated = true;
      break;
    }
    ++executed;
    const double mult = k + 1 == N ? cfg.weights.terminal : 1.0;
    r.cost += mult * detail::nmpc_state_cost(cfg, r.states.back());
  }
  if (r.truncated) r.cost += cfg.singularity_penalty * (N - executed);
  if (!std::isfinite(r.cost)) {
    r.truncated = true;
    r.cost = cfg.singularity_penalty * N;
  }
  if (!with_gradient) return r;

  r.gradient = Eigen::MatrixXd::Zero(N, 2);
  Vector5 adj = Vector5::Zero();  // d cost / d x_{k+1}
  for (int k = N - 1; k >= 0; --k) {
    const ControlInput& u = seq[static_cast<std::size_t>(k)];
    Eigen::Vector2d g(2.0 * cfg.weights.accel * u.accel, 2.0 * cfg.weights.steer_rate * u.steer_rate);
    if (k < executed) {
      const double mult = k + 1 == N ? cfg.weights.terminal : 1.0;
      adj += mult * detail::nmpc_state_cost_grad(cfg, r.states[static_cast<std::size_t>(k) + 1]);
      const LinearizedStep& L = lin[static_cast<std::size_t>(k)];
      g += L.B.transpose() * adj;
      adj = L.A.transpose() * adj;
    }
    r.gradient.row(k) = g.transpose();
  }
  return r;
}

struct NmpcResult {
  ControlInput first_control;
  std::vector<ControlInput> sequence;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  bool truncated = false;
  std::vector<double> cost_history;  // cost after each accepted iterate, starting with the initial guess
};

/// Minimizes the rollout cost over the clamped control sequence. `initial`
/// (typically the previous solution shifted by one step) defaults to zeros.
inline NmpcResult solve_nmpc(const NmpcConfig& cfg, const VehicleParams& p, const PathSpec& path,
                             const VehicleState& x0, const std::vector<ControlInput>* initial = nullptr) {
  cfg.validate();
  const int N = cfg.horizon_steps;
  // Optimize in normalized units so both channels see comparable step sizes.
  const Eigen::Vector2d scale(0.5 * (p.accel.max - p.accel.min), 0.5 * (p.steer_rate.max - p.steer_rate.min));

  std::vector<ControlInput> u(static_cast<std::size_t>(N));
  if (initial != nullptr && static_cast<int>(initial->size()) == N) u = *initial;
  for (auto& c : u) c = clamp_control(p, c);

  auto project_step = [&](const std::vector<ControlInput>& base, const Eigen::MatrixXd& grad, double alpha) {
    std::vector<ControlInput> out(base.size());
    for (int k = 0; k < N; ++k) {
      const auto i = static_cast<std::size_t>(k);
      out[i] = clamp_control(p, {base[i].accel - alpha * scale(0) * scale(0) * grad(k, 0),
                                 base[i].steer_rate - alpha * scale(1) * scale(1) * grad(k, 1)});
    }
    return out;
  };
  auto to_matrix = [&](const std::vector<ControlInput>& s) {
    Eigen::MatrixXd m(N, 2);
    for (int k = 0; k < N; ++k) {
      m(k, 0) = s[static_cast<std::size_t>(k)].accel / scale(0);
      m(k, 1) = s[static_cast<std::size_t>(k)].steer_rate / scale(1);
    }
    return m;
  };

  NmpcResult res;
  NmpcRollout cur = nmpc_rollout(cfg, p, path, x0, u, true);
  res.cost_history.push_back(cur.cost);
  double alpha = cfg.initial_step;
  Eigen::MatrixXd prev_z, prev_g;
  for (int it = 0; it < cfg.max_iters; ++it) {
    // Gradient in normalized units.
    Eigen::MatrixXd gz = cur.gradient;
    gz.col(0) *= scale(0);
    gz.col(1) *= scale(1);
    const Eigen::MatrixXd z = to_matrix(u);
    const Eigen::MatrixXd pg = z - to_matrix(project_step(u, cur.gradient, 1.0));
    if (pg.cwiseAbs().maxCoeff() <= cfg.convergence_tol) {
      res.converged = true;
      break;
    }
    if (prev_z.size() > 0) {
      // Barzilai-Borwein trial step.
      const double sy = (z - prev_z).cwiseProduct(gz - prev_g).sum();
      const double ss = (z - prev_z).squaredNorm();
      if (sy > 0.0) alpha = std::clamp(ss / sy, cfg.min_step, cfg.step_max);
    }
    bool accepted = false;
    std::vector<ControlInput> trial;
    NmpcRollout next;
    for (int b = 0; b < cfg.max_backtracks; ++b) {
      trial = project_step(u, cur.gradient, alpha);
      next = nmpc_rollout(cfg, p, path, x0, trial, false);
      const double decrease = gz.cwiseProduct(z - to_matrix(trial)).sum();
      if (next.cost <= cur.cost - cfg.armijo * decrease && decrease > 0.0) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
      if (alpha < cfg.min_step) break;
    }
    ++res.iterations;
    if (!accepted) {
      res.converged = true;
      break;
    }
    prev_z = z;
    prev_g = gz;
    u = std::move(trial);
    cur = nmpc_rollout(cfg, p, path, x0, u, true);
    res.cost_history.push_back(cur.cost);
  }
  res.sequence = u;
  res.first_control = u.front();
  res.cost = cur.cost;
  res.truncated = cur.truncated;
  return res;
}

/// Shifts a sequence forward by `elapsed` seconds (linear interpolation between
/// held controls, last control repeated).
inline std::vector<ControlInput> shift_sequence(const std::vector<ControlInput>& seq, double elapsed, double dt) {
  std::vector<ControlInput> out(seq.size());
  const double offset = elapsed / dt;
  const auto last = static_cast<double>(seq.size()) - 1.0;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    const double t = std::min(static_cast<double>(k) + offset, last);
    const auto i = static_cast<std::size_t>(std::floor(t));
    const std::size_t j = std::min(i + 1, seq.size() - 1);
    const double f = t - static_cast<double>(i);
    out[k] = {(1.0 - f) * seq[i].accel + f * seq[j].accel, (1.0 - f) * seq[i].steer_rate + f * seq[j].steer_rate};
  }
  return out;
}

/// Receding-horizon wrapper carrying the warm-start sequence of one rollout.
class NmpcController {
 public:
  NmpcController(NmpcConfig cfg, VehicleParams params, const PathSpec& path, double control_period)
      : cfg_(std::move(cfg)), params_(std::move(params)), path_(&path), period_(control_period) {
    cfg_.validate();
  }

  NmpcResult operator()(const VehicleState& x) {
    std::optional<std::vector<ControlInput>> guess;
    if (!previous_.empty()) guess = shift_sequence(previous_, period_, cfg_.dt);
    NmpcResult r = solve_nmpc(cfg_, params_, *path_, x, guess ? &*guess : nullptr);
    previous_ = r.sequence;
    return r;
  }

  void reset() { previous_.clear(); }

 private:
  NmpcConfig cfg_;
  VehicleParams params_;
  const PathSpec* path_;
  double period_;
  std::vector<ControlInput> previous_;
};

}  // namespace attclf
