#pragma once

// State-feedback control Lyapunov functions with stability attention for lane
// tracking. Both d and mu have relative degree two, so the controller works on
// the transformed state y = (d, mu, xi1, xi2) with xi1 = d', xi2 = mu' and the
// candidate
//
//   V(y) = (d + k1 xi1)^2 + c1 (mu + k2 xi2)^2 = y' P y,   P = Q' Lambda Q.
//
// The decay condition dV/dt + eps V <= 0 is affine in the control and becomes
// the single relaxed inequality of a small QP over (u_a, u_w, slack).

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "attclf/errors.hpp"
#include "attclf/path_geometry.hpp"
#include "attclf/qp.hpp"
#include "attclf/vehicle.hpp"

namespace attclf {

using Vector4 = Eigen::Matrix<double, 4, 1>;
using Matrix4 = Eigen::Matrix<double, 4, 4>;
using Matrix42 = Eigen::Matrix<double, 4, 2>;
using Matrix45 = Eigen::Matrix<double, 4, 5>;

struct ClfConfig {
  double epsilon = 0.8;                 // 1/s, decay rate
  double slack_weight = 1000.0;
  Eigen::Vector2d control_cost{1.0, 4.0};  // diagonal of H over (u_a, u_w)
  double v_ref = 8.0;                   // m/s, tracked through u_a via F
  double speed_gain = 1.0;              // 1/s, u_a reference = speed_gain (v_ref - v)
  std::optional<ControlInput> reference_control;  // replaces the speed-tracking reference when set
  double robustness_margin = 0.0;       // tightens b; reserved for a bounded observation-rate term

  void validate() const {
    detail::require(epsilon > 0.0, "clf.epsilon", "must be > 0");
    detail::require(slack_weight > 0.0, "clf.slack_weight", "must be > 0");
    detail::require(control_cost(0) > 0.0 && control_cost(1) > 0.0, "clf.control_cost", "entries must be > 0");
    detail::require(speed_gain >= 0.0, "clf.speed_gain", "must be >= 0");
    detail::require(robustness_margin >= 0.0, "clf.robustness_margin", "must be >= 0");
  }
};

struct AttentionParams {
  double k1 = 1.0;  // s
  double k2 = 1.0;  // s
  double c1 = 1.0;

  void validate() const {
    detail::require(k1 > 0.0 && k2 > 0.0 && c1 > 0.0, "attention", "k1, k2, c1 must all be > 0");
  }
  Eigen::Vector3d vec() const { return {k1, k2, c1}; }
  bool operator==(const AttentionParams&) const = default;
};

struct TransformedState {
  double d = 0.0;
  double mu = 0.0;
  double xi1 = 0.0;  // d'
  double xi2 = 0.0;  // mu'

  Vector4 vec() const { return {d, mu, xi1, xi2}; }
};

struct ClfMatrices {
  Matrix4 P;
  Matrix4 Q;
  Matrix4 Lambda;
};

/// y from a vehicle state with an explicit curvature.
inline TransformedState transform_state(const VehicleParams& p, double kappa, const VehicleState& x) {
  const double den = frenet_denominator(p, x.d, kappa);
  const double beta = slip_angle(p, x.delta);
  const double xi1 = x.v * std::sin(x.mu + beta);
  const double xi2 = x.v / p.l_r * std::sin(beta) - kappa * x.v * std::cos(x.mu + beta) / den;
  return {x.d, x.mu, xi1, xi2};
}

inline TransformedState transform_state(const VehicleParams& p, const PathSpec& path, const VehicleState& x) {
  return transform_state(p, path.curvature_at(x.s), x);
}

/// dy/dx with curvature held constant (the s column is therefore zero).
inline Matrix45 transform_jacobian(const VehicleParams& p, double kappa, const VehicleState& x) {
  const double den = frenet_denominator(p, x.d, kappa);
  const double beta = slip_angle(p, x.delta);
  const double dbeta = slip_angle_derivative(p, x.delta);
  const double c = std::cos(x.mu + beta), sn = std::sin(x.mu + beta);
  Matrix45 J = Matrix45::Zero();
  J(0, 1) = 1.0;
  J(1, 2) = 1.0;
  J(2, 2) = x.v * c;
  J(2, 3) = sn;
  J(2, 4) = x.v * c * dbeta;
  J(3, 1) = -kappa * kappa * x.v * c / (den * den);
  J(3, 2) = kappa * x.v * sn / den;
  J(3, 3) = std::sin(beta) / p.l_r - kappa * c / den;
  J(3, 4) = dbeta * (x.v / p.l_r * std::cos(beta) + kappa * x.v * sn / den);
  return J;
}

inline ClfMatrices attclf_matrices(const AttentionParams& att) {
  ClfMatrices m;
  m.Q.setZero();
  m.Q.topLeftCorner<2, 2>().setIdentity();
  m.Q(0, 2) = att.k1;
  m.Q(1, 3) = att.k2;
  m.Lambda = Vector4(1.0, att.c1, 0.0, 0.0).asDiagonal();
  m.P = m.Q.transpose() * m.Lambda * m.Q;
  return m;
}

inline double attclf_value(const AttentionParams& att, const TransformedState& y) {
  const double e1 = y.d + att.k1 * y.xi1;
  const double e2 = y.mu + att.k2 * y.xi2;
  return e1 * e1 + att.c1 * e2 * e2;
}

/// dP/d(k1), dP/d(k2), dP/d(c1).
inline std::array<Matrix4, 3> attclf_matrix_partials(const AttentionParams& att) {
  const Vector4 q1(1.0, 0.0, att.k1, 0.0);
  const Vector4 q2(0.0, 1.0, 0.0, att.k2);
  const Vector4 e3 = Vector4::Unit(2), e4 = Vector4::Unit(3);
  return {e3 * q1.transpose() + q1 * e3.transpose(), att.c1 * (e4 * q2.transpose() + q2 * e4.transpose()),
          q2 * q2.transpose()};
}

struct AttentionComponent {
  int index = 0;          // row of Q y
  double value = 0.0;     // (Q y)_index
  double eigenvalue = 0.0;
};

/// The K components of Q y with the largest Lambda entries, descending, ties
/// broken by the lower index.
inline std::vector<AttentionComponent> stability_attention(const AttentionParams& att, const TransformedState& y,
                                                           int K) {
  if (K < 1 || K > 2) throw ValidationError("K", "stability attention needs 1 <= K <= 2");
  const ClfMatrices m = attclf_matrices(att);
  const Vector4 qy = m.Q * y.vec();
  std::vector<AttentionComponent> comps;
  for (int i = 0; i < 2; ++i) comps.push_back({i, qy(i), m.Lambda(i, i)});
  std::stable_sort(comps.begin(), comps.end(),
                   [](const AttentionComponent& a, const AttentionComponent& b) { return a.eigenvalue > b.eigenvalue; });
  comps.resize(static_cast<std::size_t>(K));
  return comps;
}

/// Lie-derivative pieces of the transformed dynamics at one state:
///   y' = drift + input * u.
struct TransformedDynamics {
  TransformedState y;
  Vector4 drift;
  Matrix42 input;
};

/// Evaluated by probing the control-affine vehicle dynamics at u = 0 and at the
/// unit controls, then mapping through dy/dx.
inline TransformedDynamics transformed_dynamics(const VehicleParams& p, double kappa, const VehicleState& x) {
  TransformedDynamics td;
  td.y = transform_state(p, kappa, x);
  const Matrix45 J = transform_jacobian(p, kappa, x);
  const Vector5 f0 = dynamics(p, kappa, x, {0.0, 0.0});
  const Vector5 fa = dynamics(p, kappa, x, {1.0, 0.0});
  const Vector5 fw = dynamics(p, kappa, x, {0.0, 1.0});
  td.drift = J * f0;
  td.input.col(0) = J * (fa - f0);
  td.input.col(1) = J * (fw - f0);
  return td;
}

/// a . u <= b, the affine form of dV/dt + eps V <= 0 (minus any robustness margin).
struct ConstraintCoeffs {
  Eigen::Vector2d a;
  double b = 0.0;
  double V = 0.0;
  double lie_drift = 0.0;  // dV/dt at u = 0
  TransformedDynamics dyn;

  /// dV/dt under a held control.
  double vdot(const ControlInput& u) const { return lie_drift + a.dot(u.vec()); }
};

inline ConstraintCoeffs attclf_constraint_coeffs(const AttentionParams& att, const ClfConfig& cfg,
                                                 const VehicleParams& p, double kappa, const VehicleState& x) {
  ConstraintCoeffs c;
  c.dyn = transformed_dynamics(p, kappa, x);
  const Matrix4 P = attclf_matrices(att).P;
  const Vector4 y = c.dyn.y.vec();
  const Vector4 grad = 2.0 * P * y;  // dV/dy
  c.V = y.dot(P * y);
  c.a = c.dyn.input.transpose() * grad;
  c.lie_drift = grad.dot(c.dyn.drift);
  c.b = -(c.lie_drift + cfg.epsilon * c.V) - cfg.robustness_margin;
  return c;
}

inline ConstraintCoeffs attclf_constraint_coeffs(const AttentionParams& att, const ClfConfig& cfg,
                                                 const VehicleParams& p, const PathSpec& path, const VehicleState& x) {
  return attclf_constraint_coeffs(att, cfg, p, path.curvature_at(x.s), x);
}

/// Partial derivatives of (a, b) with respect to (k1, k2, c1).
struct CoeffSensitivity {
  Eigen::Matrix<double, 2, 3> da;
  Eigen::Vector3d db;
};

inline CoeffSensitivity constraint_sensitivity(const AttentionParams& att, const ClfConfig& cfg,
                                               const ConstraintCoeffs& c) {
  const auto partials = attclf_matrix_partials(att);
  const Vector4 y = c.dyn.y.vec();
  CoeffSensitivity s;
  for (int j = 0; j < 3; ++j) {
    const Vector4 dgrad = 2.0 * partials[static_cast<std::size_t>(j)] * y;
    const double dV = y.dot(partials[static_cast<std::size_t>(j)] * y);
    s.da.col(j) = c.dyn.input.transpose() * dgrad;
    s.db(j) = -(dgrad.dot(c.dyn.drift) + cfg.epsilon * dV);
  }
  return s;
}

/// Reference control behind F: explicit reference, or speed tracking on u_a.
inline ControlInput reference_control(const ClfConfig& cfg, const VehicleState& x) {
  if (cfg.reference_control) return *cfg.reference_control;
  return {cfg.speed_gain * (cfg.v_ref - x.v), 0.0};
}

/// Decision vector (u_a, u_w, slack); one inequality a.u - slack <= b; slack >= 0.
inline QpProblem clf_qp(const ConstraintCoeffs& coeffs, const ClfConfig& cfg, const VehicleParams& p,
                        const VehicleState& x) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  QpProblem qp = QpProblem::make(3, 1);
  qp.H = Eigen::Vector3d(cfg.control_cost(0), cfg.control_cost(1), cfg.slack_weight).asDiagonal();
  const ControlInput ref = reference_control(cfg, x);
  qp.F << -cfg.control_cost(0) * ref.accel, -cfg.control_cost(1) * ref.steer_rate, 0.0;
  qp.G << coeffs.a(0), coeffs.a(1), -1.0;
  qp.h << coeffs.b;
  qp.lower << p.accel.min, p.steer_rate.min, 0.0;
  qp.upper << p.accel.max, p.steer_rate.max, inf;
  return qp;
}

inline QpProblem clf_qp(const AttentionParams& att, const ClfConfig& cfg, const VehicleParams& p,
                        const PathSpec& path, const VehicleState& x) {
  return clf_qp(attclf_constraint_coeffs(att, cfg, p, path, x), cfg, p, x);
}

struct ClfStep {
  ControlInput control;
  double V = 0.0;
  double slack = 0.0;
  bool active = false;  // CLF row in the working set
  ConstraintCoeffs coeffs;
  QpProblem problem;
  QpSolution solution;
};

inline ClfStep clf_step_from_solution(ConstraintCoeffs coeffs, QpProblem problem, QpSolution sol) {
  ClfStep step;
  step.control = {sol.primal(0), sol.primal(1)};
  step.slack = std::max(0.0, sol.primal(2));
  step.V = coeffs.V;
  step.active = !sol.active_general().empty();
  step.coeffs = std::move(coeffs);
  step.problem = std::move(problem);
  step.solution = std::move(sol);
  return step;
}

/// One att-CLF control step at an explicit curvature (used with estimated curvature).
inline ClfStep att_clf_control(const AttentionParams& att, const ClfConfig& cfg, const VehicleParams& p, double kappa,
                               const VehicleState& x, const QpSettings& qp_cfg = {}) {
  att.validate();
  ConstraintCoeffs coeffs = attclf_constraint_coeffs(att, cfg, p, kappa, x);
  QpProblem qp = clf_qp(coeffs, cfg, p, x);
  QpSolution sol = solve(qp, qp_cfg);
  return clf_step_from_solution(std::move(coeffs), std::move(qp), std::move(sol));
}

inline ClfStep att_clf_control(const AttentionParams& att, const ClfConfig& cfg, const VehicleParams& p,
                               const PathSpec& path, const VehicleState& x, const QpSettings& qp_cfg = {}) {
  return att_clf_control(att, cfg, p, path.curvature_at(x.s), x, qp_cfg);
}

/// Classical CLF: the same QP with constant attention parameters.
inline ControlInput classical_clf_control(const AttentionParams& fixed, const ClfConfig& cfg, const VehicleParams& p,
                                          const PathSpec& path, const VehicleState& x,
                                          const QpSettings& qp_cfg = {}) {
  return att_clf_control(fixed, cfg, p, path, x, qp_cfg).control;
}

}  // namespace attclf
