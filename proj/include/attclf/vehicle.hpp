#pragma once

// Frenet-frame kinematic bicycle model:
//   s'   = v cos(mu + beta) / (1 - d kappa)
//   d'   = v sin(mu + beta)
//   mu'  = v / l_r sin(beta) - kappa s'
//   v'   = u_a
//   delta' = u_w
// with beta = atan(l_r / (l_r + l_f) tan(delta)).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "attclf/errors.hpp"
#include "attclf/path_geometry.hpp"

namespace attclf {

using Vector5 = Eigen::Matrix<double, 5, 1>;
using Matrix5 = Eigen::Matrix<double, 5, 5>;
using Matrix52 = Eigen::Matrix<double, 5, 2>;

struct Bounds {
  double min = 0.0;
  double max = 0.0;
  double clamp(double x) const { return std::clamp(x, min, max); }
  bool contains(double x) const { return x >= min && x <= max; }
};

struct VehicleParams {
  double l_r = 1.4;
  double l_f = 1.4;
  Bounds accel{-4.0, 3.0};         // m/s^2
  Bounds steer_rate{-0.5, 0.5};    // rad/s
  Bounds steer_angle{-0.5, 0.5};   // rad
  Bounds speed{0.0, 20.0};         // m/s
  double denom_tol = 1e-3;         // minimum admissible 1 - d kappa

  void validate() const {
    detail::require(l_r > 0.0, "vehicle.l_r", "must be > 0");
    detail::require(l_f > 0.0, "vehicle.l_f", "must be > 0");
    detail::require(accel.min < accel.max, "vehicle.accel_bounds", "min must be < max");
    detail::require(steer_rate.min < steer_rate.max, "vehicle.steer_rate_bounds", "min must be < max");
    detail::require(steer_angle.min < steer_angle.max, "vehicle.steer_angle_bounds", "min must be < max");
    detail::require(speed.min < speed.max, "vehicle.speed_bounds", "min must be < max");
    constexpr double half_pi = std::numbers::pi / 2.0;
    detail::require(steer_angle.min > -half_pi && steer_angle.max < half_pi, "vehicle.steer_angle_bounds",
                    "must lie inside (-pi/2, pi/2)");
    detail::require(denom_tol > 0.0 && denom_tol < 1.0, "vehicle.denom_tol", "must lie in (0, 1)");
  }
};

struct VehicleState {
  double s = 0.0;
  double d = 0.0;
  double mu = 0.0;
  double v = 0.0;
  double delta = 0.0;

  Vector5 vec() const { return (Vector5() << s, d, mu, v, delta).finished(); }
  static VehicleState from(const Vector5& x) { return {x(0), x(1), x(2), x(3), x(4)}; }
  bool operator==(const VehicleState&) const = default;
};

struct ControlInput {
  double accel = 0.0;       // u_a
  double steer_rate = 0.0;  // u_w

  Eigen::Vector2d vec() const { return {accel, steer_rate}; }
  bool operator==(const ControlInput&) const = default;
};

inline ControlInput clamp_control(const VehicleParams& p, const ControlInput& u) {
  return {p.accel.clamp(u.accel), p.steer_rate.clamp(u.steer_rate)};
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a <= 0.0) a += two_pi;
  return a - std::numbers::pi;  // (-pi, pi]
}

inline double slip_angle(const VehicleParams& p, double delta) {
  if (!(std::abs(delta) < std::numbers::pi / 2.0)) {
    throw std::domain_error("slip_angle: |delta| must be < pi/2");
  }
  return std::atan(p.l_r / (p.l_r + p.l_f) * std::tan(delta));
}

/// d(beta)/d(delta).
inline double slip_angle_derivative(const VehicleParams& p, double delta) {
  const double r = p.l_r / (p.l_r + p.l_f);
  const double t = std::tan(delta);
  return r * (1.0 + t * t) / (1.0 + r * r * t * t);
}

inline double frenet_denominator(const VehicleParams& p, double d, double kappa) {
  const double den = 1.0 - d * kappa;
  if (!(den > p.denom_tol)) {
    std::ostringstream ss;
    ss << "1 - d*kappa = " << den << " <= " << p.denom_tol << " (d=" << d << ", kappa=" << kappa << ")";
    throw SingularityError(ss.str());
  }
  return den;
}

/// State derivative with an explicit curvature value.
inline Vector5 dynamics(const VehicleParams& p, double kappa, const VehicleState& x, const ControlInput& u) {
  const double den = frenet_denominator(p, x.d, kappa);
  const double beta = slip_angle(p, x.delta);
  const double sdot = x.v * std::cos(x.mu + beta) / den;
  Vector5 f;
  f << sdot, x.v * std::sin(x.mu + beta), x.v / p.l_r * std::sin(beta) - kappa * sdot, u.accel, u.steer_rate;
  return f;
}

inline Vector5 dynamics(const VehicleParams& p, const PathSpec& path, const VehicleState& x, const ControlInput& u) {
  return dynamics(p, path.curvature_at(x.s), x, u);
}

/// Jacobian of the drift with respect to (s, d, mu, v, delta); kappa_slope = d(kappa)/ds.
inline Matrix5 dynamics_jacobian(const VehicleParams& p, double kappa, double kappa_slope, const VehicleState& x) {
  const double den = frenet_denominator(p, x.d, kappa);
  const double beta = slip_angle(p, x.delta);
  const double dbeta = slip_angle_derivative(p, x.delta);
  const double c = std::cos(x.mu + beta), sn = std::sin(x.mu + beta);
  const double sdot = x.v * c / den;

  Matrix5 A = Matrix5::Zero();
  // s'
  A(0, 0) = x.v * c * x.d * kappa_slope / (den * den);
  A(0, 1) = x.v * c * kappa / (den * den);
  A(0, 2) = -x.v * sn / den;
  A(0, 3) = c / den;
  A(0, 4) = -x.v * sn * dbeta / den;
  // d'
  A(1, 2) = x.v * c;
  A(1, 3) = sn;
  A(1, 4) = x.v * c * dbeta;
  // mu' = v/l_r sin(beta) - kappa s'
  A(2, 0) = -kappa_slope * sdot - kappa * A(0, 0);
  A(2, 1) = -kappa * A(0, 1);
  A(2, 2) = -kappa * A(0, 2);
  A(2, 3) = std::sin(beta) / p.l_r - kappa * A(0, 3);
  A(2, 4) = x.v / p.l_r * std::cos(beta) * dbeta - kappa * A(0, 4);
  return A;
}

inline Matrix52 control_jacobian() {
  Matrix52 B = Matrix52::Zero();
  B(3, 0) = 1.0;
  B(4, 1) = 1.0;
  return B;
}

namespace detail {

inline VehicleState finish_step(const VehicleParams& p, Vector5 x) {
  VehicleState out = VehicleState::from(x);
  out.v = p.speed.clamp(out.v);
  out.delta = p.steer_angle.clamp(out.delta);
  out.mu = wrap_angle(out.mu);
  return out;
}

}  // namespace detail

/// Classic RK4 step with zero-order-hold control. Curvature is re-read at each
/// stage; v and delta are clamped and mu wrapped afterwards.
inline VehicleState step_rk4(const VehicleParams& p, const PathSpec& path, const VehicleState& x,
                             const ControlInput& u, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_rk4: dt must be > 0");
  const Vector5 x0 = x.vec();
  const Vector5 k1 = dynamics(p, path, x, u);
  const Vector5 k2 = dynamics(p, path, VehicleState::from(x0 + 0.5 * dt * k1), u);
  const Vector5 k3 = dynamics(p, path, VehicleState::from(x0 + 0.5 * dt * k2), u);
  const Vector5 k4 = dynamics(p, path, VehicleState::from(x0 + dt * k3), u);
  return detail::finish_step(p, x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

struct LinearizedStep {
  VehicleState next;
  Matrix5 A;   // d next / d state
  Matrix52 B;  // d next / d control
};

/// step_rk4 together with its exact Jacobians. Clamped components get zero rows.
inline LinearizedStep step_rk4_linearized(const VehicleParams& p, const PathSpec& path, const VehicleState& x,
                                          const ControlInput& u, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_rk4: dt must be > 0");
  const Matrix52 Bc = control_jacobian();
  const Matrix5 I = Matrix5::Identity();
  auto stage = [&](const Vector5& xs) {
    const auto st = VehicleState::from(xs);
    return std::pair{dynamics(p, path, st, u),
                     dynamics_jacobian(p, path.curvature_at(st.s), path.curvature_slope(st.s), st)};
  };
  const Vector5 x0 = x.vec();
  const auto [k1, A1] = stage(x0);
  const Vector5 x2 = x0 + 0.5 * dt * k1;
  const auto [k2, A2] = stage(x2);
  const Vector5 x3 = x0 + 0.5 * dt * k2;
  const auto [k3, A3] = stage(x3);
  const Vector5 x4 = x0 + dt * k3;
  const auto [k4, A4] = stage(x4);

  const Matrix5 K1x = A1;
  const Matrix52 K1u = Bc;
  const Matrix5 K2x = A2 * (I + 0.5 * dt * K1x);
  const Matrix52 K2u = A2 * (0.5 * dt * K1u) + Bc;
  const Matrix5 K3x = A3 * (I + 0.5 * dt * K2x);
  const Matrix52 K3u = A3 * (0.5 * dt * K2u) + Bc;
  const Matrix5 K4x = A4 * (I + dt * K3x);
  const Matrix52 K4u = A4 * (dt * K3u) + Bc;

  const Vector5 raw = x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  LinearizedStep out;
  out.A = I + dt / 6.0 * (K1x + 2.0 * K2x + 2.0 * K3x + K4x);
  out.B = dt / 6.0 * (K1u + 2.0 * K2u + 2.0 * K3u + K4u);
  if (!p.speed.contains(raw(3))) {
    out.A.row(3).setZero();
    out.B.row(3).setZero();
  }
  if (!p.steer_angle.contains(raw(4))) {
    out.A.row(4).setZero();
    out.B.row(4).setZero();
  }
  out.next = detail::finish_step(p, raw);
  return out;
}

}  // namespace attclf
