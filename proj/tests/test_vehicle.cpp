#include "attclf/vehicle.hpp"

#include <numbers>
#include <random>

#include "gtest/gtest.h"

namespace attclf {
namespace {

// Second, independent transcription of the Frenet bicycle model.
Vector5 transcribed_dynamics(double l_r, double l_f, double kappa, double d, double mu, double v, double delta,
                             double ua, double uw) {
  const double beta = std::atan(l_r / (l_r + l_f) * std::tan(delta));
  Vector5 out;
  out(0) = v * std::cos(mu + beta) / (1.0 - d * kappa);
  out(1) = v * std::sin(mu + beta);
  out(2) = v / l_r * std::sin(beta) - kappa * v * std::cos(mu + beta) / (1.0 - d * kappa);
  out(3) = ua;
  out(4) = uw;
  return out;
}

// Forward Euler with many sub-steps, Richardson-extrapolated from n and 2n steps.
VehicleState fine_euler(const VehicleParams& p, const PathSpec& path, VehicleState x, ControlInput u, double dt,
                        int n) {
  auto run = [&](int steps) {
    Vector5 s = x.vec();
    const double h = dt / steps;
    for (int i = 0; i < steps; ++i) {
      const VehicleState st = VehicleState::from(s);
      s += h * transcribed_dynamics(p.l_r, p.l_f, path.curvature_at(st.s), st.d, st.mu, st.v, st.delta, u.accel,
                                    u.steer_rate);
    }
    return s;
  };
  return VehicleState::from(2.0 * run(2 * n) - run(n));
}

TEST(SlipAngle, ZeroSteerHasZeroSlip) { EXPECT_EQ(slip_angle(VehicleParams{}, 0.0), 0.0); }

TEST(SlipAngle, EqualAxleDistances) {
  VehicleParams p;
  p.l_r = p.l_f = 1.4;
  const double beta = slip_angle(p, 0.2);
  EXPECT_NEAR(beta, std::atan(0.5 * std::tan(0.2)), 1e-15);
  EXPECT_NEAR(beta, 0.101010, 1e-6);
}

TEST(SlipAngle, IsOdd) {
  const VehicleParams p;
  EXPECT_DOUBLE_EQ(slip_angle(p, -0.3), -slip_angle(p, 0.3));
}

TEST(SlipAngle, DomainError) {
  const VehicleParams p;
  EXPECT_THROW(slip_angle(p, std::numbers::pi / 2), std::domain_error);
  EXPECT_THROW(slip_angle(p, -2.0), std::domain_error);
}

TEST(Dynamics, StraightCruising) {
  const VehicleParams p;
  const PathSpec path({{100.0, 0.0}});
  const Vector5 f = dynamics(p, path, {0.0, 0.0, 0.0, 5.0, 0.0}, {0.0, 0.0});
  EXPECT_EQ(f, (Vector5() << 5.0, 0.0, 0.0, 0.0, 0.0).finished());
}

TEST(Dynamics, PureHeadingOffset) {
  const VehicleParams p;
  const PathSpec path({{100.0, 0.0}});
  const Vector5 f = dynamics(p, path, {0.0, 0.0, std::numbers::pi / 6, 2.0, 0.0}, {0.0, 0.0});
  EXPECT_NEAR(f(1), 1.0, 1e-15);
}

TEST(Dynamics, GenericStateMatchesTranscription) {
  VehicleParams p;
  p.l_r = p.l_f = 1.4;
  const PathSpec path({{100.0, 0.05}});
  const Vector5 f = dynamics(p, path, {3.0, 1.0, 0.1, 5.0, 0.1}, {0.7, -0.2});
  const Vector5 g = transcribed_dynamics(1.4, 1.4, 0.05, 1.0, 0.1, 5.0, 0.1, 0.7, -0.2);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(f(i), g(i), 1e-14) << i;
}

TEST(Dynamics, SingularityIsReported) {
  const VehicleParams p;
  const PathSpec path({{100.0, 0.4}}, 2.0);
  EXPECT_THROW(dynamics(p, path, {0.0, 2.5, 0.0, 5.0, 0.0}, {}), SingularityError);
}

TEST(Dynamics, AffineInControl) {
  const VehicleParams p;
  const PathSpec path({{100.0, 0.05}});
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const VehicleState x{10.0 * u(rng), u(rng), 0.5 * u(rng), 5.0 + 3.0 * u(rng), 0.3 * u(rng)};
    const ControlInput u1{u(rng), u(rng)}, u2{u(rng), u(rng)};
    const double a = u(rng), b = u(rng);
    const Vector5 f0 = dynamics(p, path, x, {});
    const Vector5 lhs = dynamics(p, path, x, {a * u1.accel + b * u2.accel, a * u1.steer_rate + b * u2.steer_rate}) - f0;
    const Vector5 rhs = a * (dynamics(p, path, x, u1) - f0) + b * (dynamics(p, path, x, u2) - f0);
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(StepRk4, StraightAlignedAdvancesS) {
  const VehicleParams p;
  const PathSpec path({{100.0, 0.0}});
  const VehicleState x1 = step_rk4(p, path, {0.0, 0.0, 0.0, 5.0, 0.0}, {0.0, 0.0}, 0.1);
  EXPECT_NEAR(x1.s, 0.5, 1e-15);
  EXPECT_EQ(x1.d, 0.0);
  EXPECT_EQ(x1.mu, 0.0);
  EXPECT_EQ(x1.v, 5.0);
  EXPECT_EQ(x1.delta, 0.0);
}

TEST(StepRk4, LinearSpeedSubsystemIsExact) {
  const VehicleParams p;
  const PathSpec path({{100.0, 0.0}});
  const VehicleState x1 = step_rk4(p, path, {0.0, 0.0, 0.0, 5.0, 0.0}, {1.0, 0.0}, 0.1);
  EXPECT_DOUBLE_EQ(x1.v, 5.1);
}

TEST(StepRk4, MatchesFineEulerOnCurvedRoad) {
  const VehicleParams p;
  const PathSpec path({{200.0, 0.05}});
  const VehicleState x0{1.0, 0.4, 0.1, 6.0, 0.05};
  const ControlInput u{0.5, 0.2};
  const VehicleState a = step_rk4(p, path, x0, u, 0.1);
  const VehicleState b = fine_euler(p, path, x0, u, 0.1, 1000);
  EXPECT_LE((a.vec() - b.vec()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(StepRk4, FourthOrderConvergence) {
  const VehicleParams p;
  const PathSpec path({{500.0, 0.08}});
  const VehicleState x0{1.0, 0.3, 0.2, 8.0, 0.1};
  const ControlInput u{0.3, -0.3};
  auto error = [&](double dt) {
    const VehicleState a = step_rk4(p, path, x0, u, dt);
    const VehicleState b = fine_euler(p, path, x0, u, dt, 20000);
    return (a.vec() - b.vec()).norm();
  };
  // Local error of one step is O(dt^5); two half steps vs one full step gives the global ~16x.
  auto two_halves = [&](double dt) {
    const VehicleState mid = step_rk4(p, path, x0, u, dt / 2);
    const VehicleState a = step_rk4(p, path, mid, u, dt / 2);
    const VehicleState b = fine_euler(p, path, x0, u, dt, 20000);
    return (a.vec() - b.vec()).norm();
  };
  const double ratio = error(0.4) / two_halves(0.4);
  EXPECT_GT(ratio, 12.0);
  EXPECT_LT(ratio, 20.0);
}

TEST(StepRk4, ZeroControlKeepsSpeedAndSteer) {
  const VehicleParams p;
  const PathSpec path({{50.0, 0.02}, {50.0, -0.04}});
  VehicleState x{0.0, 0.2, -0.1, 7.0, 0.12};
  for (int i = 0; i < 100; ++i) {
    x = step_rk4(p, path, x, {0.0, 0.0}, 0.05);
    EXPECT_EQ(x.v, 7.0);
    EXPECT_EQ(x.delta, 0.12);
  }
}

TEST(StepRk4, ClampsSpeedAndSteer) {
  const VehicleParams p;
  const PathSpec path({{100.0, 0.0}});
  const VehicleState x = step_rk4(p, path, {0.0, 0.0, 0.0, 19.99, 0.49}, {3.0, 0.5}, 0.1);
  EXPECT_EQ(x.v, p.speed.max);
  EXPECT_EQ(x.delta, p.steer_angle.max);
}

TEST(StepRk4, WrapsHeadingError) {
  EXPECT_NEAR(wrap_angle(std::numbers::pi + 0.1), -std::numbers::pi + 0.1, 1e-12);
  EXPECT_EQ(wrap_angle(std::numbers::pi), std::numbers::pi);
  EXPECT_NEAR(wrap_angle(-std::numbers::pi), std::numbers::pi, 1e-15);
}

TEST(StepRk4Linearized, JacobiansMatchFiniteDifferences) {
  const VehicleParams p;
  TrackParams tp;
  tp.smoothing_window = 5.0;
  const PathSpec path = make_track(TrackKind::random, 3, tp);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const VehicleState x{150.0 + 100.0 * u(rng), 0.5 * u(rng), 0.3 * u(rng), 8.0 + 3.0 * u(rng), 0.3 * u(rng)};
    const ControlInput c{u(rng), 0.4 * u(rng)};
    const double dt = 0.1;
    const LinearizedStep lin = step_rk4_linearized(p, path, x, c, dt);
    EXPECT_EQ(lin.next, step_rk4(p, path, x, c, dt));
    const double h = 1e-6;
    for (int j = 0; j < 5; ++j) {
      Vector5 xp = x.vec(), xm = x.vec();
      xp(j) += h;
      xm(j) -= h;
      const Vector5 fd = (step_rk4(p, path, VehicleState::from(xp), c, dt).vec() -
                          step_rk4(p, path, VehicleState::from(xm), c, dt).vec()) / (2 * h);
      EXPECT_LE((fd - lin.A.col(j)).cwiseAbs().maxCoeff(), 1e-6) << "state column " << j;
    }
    for (int j = 0; j < 2; ++j) {
      ControlInput cp = c, cm = c;
      (j == 0 ? cp.accel : cp.steer_rate) += h;
      (j == 0 ? cm.accel : cm.steer_rate) -= h;
      const Vector5 fd = (step_rk4(p, path, x, cp, dt).vec() - step_rk4(p, path, x, cm, dt).vec()) / (2 * h);
      EXPECT_LE((fd - lin.B.col(j)).cwiseAbs().maxCoeff(), 1e-6) << "control column " << j;
    }
  }
}

TEST(VehicleParams, Validation) {
  VehicleParams p;
  EXPECT_NO_THROW(p.validate());
  p.l_r = 0.0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.steer_angle = {-1.6, 0.5};
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.accel = {1.0, -1.0};
  EXPECT_THROW(p.validate(), ValidationError);
}

}  // namespace
}  // namespace attclf
