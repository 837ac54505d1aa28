#pragma once

// Test-only reference computations shared by the unit tests and the
// acceptance suite.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "attclf/clf.hpp"
#include "attclf/learner.hpp"
#include "attclf/path_geometry.hpp"
#include "attclf/qp.hpp"
#include "attclf/uncertainty.hpp"

namespace attclf::testing {

/// Brute-force QP oracle: enumerates every working set of at most n rows,
/// solves the equality-constrained problem by the null-space method, and keeps the
/// KKT point (primal feasible, multipliers >= 0) with the lowest objective.
struct EnumeratedQp {
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::infinity();
  bool found = false;
};

inline EnumeratedQp enumerate_qp(const QpProblem& p) {
  const int n = p.num_variables();
  std::vector<Eigen::VectorXd> normals;
  std::vector<double> rhs;
  for (int i = 0; i < p.num_constraints(); ++i) {
    normals.push_back(p.G.row(i).transpose());
    rhs.push_back(p.h(i));
  }
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(p.upper(i))) {
      normals.push_back(Eigen::VectorXd::Unit(n, i));
      rhs.push_back(p.upper(i));
    }
    if (std::isfinite(p.lower(i))) {
      normals.push_back(-Eigen::VectorXd::Unit(n, i));
      rhs.push_back(-p.lower(i));
    }
  }
  const int m = static_cast<int>(normals.size());
  EnumeratedQp best;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) act.push_back(i);
    }
    if (static_cast<int>(act.size()) > n) continue;
    const int k = static_cast<int>(act.size());
    Eigen::MatrixXd N(n, k);
    Eigen::VectorXd b(k);
    for (int j = 0; j < k; ++j) {
      N.col(j) = normals[static_cast<std::size_t>(act[j])];
      b(j) = rhs[static_cast<std::size_t>(act[j])];
    }
    // Null-space method: x = x_p + Z w with N' x_p = b and N' Z = 0.
    Eigen::VectorXd x;
    Eigen::VectorXd lambda(k);
    if (k == 0) {
      x = -p.H.ldlt().solve(p.F);
    } else {
      Eigen::FullPivLU<Eigen::MatrixXd> lu_n(N.transpose());
      if (lu_n.rank() < k) continue;
      const Eigen::VectorXd xp = N.transpose().completeOrthogonalDecomposition().solve(b);
      const Eigen::MatrixXd Z = lu_n.kernel();
      x = xp;
      if (k < n) {
        const Eigen::MatrixXd reduced = Z.transpose() * p.H * Z;
        x = xp - Z * reduced.ldlt().solve(Z.transpose() * (p.H * xp + p.F));
      }
      lambda = N.completeOrthogonalDecomposition().solve(-(p.H * x + p.F));
    }
    Eigen::VectorXd sol(n + k);
    sol << x, lambda;
    const double dual_scale = k > 0 ? std::max(1.0, sol.tail(k).cwiseAbs().maxCoeff()) : 1.0;
    bool ok = (sol.tail(k).array() >= -1e-9 * dual_scale).all();
    for (int i = 0; i < m && ok; ++i) {
      const double bi = rhs[static_cast<std::size_t>(i)];
      ok = normals[static_cast<std::size_t>(i)].dot(x) <= bi + 1e-9 * std::max(1.0, std::abs(bi));
    }
    if (!ok) continue;
    const double obj = p.objective(x);
    if (obj < best.objective) {
      best.objective = obj;
      best.x = x;
      best.found = true;
    }
  }
  return best;
}

/// Random strictly convex QP with n variables, m general rows, and finite box
/// bounds that always contain the origin (so the problem is feasible when h >= 0).
inline QpProblem random_qp(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  QpProblem p = QpProblem::make(n, m);
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = normal(rng);
  p.H = A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) p.F(i) = 2.0 * normal(rng);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) p.G(i, j) = normal(rng);
    p.h(i) = unit(rng);
  }
  for (int i = 0; i < n; ++i) {
    p.lower(i) = -0.5 - 1.5 * unit(rng);
    p.upper(i) = 0.5 + 1.5 * unit(rng);
  }
  return p;
}

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of a scalar function.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Loss L = g' x*(data). Each data entry is perturbed by +-step and re-solved.
struct FdCheck {
  double max_rel = 0.0;
};

inline FdCheck check_gradients(const QpProblem& p, const Eigen::VectorXd& g, const QpSettings& cfg) {
  const QpSolution s = solve(p, cfg);
  const QpGradients grad = grad_solution(p, s, g, cfg);
  const double h = cfg.fd_step;
  auto loss = [&](const QpProblem& q) { return g.dot(solve(q, cfg).primal); };
  FdCheck out;
  auto update = [&](double analytic, double fd) { out.max_rel = std::max(out.max_rel, relative_error(analytic, fd)); };
  const int n = p.num_variables();
  for (int i = 0; i < n; ++i) {
    QpProblem a = p, b = p;
    a.F(i) += h;
    b.F(i) -= h;
    update(grad.dF(i), (loss(a) - loss(b)) / (2 * h));
    for (int j = i; j < n; ++j) {
      QpProblem c = p, d = p;
      c.H(i, j) += h;
      d.H(i, j) -= h;
      if (i != j) {
        c.H(j, i) += h;
        d.H(j, i) -= h;
      }
      const double analytic = i == j ? grad.dH(i, i) : grad.dH(i, j) + grad.dH(j, i);
      update(analytic, (loss(c) - loss(d)) / (2 * h));
    }
  }
  for (int r = 0; r < p.num_constraints(); ++r) {
    QpProblem a = p, b = p;
    a.h(r) += h;
    b.h(r) -= h;
    update(grad.dh(r), (loss(a) - loss(b)) / (2 * h));
    for (int j = 0; j < n; ++j) {
      QpProblem c = p, d = p;
      c.G(r, j) += h;
      d.G(r, j) -= h;
      update(grad.dG(r, j), (loss(c) - loss(d)) / (2 * h));
    }
  }
  return out;
}

// An instance is degenerate when any row sits within `margin` of switching
// between active and inactive.
inline bool near_active_set_change(const QpProblem& p, const QpSolution& s, double margin) {
  for (int i = 0; i < p.num_constraints(); ++i) {
    const double gap = p.h(i) - p.G.row(i).dot(s.primal);
    if (std::abs(gap) < margin && s.duals_ineq(i) < margin) return true;
    if (gap < margin && s.duals_ineq(i) < margin) return true;
  }
  for (int i = 0; i < p.num_variables(); ++i) {
    const double gu = p.upper(i) - s.primal(i), gl = s.primal(i) - p.lower(i);
    if (gu < margin && s.duals_upper(i) < margin) return true;
    if (gl < margin && s.duals_lower(i) < margin) return true;
  }
  return false;
}

// dV/dt from a central difference along the exact state velocity, with the
// curvature held fixed (constant-curvature road).
inline double finite_difference_vdot(const VehicleParams& p, double kappa, const AttentionParams& att,
                                     const VehicleState& x, const ControlInput& u, double h) {
  const Vector5 xdot = dynamics(p, kappa, x, u);
  auto V = [&](double t) {
    return attclf_value(att, transform_state(p, kappa, VehicleState::from(x.vec() + t * xdot)));
  };
  return central_difference(V, 0.0, h);
}

/// Samples labelled by a CLF-QP teacher with known attention parameters.
inline std::vector<ExpertSample> synthetic_dataset(const FeatureConfig& fc, const AttentionParams& teacher,
                                                   const ClfConfig& clf, const VehicleParams& p, int n,
                                                   std::uint64_t seed) {
  TrackParams tp;
  tp.smoothing_window = 10.0;
  const PathSpec path = make_track(TrackKind::random, seed, tp);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<ExpertSample> data;
  for (int i = 0; i < n; ++i) {
    const VehicleState x{150.0 + 140.0 * unit(rng), 0.8 * unit(rng), 0.15 * unit(rng), 8.0 + 2.0 * unit(rng),
                         0.1 * unit(rng)};
    ExpertSample s;
    s.state = x;
    s.kappa = path.curvature_at(x.s);
    s.features = featurize(fc, path, x);
    s.expert = att_clf_control(teacher, clf, p, s.kappa, x).control;
    s.t = i;
    data.push_back(s);
  }
  return data;
}

/// Midpoint-rule integral of a KDE over its samples' bounding box padded by
/// six bandwidths, on a 400 x 400 grid.
inline double grid_integral(const ControlDistribution& d) {
  double lo_a = 1e9, hi_a = -1e9, lo_w = 1e9, hi_w = -1e9;
  for (const auto& s : d.samples) {
    lo_a = std::min(lo_a, s.accel);
    hi_a = std::max(hi_a, s.accel);
    lo_w = std::min(lo_w, s.steer_rate);
    hi_w = std::max(hi_w, s.steer_rate);
  }
  lo_a -= 6 * d.bandwidth(0);
  hi_a += 6 * d.bandwidth(0);
  lo_w -= 6 * d.bandwidth(1);
  hi_w += 6 * d.bandwidth(1);
  const int n = 400;
  const double da = (hi_a - lo_a) / n, dw = (hi_w - lo_w) / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) acc += d.density({lo_a + (i + 0.5) * da, lo_w + (j + 0.5) * dw});
  return acc * da * dw;
}

}  // namespace attclf::testing
