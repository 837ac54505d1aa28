#pragma once

// Small dense strictly convex QPs
//
//   minimize    1/2 x'Hx + F'x
//   subject to  G x <= h,   lower <= x <= upper
//
// solved with a dual active-set method (Goldfarb-Idnani): start from the
// unconstrained minimizer, add the most violated constraint, take primal/dual
// steps, and drop constraints whose multiplier reaches zero. The reduced
// system N' H^-1 N is re-factored by Cholesky after each working-set change.
// Box bounds are handled as ordinary inequality rows.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attclf/errors.hpp"

namespace attclf {

/// Every tolerance used by the solver and its differentiation, in one place.
struct QpSettings {
  int max_iter = 100;               // working-set changes before giving up
  double feasibility_tol = 1e-10;   // a row is violated when G_i x - h_i exceeds this
  double kkt_tol = 1e-8;            // optimality report threshold
  double degenerate_tol = 1e-8;     // weakly active rows are treated as inactive when differentiating
  double kkt_regularization = 1e-10;
  double min_eigenvalue = 1e-8;
  double fd_step = 1e-5;            // step used by finite-difference checks
};

struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd F;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int num_variables() const { return static_cast<int>(F.size()); }
  int num_constraints() const { return static_cast<int>(h.size()); }

  /// Unconstrained-by-box problem with n variables and m inequality rows.
  static QpProblem make(int n, int m) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    QpProblem p;
    p.H = Eigen::MatrixXd::Identity(n, n);
    p.F = Eigen::VectorXd::Zero(n);
    p.G = Eigen::MatrixXd::Zero(m, n);
    p.h = Eigen::VectorXd::Zero(m);
    p.lower = Eigen::VectorXd::Constant(n, -inf);
    p.upper = Eigen::VectorXd::Constant(n, inf);
    return p;
  }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(H * x) + F.dot(x); }

  void validate(const QpSettings& cfg = {}) const {
    const auto n = F.size();
    detail::require(n >= 1 && n <= 8, "qp.F", "need 1 <= n_v <= 8");
    detail::require(H.rows() == n && H.cols() == n, "qp.H", "must be n_v x n_v");
    detail::require(G.cols() == n && G.rows() == h.size(), "qp.G", "must be n_c x n_v matching h");
    detail::require(h.size() <= 8, "qp.h", "need n_c <= 8");
    detail::require(lower.size() == n && upper.size() == n, "qp.bounds", "must have n_v entries");
    detail::require((lower.array() < upper.array()).all(), "qp.bounds", "lower must be < upper");
    detail::require(H.allFinite() && F.allFinite() && G.allFinite() && h.allFinite(), "qp", "non-finite data");
    detail::require((H - H.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + H.cwiseAbs().maxCoeff()), "qp.H",
                    "must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> shifted(H - cfg.min_eigenvalue * Eigen::MatrixXd::Identity(n, n));
    detail::require(shifted.info() == Eigen::Success, "qp.H", "minimum eigenvalue must be >= 1e-8");
  }
};

/// Identifies one inequality: a general row, or a lower/upper box bound.
struct ConstraintRef {
  enum class Kind { general, lower, upper };
  Kind kind = Kind::general;
  int index = 0;
  bool operator==(const ConstraintRef&) const = default;
};

enum class QpStatus { optimal, max_iter };

struct QpSolution {
  Eigen::VectorXd primal;
  Eigen::VectorXd duals_ineq;
  Eigen::VectorXd duals_lower;
  Eigen::VectorXd duals_upper;
  std::vector<ConstraintRef> active_set;  // working set at termination
  QpStatus status = QpStatus::optimal;
  double kkt_residual = 0.0;
  int iterations = 0;

  std::vector<int> active_general() const {
    std::vector<int> out;
    for (const auto& c : active_set) {
      if (c.kind == ConstraintRef::Kind::general) out.push_back(c.index);
    }
    return out;
  }
};

struct QpGradients {
  Eigen::MatrixXd dH;
  Eigen::VectorXd dF;
  Eigen::MatrixXd dG;
  Eigen::VectorXd dh;
};

namespace detail {

struct Row {
  ConstraintRef ref;
  Eigen::VectorXd normal;
  double rhs;
};

inline Row make_row(const QpProblem& p, const ConstraintRef& c) {
  const int n = p.num_variables();
  switch (c.kind) {
    case ConstraintRef::Kind::general:
      return {c, p.G.row(c.index).transpose(), p.h(c.index)};
    case ConstraintRef::Kind::upper:
      return {c, Eigen::VectorXd::Unit(n, c.index), p.upper(c.index)};
    case ConstraintRef::Kind::lower:
      return {c, -Eigen::VectorXd::Unit(n, c.index), -p.lower(c.index)};
  }
  return {};
}

inline std::vector<Row> constraint_rows(const QpProblem& p) {
  std::vector<Row> rows;
  for (int i = 0; i < p.num_constraints(); ++i) rows.push_back(make_row(p, {ConstraintRef::Kind::general, i}));
  for (int i = 0; i < p.num_variables(); ++i) {
    if (std::isfinite(p.upper(i))) rows.push_back(make_row(p, {ConstraintRef::Kind::upper, i}));
    if (std::isfinite(p.lower(i))) rows.push_back(make_row(p, {ConstraintRef::Kind::lower, i}));
  }
  return rows;
}

inline Eigen::MatrixXd stack_normals(const std::vector<Row>& rows, const std::vector<int>& idx, int n) {
  Eigen::MatrixXd N(n, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) N.col(static_cast<Eigen::Index>(j)) = rows[idx[j]].normal;
  return N;
}

/// Fills duals and KKT residual from a primal point and working-set multipliers.
inline void finalize(const QpProblem& p, const std::vector<Row>& rows, const std::vector<int>& active,
                     const std::vector<double>& lambda, QpSolution& sol) {
  const int n = p.num_variables();
  sol.duals_ineq = Eigen::VectorXd::Zero(p.num_constraints());
  sol.duals_lower = Eigen::VectorXd::Zero(n);
  sol.duals_upper = Eigen::VectorXd::Zero(n);
  sol.active_set.clear();
  Eigen::VectorXd stationarity = p.H * sol.primal + p.F;
  double complementarity = 0.0;
  for (std::size_t j = 0; j < active.size(); ++j) {
    const Row& r = rows[active[j]];
    sol.active_set.push_back(r.ref);
    stationarity += lambda[j] * r.normal;
    complementarity = std::max(complementarity, std::abs(lambda[j] * (r.normal.dot(sol.primal) - r.rhs)));
    switch (r.ref.kind) {
      case ConstraintRef::Kind::general: sol.duals_ineq(r.ref.index) = lambda[j]; break;
      case ConstraintRef::Kind::lower: sol.duals_lower(r.ref.index) = lambda[j]; break;
      case ConstraintRef::Kind::upper: sol.duals_upper(r.ref.index) = lambda[j]; break;
    }
  }
  double violation = 0.0;
  for (const Row& r : rows) violation = std::max(violation, r.normal.dot(sol.primal) - r.rhs);
  double dual_neg = 0.0;
  for (double l : lambda) dual_neg = std::max(dual_neg, -l);
  sol.kkt_residual = std::max({stationarity.cwiseAbs().maxCoeff(), violation, complementarity, dual_neg});
}

/// Solves the equality-constrained problem on a working set through the full
/// KKT matrix [H N; N' 0], which stays accurate when H is badly scaled.
/// Returns false when the working-set normals are linearly dependent.
inline bool solve_on_working_set(const QpProblem& p, const Eigen::LLT<Eigen::MatrixXd>& llt,
                                 const std::vector<Row>& rows, const std::vector<int>& active, Eigen::VectorXd& x,
                                 std::vector<double>& lambda) {
  const int n = p.num_variables();
  lambda.assign(active.size(), 0.0);
  if (active.empty()) {
    x = -llt.solve(p.F);
    return true;
  }
  const auto k = static_cast<Eigen::Index>(active.size());
  const Eigen::MatrixXd N = stack_normals(rows, active, n);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k, n + k);
  K.topLeftCorner(n, n) = p.H;
  K.topRightCorner(n, k) = N;
  K.bottomLeftCorner(k, n) = N.transpose();
  Eigen::VectorXd rhs(n + k);
  rhs.head(n) = -p.F;
  for (Eigen::Index j = 0; j < k; ++j) rhs(n + j) = rows[active[static_cast<std::size_t>(j)]].rhs;
  // With H positive definite, K is nonsingular exactly when N has full column rank.
  Eigen::MatrixXd Nn = N;
  for (Eigen::Index j = 0; j < k; ++j) Nn.col(j).normalize();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Nn);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) return false;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
  Eigen::VectorXd sol = lu.solve(rhs);
  sol += lu.solve(rhs - K * sol);
  if (!sol.allFinite()) return false;
  x = sol.head(n);
  for (Eigen::Index j = 0; j < k; ++j) lambda[static_cast<std::size_t>(j)] = sol(n + j);
  return true;
}

inline QpSolution solve_factored(const QpProblem& p, const Eigen::LLT<Eigen::MatrixXd>& llt, const QpSettings& cfg,
                                 const std::vector<ConstraintRef>* warm_start) {
  const int n = p.num_variables();
  const std::vector<Row> rows = constraint_rows(p);
  const auto row_index = [&](const ConstraintRef& c) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].ref == c) return static_cast<int>(i);
    }
    return -1;
  };

  QpSolution sol;
  std::vector<int> active;
  std::vector<double> lambda;
  Eigen::VectorXd x;

  if (warm_start != nullptr && !warm_start->empty()) {
    // Accept the guessed working set only if it is already a KKT point.
    std::vector<int> guess;
    for (const auto& c : *warm_start) {
      const int i = row_index(c);
      if (i >= 0) guess.push_back(i);
    }
    if (solve_on_working_set(p, llt, rows, guess, x, lambda)) {
      bool ok = std::all_of(lambda.begin(), lambda.end(), [&](double l) { return l >= -cfg.feasibility_tol; });
      for (const Row& r : rows) ok = ok && r.normal.dot(x) - r.rhs <= cfg.feasibility_tol;
      if (ok) {
        for (double& l : lambda) l = std::max(l, 0.0);
        sol.primal = x;
        sol.status = QpStatus::optimal;
        finalize(p, rows, guess, lambda, sol);
        return sol;
      }
    }
  }

  x = -llt.solve(p.F);
  active.clear();
  lambda.clear();
  int iterations = 0;
  bool exhausted = false;

  while (!exhausted) {
    // Most violated row not yet in the working set.
    int add = -1;
    double worst = cfg.feasibility_tol;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (std::find(active.begin(), active.end(), static_cast<int>(i)) != active.end()) continue;
      const double viol = rows[i].normal.dot(x) - rows[i].rhs;
      if (viol > worst) {
        worst = viol;
        add = static_cast<int>(i);
      }
    }
    if (add < 0) break;

    double lambda_add = 0.0;
    while (true) {
      if (++iterations > cfg.max_iter) {
        exhausted = true;
        break;
      }
      const Eigen::VectorXd& np = rows[add].normal;
      const Eigen::VectorXd Hn = llt.solve(np);
      Eigen::VectorXd z;
      Eigen::VectorXd r;
      if (active.empty()) {
        z = -Hn;
      } else {
        const Eigen::MatrixXd N = stack_normals(rows, active, n);
        const Eigen::MatrixXd HN = llt.solve(N);
        Eigen::LLT<Eigen::MatrixXd> m_llt(N.transpose() * HN);
        r = -m_llt.solve(N.transpose() * Hn);
        z = -Hn - HN * r;
      }

      // Partial step: largest t keeping every working-set multiplier >= 0.
      double t_dual = std::numeric_limits<double>::infinity();
      int block = -1;
      for (Eigen::Index j = 0; j < r.size(); ++j) {
        if (r(j) < 0.0) {
          const double t = lambda[static_cast<std::size_t>(j)] / -r(j);
          if (t < t_dual) {
            t_dual = t;
            block = static_cast<int>(j);
          }
        }
      }
      // Full step: makes the added row active.
      double t_primal = std::numeric_limits<double>::infinity();
      const double slope = np.dot(z);
      if (z.norm() > 1e-12 * std::max(1.0, Hn.norm()) && slope < 0.0) {
        t_primal = (np.dot(x) - rows[add].rhs) / -slope;
      }

      if (!std::isfinite(t_primal) && !std::isfinite(t_dual)) {
        throw QpInfeasibleError("QP infeasible: constraint cannot be satisfied together with the working set");
      }
      const double t = std::min(t_primal, t_dual);
      if (std::isfinite(t_primal)) x += t * z;
      for (Eigen::Index j = 0; j < r.size(); ++j) lambda[static_cast<std::size_t>(j)] += t * r(j);
      lambda_add += t;

      if (t_primal <= t_dual) {
        active.push_back(add);
        lambda.push_back(lambda_add);
        break;
      }
      active.erase(active.begin() + block);
      lambda.erase(lambda.begin() + block);
    }
  }

  sol.iterations = iterations;
  sol.status = exhausted ? QpStatus::max_iter : QpStatus::optimal;
  if (!exhausted) {
    // Re-solve on the final working set to remove accumulated round-off.
    double max_dual = 0.0;
    for (double l : lambda) max_dual = std::max(max_dual, std::abs(l));
    Eigen::VectorXd xp;
    std::vector<double> lp;
    if (solve_on_working_set(p, llt, rows, active, xp, lp) &&
        std::all_of(lp.begin(), lp.end(), [&](double l) { return l >= -1e-12 * std::max(1.0, max_dual); })) {
      x = xp;
      lambda = lp;
    }
    for (double& l : lambda) l = std::max(l, 0.0);
  }
  sol.primal = x;
  finalize(p, rows, active, lambda, sol);
  return sol;
}

}  // namespace detail

/// Solves one problem. Throws ValidationError on malformed data and
/// QpInfeasibleError when the constraint set is empty. Exceeding max_iter
/// returns status max_iter.
inline QpSolution solve(const QpProblem& problem, const QpSettings& cfg = {},
                        const std::vector<ConstraintRef>* warm_start = nullptr) {
  problem.validate(cfg);
  Eigen::LLT<Eigen::MatrixXd> llt(problem.H);
  return detail::solve_factored(problem, llt, cfg, warm_start);
}

struct QpBatchEntry {
  std::optional<QpSolution> solution;
  std::string error;
  bool ok() const { return solution.has_value(); }
};

/// Solves every problem; output order matches input order. Consecutive
/// problems with identical H share one Cholesky factorization.
inline std::vector<QpBatchEntry> solve_batch(const std::vector<QpProblem>& problems, const QpSettings& cfg = {}) {
  std::vector<QpBatchEntry> out(problems.size());
  std::optional<Eigen::LLT<Eigen::MatrixXd>> llt;
  const Eigen::MatrixXd* factored = nullptr;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const QpProblem& p = problems[i];
    try {
      p.validate(cfg);
      if (factored == nullptr || factored->rows() != p.H.rows() || *factored != p.H) {
        llt.emplace(p.H);
        factored = &p.H;
      }
      out[i].solution = detail::solve_factored(p, *llt, cfg, nullptr);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  }
  return out;
}

/// Gradients of a scalar loss L(x*) with respect to the problem data, by
/// implicit differentiation of the KKT conditions on the strictly active set.
/// Rows with multiplier <= degenerate_tol are treated as inactive.
inline QpGradients grad_solution(const QpProblem& problem, const QpSolution& solution,
                                 const Eigen::VectorXd& dloss_dprimal, const QpSettings& cfg = {}) {
  if (solution.status != QpStatus::optimal) throw QpGradientError("grad_solution: solution is not optimal");
  const int n = problem.num_variables();
  if (dloss_dprimal.size() != n) throw QpGradientError("grad_solution: gradient size mismatch");

  std::vector<detail::Row> rows;
  std::vector<double> lambda;
  for (const auto& c : solution.active_set) {
    double l = 0.0;
    switch (c.kind) {
      case ConstraintRef::Kind::general: l = solution.duals_ineq(c.index); break;
      case ConstraintRef::Kind::lower: l = solution.duals_lower(c.index); break;
      case ConstraintRef::Kind::upper: l = solution.duals_upper(c.index); break;
    }
    if (l > cfg.degenerate_tol) {
      rows.push_back(detail::make_row(problem, c));
      lambda.push_back(l);
    }
  }

  Eigen::LLT<Eigen::MatrixXd> llt(problem.H);
  if (llt.info() != Eigen::Success) throw QpGradientError("grad_solution: H is not positive definite");
  const Eigen::VectorXd& x = solution.primal;
  const Eigen::VectorXd Hg = llt.solve(dloss_dprimal);

  // K [w; y] = [g; 0] with K = [H N; N' 0]:
  //   y = (N' H^-1 N)^-1 N' H^-1 g,   w = H^-1 (g - N y)
  const auto k = static_cast<Eigen::Index>(rows.size());
  Eigen::VectorXd w = Hg;
  Eigen::VectorXd y(k);
  if (k > 0) {
    Eigen::MatrixXd N(n, k);
    for (Eigen::Index j = 0; j < k; ++j) N.col(j) = rows[static_cast<std::size_t>(j)].normal;
    const Eigen::MatrixXd HN = llt.solve(N);
    Eigen::MatrixXd M = N.transpose() * HN;
    Eigen::LLT<Eigen::MatrixXd> m_llt(M);
    const Eigen::VectorXd d = m_llt.matrixLLT().diagonal();
    // Linearly dependent active rows: fall back to the regularized system.
    if (m_llt.info() != Eigen::Success || d.minCoeff() <= 1e-7 * d.maxCoeff()) {
      M.diagonal().array() += cfg.kkt_regularization;
      m_llt.compute(M);
      if (m_llt.info() != Eigen::Success) throw QpGradientError("grad_solution: singular KKT system");
    }
    y = m_llt.solve(N.transpose() * Hg);
    w = Hg - HN * y;
  }
  if (!w.allFinite() || !y.allFinite()) throw QpGradientError("grad_solution: non-finite KKT solution");

  QpGradients g;
  g.dF = -w;
  g.dH = -0.5 * (w * x.transpose() + x * w.transpose());
  g.dG = Eigen::MatrixXd::Zero(problem.num_constraints(), n);
  g.dh = Eigen::VectorXd::Zero(problem.num_constraints());
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& r = rows[static_cast<std::size_t>(j)];
    if (r.ref.kind != ConstraintRef::Kind::general) continue;
    g.dh(r.ref.index) = y(j);
    g.dG.row(r.ref.index) = -lambda[static_cast<std::size_t>(j)] * w.transpose() - y(j) * x.transpose();
  }
  return g;
}

}  // namespace attclf
