#include "mpccbf/sqp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpccbf/errors.hpp"

namespace mpccbf {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Linearization {
  Eigen::VectorXd ce;
  Eigen::MatrixXd Je;
  Eigen::VectorXd ci;
  Eigen::MatrixXd Ji;
};

Linearization linearize(const NlpProblem& p, const Eigen::VectorXd& z) {
  Linearization lin;
  p.eval_eq(z, lin.ce, lin.Je);
  p.eval_ineq(z, lin.ci, lin.Ji);
  return lin;
}

double l1_infeasibility(const Linearization& lin) {
  double total = lin.ce.cwiseAbs().sum();
  for (int i = 0; i < lin.ci.size(); ++i) total += std::max(0.0, -lin.ci[i]);
  return total;
}

Eigen::VectorXd clamp_box(const NlpProblem& p, Eigen::VectorXd z) {
  for (int i = 0; i < z.size(); ++i) z[i] = std::clamp(z[i], p.lower[i], p.upper[i]);
  return z;
}

// QP in the step d: exact objective Hessian, linearized rows, box rows last.
QpProblem step_qp(const NlpProblem& p, const Eigen::VectorXd& z, const Linearization& lin) {
  const int n = p.num_variables();
  std::vector<int> lo_rows;
  std::vector<int> up_rows;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(p.lower[i])) lo_rows.push_back(i);
    if (std::isfinite(p.upper[i])) up_rows.push_back(i);
  }
  const int mi = p.num_ineq;
  const int m = mi + static_cast<int>(lo_rows.size() + up_rows.size());
  QpProblem qp;
  qp.H = p.H;
  qp.g = p.H * z + p.g;
  qp.A_eq = lin.Je;
  qp.b_eq = -lin.ce;
  qp.A_ineq = Eigen::MatrixXd::Zero(m, n);
  qp.b_ineq.resize(m);
  if (mi > 0) {
    qp.A_ineq.topRows(mi) = lin.Ji;
    qp.b_ineq.head(mi) = -lin.ci;
  }
  int r = mi;
  for (int i : lo_rows) {
    qp.A_ineq(r, i) = 1.0;
    qp.b_ineq[r++] = p.lower[i] - z[i];
  }
  for (int i : up_rows) {
    qp.A_ineq(r, i) = -1.0;
    qp.b_ineq[r++] = z[i] - p.upper[i];
  }
  return qp;
}

NlpSolution sqp_core(const NlpProblem& p, const Eigen::VectorXd& z0, const SqpOptions& opt,
                     bool allow_elastic);

bool converged(const NlpProblem& p, const Eigen::VectorXd& z, double kkt, const SqpOptions& opt) {
  return kkt <= opt.kkt_tol && constraint_violation(p, z) <= opt.feasibility_tol &&
         equality_violation(p, z) <= opt.equality_tol;
}

NlpSolution finish(const NlpProblem& p, NlpSolution sol) {
  sol.objective = p.objective(sol.z);
  sol.constraint_violation = constraint_violation(p, sol.z);
  return sol;
}

NlpSolution sqp_core(const NlpProblem& p, const Eigen::VectorXd& z0, const SqpOptions& opt,
                     bool allow_elastic) {
  NlpSolution sol;
  sol.z = clamp_box(p, z0);
  sol.mu_eq = Eigen::VectorXd::Zero(p.num_eq);
  sol.lambda_ineq = Eigen::VectorXd::Zero(p.num_ineq);
  Linearization lin = linearize(p, sol.z);
  double rho = opt.rho_floor;
  std::vector<int> warm;

  const double sigma0 = opt.damping_initial * (1.0 + p.H.diagonal().cwiseAbs().maxCoeff());
  double sigma = 0.0;

  for (int it = 1; it <= opt.max_iterations; ++it) {
    sol.iterations = it;
    QpProblem qp = step_qp(p, sol.z, lin);
    const double infeas0 = l1_infeasibility(lin);
    const Eigen::VectorXd grad = p.H * sol.z + p.g;

    bool accepted = false;
    bool exhausted = false;
    Eigen::VectorXd trial;
    Linearization trial_lin;
    double merit0 = 0.0;
    double merit1 = 0.0;
    double alpha = 1.0;
    Eigen::VectorXd mu_used;
    Eigen::VectorXd lambda_used;

    for (int attempt = 0; !accepted && !exhausted; ++attempt) {
      qp.H = p.H;
      if (sigma > 0.0) qp.H.diagonal().array() += sigma;
      const QpSolution step = solve_qp(qp, {}, warm.empty() ? nullptr : &warm);
      if (step.status == QpStatus::Infeasible) {
        if (!allow_elastic) {
          sol.status = NlpStatus::Infeasible;
          sol.kkt_residual = kInf;
          return finish(p, sol);
        }
        const ElasticResult er = elastic_feasibility(p, sol.z, opt);
        if (er.min_violation > opt.feasibility_tol) {
          NlpSolution out = sol;
          out.z = er.z;
          out.status = NlpStatus::Infeasible;
          out.used_elastic = true;
          out.elastic_violation = er.min_violation;
          out.kkt_residual = kInf;
          return finish(p, out);
        }
        NlpSolution restart = sqp_core(p, er.z, opt, false);
        restart.used_elastic = true;
        restart.elastic_violation = er.min_violation;
        restart.iterations += it;
        if (restart.status == NlpStatus::Infeasible) {
          // The linearization failed again near a point that is feasible.
          restart.status = NlpStatus::MaxIterations;
          restart.z = er.z;
        }
        restart.merit_history.insert(restart.merit_history.begin(), sol.merit_history.begin(),
                                     sol.merit_history.end());
        return finish(p, restart);
      }
      if (step.status != QpStatus::Optimal) {
        sol.status = NlpStatus::MaxIterations;
        sol.kkt_residual = kInf;
        return finish(p, sol);
      }
      warm = step.active_set;

      const Eigen::VectorXd& d = step.z;
      mu_used = step.mu_eq;
      lambda_used = step.lambda_ineq.head(p.num_ineq);
      double max_dual = 0.0;
      if (mu_used.size() > 0) max_dual = std::max(max_dual, mu_used.cwiseAbs().maxCoeff());
      if (lambda_used.size() > 0) max_dual = std::max(max_dual, lambda_used.maxCoeff());
      rho = std::max({rho, opt.rho_floor, 10.0 * max_dual});
      merit0 = p.objective(sol.z) + rho * infeas0;
      const double slope = std::min(grad.dot(d) - rho * infeas0, 0.0);
      auto armijo_ok = [&](double a, double m1) { return m1 <= merit0 + opt.armijo * a * slope; };

      trial = clamp_box(p, sol.z + d);
      trial_lin = linearize(p, trial);
      merit1 = p.objective(trial) + rho * l1_infeasibility(trial_lin);
      alpha = 1.0;
      if (armijo_ok(1.0, merit1)) {
        accepted = true;
        break;
      }
      // Second-order correction: re-solve with the constraint values seen
      // at the full step so that the curvature error is absorbed.
      QpProblem soc = qp;
      soc.b_eq = -(trial_lin.ce - lin.Je * d);
      if (p.num_ineq > 0) soc.b_ineq.head(p.num_ineq) = -(trial_lin.ci - lin.Ji * d);
      const QpSolution corr = solve_qp(soc, {}, &step.active_set);
      if (corr.status == QpStatus::Optimal) {
        Eigen::VectorXd t2 = clamp_box(p, sol.z + corr.z);
        Linearization l2 = linearize(p, t2);
        const double m2 = p.objective(t2) + rho * l1_infeasibility(l2);
        if (armijo_ok(1.0, m2)) {
          trial = std::move(t2);
          trial_lin = std::move(l2);
          merit1 = m2;
          mu_used = corr.mu_eq;
          lambda_used = corr.lambda_ineq.head(p.num_ineq);
          accepted = true;
          break;
        }
      }
      if (attempt < opt.max_damping_increases) {
        // Rejected: damp the QP Hessian so the next step is shorter and
        // closer to the region where the linearization holds.
        sigma = sigma == 0.0 ? sigma0 : 10.0 * sigma;
        continue;
      }
      for (int bt = 1; bt <= opt.max_backtracks; ++bt) {
        alpha *= 0.5;
        trial = clamp_box(p, sol.z + alpha * d);
        trial_lin = linearize(p, trial);
        merit1 = p.objective(trial) + rho * l1_infeasibility(trial_lin);
        if (armijo_ok(alpha, merit1)) {
          accepted = true;
          break;
        }
      }
      exhausted = !accepted;
    }

    if (!accepted) {
      // No decrease available: report from the current iterate.
      const KktMeasures k = nlp_kkt(p, sol.z, mu_used, lambda_used);
      sol.kkt_residual = k.max();
      sol.mu_eq = mu_used;
      sol.lambda_ineq = lambda_used;
      sol.status = converged(p, sol.z, sol.kkt_residual, opt) ? NlpStatus::Feasible
                                                              : NlpStatus::MaxIterations;
      return finish(p, sol);
    }
    if (alpha == 1.0) sigma = sigma > 10.0 * sigma0 * 1e-4 ? 0.1 * sigma : 0.0;
    sol.merit_history.push_back({rho, merit0, merit1, alpha});
    sol.z = trial;
    lin = std::move(trial_lin);
    sol.mu_eq = mu_used;
    sol.lambda_ineq = lambda_used;

    const KktMeasures k = nlp_kkt(p, sol.z, mu_used, lambda_used);
    sol.kkt_residual = k.max();
    if (converged(p, sol.z, sol.kkt_residual, opt)) {
      sol.status = NlpStatus::Feasible;
      return finish(p, sol);
    }
  }
  sol.status = NlpStatus::MaxIterations;
  return finish(p, sol);
}

}  // namespace

void NlpProblem::eval_eq(const Eigen::VectorXd& z, Eigen::VectorXd& c, Eigen::MatrixXd& J) const {
  if (num_eq == 0 || !eq_fn) {
    c.resize(0);
    J.resize(0, num_variables());
    return;
  }
  eq_fn(z, c, J);
  if (c.size() != num_eq || J.rows() != num_eq || J.cols() != num_variables())
    throw ShapeMismatch("nlp: equality callback returned wrong dimensions");
}

void NlpProblem::eval_ineq(const Eigen::VectorXd& z, Eigen::VectorXd& c, Eigen::MatrixXd& J) const {
  if (num_ineq == 0 || !ineq_fn) {
    c.resize(0);
    J.resize(0, num_variables());
    return;
  }
  ineq_fn(z, c, J);
  if (c.size() != num_ineq || J.rows() != num_ineq || J.cols() != num_variables())
    throw ShapeMismatch("nlp: inequality callback returned wrong dimensions");
}

NlpProblem NlpProblem::from_qp(const QpProblem& qp) {
  NlpProblem p;
  const int n = qp.num_variables();
  p.H = qp.H;
  p.g = qp.g;
  p.lower = Eigen::VectorXd::Constant(n, -kInf);
  p.upper = Eigen::VectorXd::Constant(n, kInf);
  p.num_eq = qp.num_equalities();
  p.num_ineq = qp.num_inequalities();
  const Eigen::MatrixXd Ae = qp.A_eq;
  const Eigen::VectorXd be = qp.b_eq;
  const Eigen::MatrixXd Ai = qp.A_ineq;
  const Eigen::VectorXd bi = qp.b_ineq;
  p.eq_fn = [Ae, be](const Eigen::VectorXd& z, Eigen::VectorXd& c, Eigen::MatrixXd& J) {
    c = Ae * z - be;
    J = Ae;
  };
  p.ineq_fn = [Ai, bi](const Eigen::VectorXd& z, Eigen::VectorXd& c, Eigen::MatrixXd& J) {
    c = Ai * z - bi;
    J = Ai;
  };
  return p;
}

double KktMeasures::max() const { return std::max({stationarity, primal, complementarity}); }

KktMeasures nlp_kkt(const NlpProblem& p, const Eigen::VectorXd& z, const Eigen::VectorXd& mu_eq,
                    const Eigen::VectorXd& lambda_ineq) {
  Linearization lin = linearize(p, z);
  const Eigen::VectorXd grad = p.H * z + p.g;
  Eigen::VectorXd r = grad;
  if (p.num_eq > 0) r -= lin.Je.transpose() * mu_eq;
  if (p.num_ineq > 0) r -= lin.Ji.transpose() * lambda_ineq;
  for (int i = 0; i < r.size(); ++i) {
    const double at_tol = 1e-8 * (1.0 + std::abs(z[i]));
    if (std::isfinite(p.lower[i]) && z[i] - p.lower[i] <= at_tol && r[i] > 0.0) r[i] = 0.0;
    if (std::isfinite(p.upper[i]) && p.upper[i] - z[i] <= at_tol && r[i] < 0.0) r[i] = 0.0;
  }
  KktMeasures k;
  k.stationarity = r.size() > 0 ? r.cwiseAbs().maxCoeff() / (1.0 + grad.cwiseAbs().maxCoeff()) : 0.0;
  k.primal = constraint_violation(p, z);
  for (int i = 0; i < lambda_ineq.size(); ++i) {
    k.complementarity = std::max(k.complementarity, std::abs(lambda_ineq[i] * lin.ci[i]));
    k.complementarity = std::max(k.complementarity, -lambda_ineq[i]);
  }
  return k;
}

double constraint_violation(const NlpProblem& p, const Eigen::VectorXd& z) {
  Linearization lin = linearize(p, z);
  double v = 0.0;
  if (lin.ce.size() > 0) v = std::max(v, lin.ce.cwiseAbs().maxCoeff());
  for (int i = 0; i < lin.ci.size(); ++i) v = std::max(v, -lin.ci[i]);
  for (int i = 0; i < z.size(); ++i) {
    v = std::max(v, p.lower[i] - z[i]);
    v = std::max(v, z[i] - p.upper[i]);
  }
  return v;
}

double equality_violation(const NlpProblem& p, const Eigen::VectorXd& z) {
  Eigen::VectorXd c;
  Eigen::MatrixXd J;
  p.eval_eq(z, c, J);
  return c.size() > 0 ? c.cwiseAbs().maxCoeff() : 0.0;
}

double inequality_shortfall(const NlpProblem& p, const Eigen::VectorXd& z) {
  Eigen::VectorXd c;
  Eigen::MatrixXd J;
  p.eval_ineq(z, c, J);
  double total = 0.0;
  for (int i = 0; i < c.size(); ++i) total += std::max(0.0, -c[i]);
  return total;
}

NlpSolution solve_nlp_sqp(const NlpProblem& problem, const Eigen::VectorXd& z0,
                          const SqpOptions& options) {
  const int n = problem.num_variables();
  if (z0.size() != n || problem.H.rows() != n || problem.H.cols() != n ||
      problem.lower.size() != n || problem.upper.size() != n)
    throw ShapeMismatch("nlp: dimensions of z0, H, g and the box must agree");
  return sqp_core(problem, z0, options, options.allow_elastic);
}

ElasticResult elastic_feasibility(const NlpProblem& problem, const Eigen::VectorXd& z0,
                                  const SqpOptions& options) {
  const int n = problem.num_variables();
  const int mi = problem.num_ineq;
  const double eps = options.elastic_proximal;
  const Eigen::VectorXd zs = clamp_box(problem, z0);

  Eigen::VectorXd c0;
  Eigen::MatrixXd J0;
  problem.eval_ineq(zs, c0, J0);
  const Eigen::VectorXd s0 = (-c0).cwiseMax(0.0);

  NlpProblem el;
  el.H = eps * Eigen::MatrixXd::Identity(n + mi, n + mi);
  el.g.resize(n + mi);
  el.g.head(n) = -eps * zs;
  el.g.tail(mi) = Eigen::VectorXd::Ones(mi) - eps * s0;
  el.lower.resize(n + mi);
  el.upper.resize(n + mi);
  el.lower.head(n) = problem.lower;
  el.upper.head(n) = problem.upper;
  el.lower.tail(mi).setZero();
  el.upper.tail(mi).setConstant(kInf);
  el.num_eq = problem.num_eq;
  el.num_ineq = mi;
  el.eq_fn = [&problem, n, mi](const Eigen::VectorXd& y, Eigen::VectorXd& c, Eigen::MatrixXd& J) {
    Eigen::MatrixXd Jz;
    problem.eval_eq(y.head(n), c, Jz);
    J = Eigen::MatrixXd::Zero(c.size(), n + mi);
    J.leftCols(n) = Jz;
  };
  el.ineq_fn = [&problem, n, mi](const Eigen::VectorXd& y, Eigen::VectorXd& c, Eigen::MatrixXd& J) {
    Eigen::MatrixXd Jz;
    problem.eval_ineq(y.head(n), c, Jz);
    c += y.tail(mi);
    J = Eigen::MatrixXd::Zero(mi, n + mi);
    J.leftCols(n) = Jz;
    J.rightCols(mi).setIdentity();
  };

  Eigen::VectorXd y0(n + mi);
  y0 << zs, s0;
  SqpOptions inner = options;
  inner.allow_elastic = false;
  const NlpSolution sol = sqp_core(el, y0, inner, false);

  ElasticResult out;
  out.z = sol.z.head(n);
  out.inner_status = sol.status;
  Eigen::VectorXd ce;
  Eigen::MatrixXd Je;
  problem.eval_eq(out.z, ce, Je);
  out.min_violation = inequality_shortfall(problem, out.z) + ce.cwiseAbs().sum();
  return out;
}

}  // namespace mpccbf
