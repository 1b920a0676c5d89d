#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "mpccbf/qp_solver.hpp"

namespace mpccbf {

/// Value and Jacobian of a vector constraint function at z.
using ConstraintFn = std::function<void(const Eigen::VectorXd& z, Eigen::VectorXd& value,
                                        Eigen::MatrixXd& jacobian)>;

/// min 0.5 z'Hz + g'z + f0  s.t.  eq(z) = 0,  ineq(z) >= 0,  lower <= z <= upper.
///
/// The box is treated as actuator-hard: it is never relaxed, not even in the
/// elastic phase. Infinite entries mean "unbounded".
struct NlpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double f0 = 0.0;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  int num_eq = 0;
  int num_ineq = 0;
  ConstraintFn eq_fn;
  ConstraintFn ineq_fn;

  int num_variables() const { return static_cast<int>(g.size()); }
  double objective(const Eigen::VectorXd& z) const { return 0.5 * z.dot(H * z) + g.dot(z) + f0; }

  void eval_eq(const Eigen::VectorXd& z, Eigen::VectorXd& c, Eigen::MatrixXd& J) const;
  void eval_ineq(const Eigen::VectorXd& z, Eigen::VectorXd& c, Eigen::MatrixXd& J) const;

  /// Wraps a convex QP so both solvers can be compared on it.
  static NlpProblem from_qp(const QpProblem& qp);
};

enum class NlpStatus { Feasible, Infeasible, MaxIterations };

struct SqpOptions {
  int max_iterations = 50;
  double kkt_tol = 1e-6;
  double feasibility_tol = 1e-6;
  double equality_tol = 1e-8;  // dynamics-type rows are held tighter
  double armijo = 1e-4;
  double rho_floor = 10.0;
  int max_backtracks = 40;
  // Levenberg-style damping sigma*I added to the QP Hessian after a
  // rejected full step; sigma starts at damping_initial * (1 + max|H_ii|).
  double damping_initial = 1e-3;
  int max_damping_increases = 8;
  double elastic_proximal = 1e-6;
  bool allow_elastic = true;
};

struct MeritRecord {
  double rho = 0.0;
  double before = 0.0;
  double after = 0.0;
  double step = 1.0;
};

struct NlpSolution {
  Eigen::VectorXd z;
  NlpStatus status = NlpStatus::MaxIterations;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double constraint_violation = 0.0;  // max over equality, inequality and box rows
  int iterations = 0;
  Eigen::VectorXd mu_eq;
  Eigen::VectorXd lambda_ineq;
  std::vector<MeritRecord> merit_history;
  bool used_elastic = false;
  double elastic_violation = 0.0;
};

struct KktMeasures {
  double stationarity = 0.0;  // relative to 1 + |grad f|_inf
  double primal = 0.0;
  double complementarity = 0.0;
  double max() const;
};

/// KKT measures at z for the given equality/inequality multipliers; box
/// multipliers are recovered as the best nonnegative fit.
KktMeasures nlp_kkt(const NlpProblem& problem, const Eigen::VectorXd& z, const Eigen::VectorXd& mu_eq,
                    const Eigen::VectorXd& lambda_ineq);

/// Max violation over every row of the problem (box included).
double constraint_violation(const NlpProblem& problem, const Eigen::VectorXd& z);

/// Max absolute equality residual.
double equality_violation(const NlpProblem& problem, const Eigen::VectorXd& z);

/// Sum of inequality shortfalls max(0, -c_i(z)).
double inequality_shortfall(const NlpProblem& problem, const Eigen::VectorXd& z);

/// SQP with exact objective Hessian, linearized constraints and an l1 merit
/// line search. A QP subproblem that has no solution triggers the elastic
/// phase; a restart from its point follows when it finds a feasible one.
NlpSolution solve_nlp_sqp(const NlpProblem& problem, const Eigen::VectorXd& z0,
                          const SqpOptions& options = {});

struct ElasticResult {
  Eigen::VectorXd z;
  double min_violation = 0.0;
  NlpStatus inner_status = NlpStatus::MaxIterations;
};

/// Minimizes the total inequality shortfall subject to the equalities and
/// the box, with a small proximal pull toward z0 in (z, shortfall) space.
/// Among points of equal shortfall the one closest to the start wins.
ElasticResult elastic_feasibility(const NlpProblem& problem, const Eigen::VectorXd& z0,
                                  const SqpOptions& options = {});

}  // namespace mpccbf
