#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

namespace mpccbf {

/// min 0.5 z'Hz + g'z  s.t.  A_ineq z >= b_ineq,  A_eq z = b_eq.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A_ineq;
  Eigen::VectorXd b_ineq;
  Eigen::MatrixXd A_eq;  // may have zero rows
  Eigen::VectorXd b_eq;

  int num_variables() const { return static_cast<int>(g.size()); }
  int num_inequalities() const { return static_cast<int>(b_ineq.size()); }
  int num_equalities() const { return static_cast<int>(b_eq.size()); }
};

enum class QpStatus { Optimal, Infeasible, MaxIterations };

struct QpSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd lambda_ineq;  // >= 0, one per inequality row
  Eigen::VectorXd mu_eq;        // free, one per equality row
  QpStatus status = QpStatus::Infeasible;
  std::vector<int> active_set;  // inequality rows held with equality
  int iterations = 0;
  double regularization = 0.0;  // multiple of I added to the reduced Hessian
};

struct QpOptions {
  int max_iterations = 0;  // 0 selects 10 * (n + m) + 50
  double feasibility_tol = 1e-11;
  double regularization = 1e-8;
};

/// Dense Goldfarb-Idnani dual active-set method. Equality constraints are
/// eliminated first through an orthonormal null-space basis, so H only has
/// to be positive definite on that null space. Rows entering the active set
/// are picked by largest violation with ties going to the lowest index.
///
/// `warm_active` lists inequality rows to try first; it changes the pivot
/// order only, never the solution.
QpSolution solve_qp(const QpProblem& problem, const QpOptions& options = {},
                    const std::vector<int>* warm_active = nullptr);

}  // namespace mpccbf
