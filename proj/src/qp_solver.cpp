#include "mpccbf/qp_solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>
#include <limits>

#include "mpccbf/errors.hpp"

namespace mpccbf {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ReducedQp {
  Eigen::MatrixXd G;
  Eigen::VectorXd c;
  Eigen::MatrixXd C;  // C w >= d
  Eigen::VectorXd d;
};

struct GiResult {
  Eigen::VectorXd w;
  Eigen::VectorXd lambda;
  std::vector<int> active;
  QpStatus status = QpStatus::Infeasible;
  int iterations = 0;
  double regularization = 0.0;
};

// Active-set factor bookkeeping: J'N = [R; 0] with J J' = G^-1.
class GiFactors {
 public:
  explicit GiFactors(Eigen::MatrixXd J) : J_(std::move(J)), R_(Eigen::MatrixXd::Zero(J_.rows(), J_.rows())) {}

  int size() const { return q_; }
  const Eigen::MatrixXd& J() const { return J_; }

  Eigen::VectorXd step_primal(const Eigen::VectorXd& d) const {
    const int n = static_cast<int>(J_.rows());
    return J_.rightCols(n - q_) * d.tail(n - q_);
  }
  Eigen::VectorXd step_dual(const Eigen::VectorXd& d) const {
    if (q_ == 0) return {};
    return R_.topLeftCorner(q_, q_).triangularView<Eigen::Upper>().solve(d.head(q_));
  }

  // d = J' n_plus on entry. Returns false when the new normal is dependent.
  bool add(Eigen::VectorXd d) {
    const int n = static_cast<int>(J_.rows());
    for (int j = n - 1; j >= q_ + 1; --j) {
      const double a = d[j - 1];
      const double b = d[j];
      const double h = std::hypot(a, b);
      if (h == 0.0) continue;
      const double c = a / h;
      const double s = b / h;
      d[j - 1] = h;
      d[j] = 0.0;
      const Eigen::VectorXd col_a = J_.col(j - 1);
      J_.col(j - 1) = c * col_a + s * J_.col(j);
      J_.col(j) = -s * col_a + c * J_.col(j);
    }
    R_.col(q_).head(q_ + 1) = d.head(q_ + 1);
    const double pivot = std::abs(d[q_]);
    ++q_;
    if (pivot <= std::numeric_limits<double>::epsilon() * r_norm_) return false;
    r_norm_ = std::max(r_norm_, pivot);
    return true;
  }

  // Removes the active constraint at position k.
  void remove(int k) {
    const int n = static_cast<int>(J_.rows());
    for (int col = k; col < q_ - 1; ++col) R_.col(col) = R_.col(col + 1);
    R_.col(q_ - 1).setZero();
    for (int j = k; j < q_ - 1; ++j) {
      const double a = R_(j, j);
      const double b = R_(j + 1, j);
      const double h = std::hypot(a, b);
      if (h == 0.0) continue;
      const double c = a / h;
      const double s = b / h;
      for (int col = j; col < q_ - 1; ++col) {
        const double ra = R_(j, col);
        const double rb = R_(j + 1, col);
        R_(j, col) = c * ra + s * rb;
        R_(j + 1, col) = -s * ra + c * rb;
      }
      R_(j + 1, j) = 0.0;
      const Eigen::VectorXd col_a = J_.col(j);
      J_.col(j) = c * col_a + s * J_.col(j + 1);
      J_.col(j + 1) = -s * col_a + c * J_.col(j + 1);
    }
    (void)n;
    --q_;
  }

 private:
  Eigen::MatrixXd J_;
  Eigen::MatrixXd R_;
  int q_ = 0;
  double r_norm_ = 1.0;
};

GiResult goldfarb_idnani(const ReducedQp& qp, const QpOptions& opt, const std::vector<int>* warm) {
  const int n = static_cast<int>(qp.c.size());
  const int m = static_cast<int>(qp.d.size());
  GiResult res;
  res.lambda = Eigen::VectorXd::Zero(m);

  Eigen::MatrixXd G = qp.G;
  Eigen::LLT<Eigen::MatrixXd> llt;
  double reg = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    llt.compute(G);
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
      const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
      ok = diag.minCoeff() > 1e-10 * std::max(1.0, diag.maxCoeff());
    }
    if (ok) break;
    const double add = reg == 0.0 ? opt.regularization : reg * 100.0;
    G.diagonal().array() += add - reg;
    reg = add;
  }
  if (llt.info() != Eigen::Success) {
    res.status = QpStatus::Infeasible;
    return res;
  }
  res.regularization = reg;

  if (n == 0) {
    res.w = Eigen::VectorXd::Zero(0);
    res.status = (m == 0 || qp.d.maxCoeff() <= opt.feasibility_tol) ? QpStatus::Optimal
                                                                    : QpStatus::Infeasible;
    if (m > 0 && res.status == QpStatus::Infeasible) return res;
    return res;
  }

  // J = L^-T so that J J' = G^-1.
  Eigen::MatrixXd J = llt.matrixU().solve(Eigen::MatrixXd::Identity(n, n));
  GiFactors factors(std::move(J));
  Eigen::VectorXd w = -llt.solve(qp.c);

  std::vector<int> active;
  std::vector<double> u;
  std::vector<char> is_active(m, 0);
  const int max_iter = opt.max_iterations > 0 ? opt.max_iterations : 10 * (n + m) + 50;

  auto tol_of = [&](int i) { return opt.feasibility_tol * (1.0 + std::abs(qp.d[i])); };

  int iter = 0;
  while (true) {
    if (++iter > max_iter) {
      res.status = QpStatus::MaxIterations;
      break;
    }
    // Step 1: pick the violated row to add.
    int p = -1;
    if (warm) {
      for (int i : *warm) {
        if (i < 0 || i >= m || is_active[i]) continue;
        if (qp.C.row(i).dot(w) - qp.d[i] < -tol_of(i)) {
          p = i;
          break;
        }
      }
    }
    if (p < 0) {
      double worst = 0.0;
      for (int i = 0; i < m; ++i) {
        if (is_active[i]) continue;
        const double s = qp.C.row(i).dot(w) - qp.d[i];
        if (s < -tol_of(i) && s < worst) {
          worst = s;
          p = i;
        }
      }
    }
    if (p < 0) {
      res.status = QpStatus::Optimal;
      break;
    }

    const Eigen::VectorXd np = qp.C.row(p).transpose();
    double u_plus = 0.0;
    bool infeasible = false;
    // Step 2: move until row p becomes satisfied.
    while (true) {
      if (++iter > max_iter) break;
      const Eigen::VectorXd d = factors.J().transpose() * np;
      const int q = factors.size();
      const double dtail = d.tail(n - q).norm();
      const bool dependent = dtail <= 1e-12 * std::max(1.0, d.norm());
      const Eigen::VectorXd z = dependent ? Eigen::VectorXd::Zero(n) : factors.step_primal(d);
      const Eigen::VectorXd r = factors.step_dual(d);

      double t1 = kInf;
      int k = -1;
      for (int j = 0; j < q; ++j) {
        if (r[j] > 1e-15 * std::max(1.0, r.cwiseAbs().maxCoeff())) {
          const double ratio = u[j] / r[j];
          if (ratio < t1) {
            t1 = ratio;
            k = j;
          }
        }
      }
      const double sp = np.dot(w) - qp.d[p];
      double t2 = kInf;
      if (!dependent) t2 = -sp / z.dot(np);

      const double t = std::min(t1, t2);
      if (t == kInf) {
        infeasible = true;
        break;
      }
      if (t2 == kInf) {
        for (int j = 0; j < q; ++j) u[j] -= t * r[j];
        u_plus += t;
        is_active[active[k]] = 0;
        active.erase(active.begin() + k);
        u.erase(u.begin() + k);
        factors.remove(k);
        continue;
      }
      w += t * z;
      for (int j = 0; j < q; ++j) u[j] -= t * r[j];
      u_plus += t;
      if (t2 <= t1) {
        if (!factors.add(d)) {
          // Numerically dependent: undo the add and treat as satisfied.
          factors.remove(factors.size() - 1);
          break;
        }
        active.push_back(p);
        u.push_back(u_plus);
        is_active[p] = 1;
        break;
      }
      is_active[active[k]] = 0;
      active.erase(active.begin() + k);
      u.erase(u.begin() + k);
      factors.remove(k);
    }
    if (infeasible) {
      res.status = QpStatus::Infeasible;
      break;
    }
    if (iter > max_iter) {
      res.status = QpStatus::MaxIterations;
      break;
    }
  }

  res.w = w;
  for (std::size_t j = 0; j < active.size(); ++j) res.lambda[active[j]] = std::max(0.0, u[j]);
  res.active = active;
  res.iterations = iter;
  return res;
}

void check_shapes(const QpProblem& p) {
  const auto n = p.g.size();
  if (p.H.rows() != n || p.H.cols() != n) throw ShapeMismatch("qp: H must be n x n");
  if (p.A_ineq.rows() != p.b_ineq.size() || (p.A_ineq.rows() > 0 && p.A_ineq.cols() != n))
    throw ShapeMismatch("qp: inequality block has inconsistent dimensions");
  if (p.A_eq.rows() != p.b_eq.size() || (p.A_eq.rows() > 0 && p.A_eq.cols() != n))
    throw ShapeMismatch("qp: equality block has inconsistent dimensions");
}

}  // namespace

QpSolution solve_qp(const QpProblem& problem, const QpOptions& options,
                    const std::vector<int>* warm_active) {
  check_shapes(problem);
  const int n = problem.num_variables();
  const int me = problem.num_equalities();
  const int mi = problem.num_inequalities();
  const Eigen::MatrixXd H = 0.5 * (problem.H + problem.H.transpose());
  const Eigen::MatrixXd A_in = mi > 0 ? problem.A_ineq : Eigen::MatrixXd(0, n);

  QpSolution sol;
  sol.lambda_ineq = Eigen::VectorXd::Zero(mi);
  sol.mu_eq = Eigen::VectorXd::Zero(me);

  Eigen::VectorXd z_p = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd Z = Eigen::MatrixXd::Identity(n, n);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> eq_qr;
  if (me > 0) {
    eq_qr.compute(problem.A_eq.transpose());
    const int rank = static_cast<int>(eq_qr.rank());
    const Eigen::MatrixXd Q = eq_qr.householderQ();
    Z = Q.rightCols(n - rank);
    // Minimum-norm particular solution in the row space of A_eq.
    const Eigen::MatrixXd Q1 = Q.leftCols(rank);
    const Eigen::MatrixXd AQ1 = problem.A_eq * Q1;
    const Eigen::VectorXd y = AQ1.colPivHouseholderQr().solve(problem.b_eq);
    z_p = Q1 * y;
    const double eq_res = (problem.A_eq * z_p - problem.b_eq).cwiseAbs().maxCoeff();
    if (eq_res > 1e-9 * (1.0 + problem.b_eq.cwiseAbs().maxCoeff())) {
      sol.z = z_p;
      sol.status = QpStatus::Infeasible;
      return sol;
    }
  }

  ReducedQp red;
  red.G = Z.transpose() * H * Z;
  red.c = Z.transpose() * (H * z_p + problem.g);
  red.C = A_in * Z;
  red.d = problem.b_ineq - A_in * z_p;

  const GiResult gi = goldfarb_idnani(red, options, warm_active);
  sol.status = gi.status;
  sol.iterations = gi.iterations;
  sol.regularization = gi.regularization;
  sol.active_set = gi.active;
  sol.z = gi.w.size() == Z.cols() ? Eigen::VectorXd(z_p + Z * gi.w) : z_p;
  sol.lambda_ineq = gi.lambda;
  if (me > 0) {
    const Eigen::VectorXd rhs = H * sol.z + problem.g - A_in.transpose() * sol.lambda_ineq;
    sol.mu_eq = eq_qr.solve(rhs);
  }
  return sol;
}

}  // namespace mpccbf
