#pragma once

#include <Eigen/Dense>
#include <limits>
#include <memory>
#include <vector>

namespace lmpc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Dense convex QP in standard form
///
///   min  1/2 z'Hz + f'z
///   s.t. A_eq z = b_eq
///        lo <= A_in z <= hi
///
/// H must be symmetric positive semidefinite; lo <= hi componentwise.
/// Entries of lo / hi may be -inf / +inf.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd lo, hi;

  Eigen::Index num_vars() const { return f.size(); }
  Eigen::Index num_eq() const { return b_eq.size(); }
  Eigen::Index num_in() const { return lo.size(); }
};

enum class SolveStatus { Optimal, Infeasible, MaxIter };

const char* to_string(SolveStatus status);

struct QpSolution {
  Eigen::VectorXd z;
  double objective = 0.0;  // 1/2 z'Hz + f'z
  SolveStatus status = SolveStatus::MaxIter;
  double primal_residual = kInf;
  double dual_residual = kInf;
  int iterations = 0;
  double solve_time = 0.0;  // seconds
  Eigen::VectorXd dual;     // multipliers, equality rows first
  bool polished = false;
};

struct SolverSettings {
  double eps_primal = 1e-9;    // certified feasibility residual (inf-norm)
  double eps_dual = 1e-9;      // certified stationarity residual (inf-norm)
  int max_iterations = 200000;
  double sigma = 1e-6;         // proximal regularization
  double rho = 0.1;            // initial step size (equality rows use 1e3 * rho)
  double alpha = 1.6;          // over-relaxation
  bool adaptive_rho = true;
  int check_interval = 25;     // residual / termination check cadence
  bool polish = true;
  int polish_refine_steps = 3;
  double eps_infeasible = 1e-7;
  double polish_trigger = 1e-3;  // scaled residual below which polish is attempted
};

/// Operator-splitting QP solver with setup/solve separation.
///
/// setup() factors the reduced linear system once; solve() runs the splitting
/// iteration followed by an active-set polish that refines the solution to the
/// certified tolerances. Between solves the equality right-hand side and the
/// inequality bounds may be updated without refactorization, and the previous
/// solution warm starts the next solve. Instances hold mutable workspace and
/// are not thread safe; run concurrent solves on separate instances.
class QpSolver {
 public:
  explicit QpSolver(SolverSettings settings = {});
  ~QpSolver();
  QpSolver(QpSolver&&) noexcept;
  QpSolver& operator=(QpSolver&&) noexcept;
  QpSolver(const QpSolver&) = delete;
  QpSolver& operator=(const QpSolver&) = delete;

  void setup(const QpProblem& qp);
  bool is_setup() const;

  /// Replaces b_eq (same length). Cheap; keeps the factorization.
  void update_equality_rhs(const Eigen::Ref<const Eigen::VectorXd>& b_eq);
  /// Replaces the linear cost term (same length). Cheap.
  void update_linear_cost(const Eigen::Ref<const Eigen::VectorXd>& f);
  /// Seeds the next solve with a primal/dual guess (unscaled).
  void warm_start(const Eigen::Ref<const Eigen::VectorXd>& z,
                  const Eigen::Ref<const Eigen::VectorXd>& dual);

  QpSolution solve();

  const SolverSettings& settings() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot solve of a QP with fresh workspace.
QpSolution solve(const QpProblem& qp, const SolverSettings& settings = {});

/// One-shot solve of the LP  min c'z  s.t.  A_eq z = b_eq, lo <= A_in z <= hi.
QpSolution solve_lp(const Eigen::VectorXd& c, const Eigen::MatrixXd& A_eq,
                    const Eigen::VectorXd& b_eq, const Eigen::MatrixXd& A_in,
                    const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                    const SolverSettings& settings = {});

}  // namespace lmpc
