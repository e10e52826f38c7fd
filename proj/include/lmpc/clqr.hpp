#pragma once

#include <Eigen/Dense>
#include <vector>

#include "lmpc/linear_system.hpp"
#include "lmpc/qp.hpp"
#include "lmpc/safe_set.hpp"

namespace lmpc {

/// Solution of the discrete algebraic Riccati equation together with the
/// optimal state-feedback gain u = -K x.
struct RiccatiSolution {
  Eigen::MatrixXd P;
  Eigen::MatrixXd K;
  double residual = 0.0;  // Frobenius norm of P - (Q + A'PA - A'PB (R+B'PB)^-1 B'PA)
};

/// Fixed-point iteration on the Riccati recursion until the residual drops
/// below tol. Throws InfeasibleError when the iteration diverges, which
/// indicates (A, B) is not stabilizable.
RiccatiSolution solve_riccati(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                              const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                              double tol = 1e-12, int max_iterations = 10000);

/// Reference solution of the infinite-horizon constrained regulator.
struct OracleSolution {
  std::vector<Eigen::VectorXd> states;  // x_0..x_T
  std::vector<Eigen::VectorXd> inputs;  // u_0..u_{T-1}
  double cost = 0.0;                    // stage costs plus the Riccati tail
  int horizon = 0;                      // T actually used
  bool tail_certified = false;
};

/// One long-horizon QP with the Riccati matrix as terminal cost. The tail is
/// certified by rolling the unconstrained LQR law forward 50 steps without
/// constraint violation; on failure the horizon doubles (up to three times).
OracleSolution solve_clqr(const TaskSpec& spec, int horizon = 200,
                          const SolverSettings& settings = {});

struct ErrorMetrics {
  double sigma_bar = 0.0;        // max_t || learned_t - oracle_t ||_2
  double delta_j_percent = 0.0;  // |J_oracle - J_learned| / J_oracle * 100
};

/// Per-step deviation and normalized cost gap between the oracle and a
/// learned trajectory, padding the shorter sequence with x_target.
ErrorMetrics error_metrics(const OracleSolution& oracle, const Trajectory& learned,
                           const Eigen::Ref<const Eigen::VectorXd>& x_target);

}  // namespace lmpc
