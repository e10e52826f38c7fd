#pragma once

#include <Eigen/Dense>

namespace lmpc {

/// Default tolerance for constraint membership checks. One order looser than
/// the QP solver's primal tolerance so that solver-feasible points always pass.
inline constexpr double kConstraintTol = 1e-7;

/// Discrete-time LTI plant x_{t+1} = A x_t + B u_t.
struct LinearSystem {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd B;  // n x m

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index input_dim() const { return B.cols(); }
};

/// Axis-aligned state and input boxes x_lo <= x <= x_hi, u_lo <= u <= u_hi.
struct BoxConstraints {
  Eigen::VectorXd x_lo, x_hi;
  Eigen::VectorXd u_lo, u_hi;
};

/// Quadratic stage cost h(x, u) = x'Qx + u'Ru with Q, R symmetric positive
/// definite.
struct QuadraticStageCost {
  Eigen::MatrixXd Q;  // n x n
  Eigen::MatrixXd R;  // m x m
};

/// A complete repetitive-task description: plant, constraints, stage cost,
/// fixed initial state, target equilibrium and controller horizon.
struct TaskSpec {
  LinearSystem system;
  BoxConstraints constraints;
  QuadraticStageCost cost;
  Eigen::VectorXd x_start;   // initial state, identical for every iteration
  Eigen::VectorXd x_target;  // equilibrium of the unforced system
  int horizon = 2;           // prediction horizon N >= 2
};

/// One exact simulation step A x + B u.
Eigen::VectorXd step(const LinearSystem& sys, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& u);

/// x'Qx + u'Ru.
double stage_cost(const QuadraticStageCost& cost, const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& u);

struct EquilibriumCheck {
  bool pass = false;
  double residual = 0.0;  // ||A x_target - x_target||_inf
};

/// Checks that x_target is a fixed point of the unforced system and lies in
/// the state box.
EquilibriumCheck validate_equilibrium(const TaskSpec& spec, double tol);

/// True iff every component of (x, u) is inside its bound inflated by tol.
bool in_constraints(const BoxConstraints& c, const Eigen::Ref<const Eigen::VectorXd>& x,
                    const Eigen::Ref<const Eigen::VectorXd>& u, double tol = kConstraintTol);

/// Full structural validation of a task: dimensions, box ordering, symmetric
/// positive definite costs, start/target inside the state box, horizon >= 2.
/// The v1 cost model is centered at the origin, so a nonzero equilibrium is
/// rejected here. Throws ConfigError with a description of the first problem.
void validate_task(const TaskSpec& spec);

}  // namespace lmpc
