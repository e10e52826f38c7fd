#pragma once

#include <Eigen/Dense>

#include "lmpc/linear_system.hpp"

namespace lmpc::test {

/// Double-integrator benchmark task: identity stage cost, +-4 state box,
/// +-1 input box, start at [-3.95, -0.05].
inline TaskSpec double_integrator_task(int horizon = 4,
                                       const Eigen::Vector2d& x_start = {-3.95, -0.05}) {
  TaskSpec spec;
  spec.system.A = Eigen::MatrixXd{{1.0, 1.0}, {0.0, 1.0}};
  spec.system.B = Eigen::MatrixXd{{0.0}, {1.0}};
  spec.constraints.x_lo = Eigen::Vector2d{-4.0, -4.0};
  spec.constraints.x_hi = Eigen::Vector2d{4.0, 4.0};
  spec.constraints.u_lo = Eigen::VectorXd::Constant(1, -1.0);
  spec.constraints.u_hi = Eigen::VectorXd::Constant(1, 1.0);
  spec.cost.Q = Eigen::MatrixXd::Identity(2, 2);
  spec.cost.R = Eigen::MatrixXd::Identity(1, 1);
  spec.x_start = x_start;
  spec.x_target = Eigen::Vector2d::Zero();
  spec.horizon = horizon;
  return spec;
}

}  // namespace lmpc::test
