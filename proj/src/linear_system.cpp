#include "lmpc/linear_system.hpp"

#include <Eigen/Eigenvalues>
#include <sstream>

#include "lmpc/errors.hpp"

namespace lmpc {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

bool symmetric_positive_definite(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) return false;
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, M.cwiseAbs().maxCoeff()))
    return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  return es.info() == Eigen::Success && es.eigenvalues().minCoeff() > 0.0;
}

}  // namespace

Eigen::VectorXd step(const LinearSystem& sys, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& u) {
  if (x.size() != sys.state_dim() || u.size() != sys.input_dim())
    throw ConfigError("step: dimension mismatch between system and (x, u)");
  return sys.A * x + sys.B * u;
}

double stage_cost(const QuadraticStageCost& cost, const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& u) {
  if (x.size() != cost.Q.rows() || u.size() != cost.R.rows())
    throw ConfigError("stage_cost: dimension mismatch between cost and (x, u)");
  return x.dot(cost.Q * x) + u.dot(cost.R * u);
}

EquilibriumCheck validate_equilibrium(const TaskSpec& spec, double tol) {
  EquilibriumCheck check;
  check.residual = (spec.system.A * spec.x_target - spec.x_target).cwiseAbs().maxCoeff();
  const bool in_box = (spec.x_target.array() >= spec.constraints.x_lo.array() - tol).all() &&
                      (spec.x_target.array() <= spec.constraints.x_hi.array() + tol).all();
  check.pass = check.residual <= tol && in_box;
  return check;
}

bool in_constraints(const BoxConstraints& c, const Eigen::Ref<const Eigen::VectorXd>& x,
                    const Eigen::Ref<const Eigen::VectorXd>& u, double tol) {
  return (x.array() >= c.x_lo.array() - tol).all() && (x.array() <= c.x_hi.array() + tol).all() &&
         (u.array() >= c.u_lo.array() - tol).all() && (u.array() <= c.u_hi.array() + tol).all();
}

void validate_task(const TaskSpec& spec) {
  const Eigen::Index n = spec.system.state_dim();
  const Eigen::Index m = spec.system.input_dim();
  require(n >= 1 && m >= 1, "task: state and input dimensions must be >= 1");
  require(spec.system.A.rows() == n && spec.system.A.cols() == n, "task: A must be n x n");
  require(spec.system.B.rows() == n && spec.system.B.cols() == m, "task: B must be n x m");

  const BoxConstraints& c = spec.constraints;
  require(c.x_lo.size() == n && c.x_hi.size() == n, "task: state bounds must have length n");
  require(c.u_lo.size() == m && c.u_hi.size() == m, "task: input bounds must have length m");
  require((c.x_lo.array() <= c.x_hi.array()).all(), "task: x_lo must not exceed x_hi");
  require((c.u_lo.array() <= c.u_hi.array()).all(), "task: u_lo must not exceed u_hi");

  require(spec.cost.Q.rows() == n, "task: Q must be n x n");
  require(spec.cost.R.rows() == m, "task: R must be m x m");
  require(symmetric_positive_definite(spec.cost.Q), "task: Q must be symmetric positive definite");
  require(symmetric_positive_definite(spec.cost.R), "task: R must be symmetric positive definite");

  require(spec.x_start.size() == n, "task: x_start must have length n");
  require(spec.x_target.size() == n, "task: x_target must have length n");
  require(spec.horizon >= 2, "task: horizon must be >= 2");

  if (spec.x_target.cwiseAbs().maxCoeff() != 0.0) {
    std::ostringstream oss;
    oss << "task: nonzero target equilibrium is not supported; the stage cost is centered at "
           "the origin. Shift the coordinates so that x_target = 0 (got ["
        << spec.x_target.transpose() << "])";
    throw ConfigError(oss.str());
  }

  EquilibriumCheck eq = validate_equilibrium(spec, 1e-9);
  if (!eq.pass) {
    std::ostringstream oss;
    oss << "task: x_target is not an equilibrium of the unforced system (residual " << eq.residual
        << ") or lies outside the state box";
    throw ConfigError(oss.str());
  }

  const bool start_in_box = (spec.x_start.array() >= c.x_lo.array() - kConstraintTol).all() &&
                            (spec.x_start.array() <= c.x_hi.array() + kConstraintTol).all();
  if (!start_in_box) throw ConfigError("task: x_start must lie inside the state box");
}

}  // namespace lmpc
