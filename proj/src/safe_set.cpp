#include "lmpc/safe_set.hpp"

#include <algorithm>
#include <iostream>
#include <sstream>

#include "lmpc/errors.hpp"

namespace lmpc {

Trajectory make_trajectory(int iteration, std::vector<Eigen::VectorXd> states,
                           std::vector<Eigen::VectorXd> inputs, const QuadraticStageCost& cost) {
  if (states.empty()) throw ConfigError("trajectory: needs at least one state");
  if (states.size() != inputs.size() + 1)
    throw ConfigError("trajectory: states must be one longer than inputs");

  Trajectory traj;
  traj.iteration = iteration;
  traj.states = std::move(states);
  traj.inputs = std::move(inputs);
  traj.cost_to_go.assign(traj.states.size(), 0.0);
  for (std::size_t t = traj.inputs.size(); t-- > 0;) {
    traj.cost_to_go[t] =
        stage_cost(cost, traj.states[t], traj.inputs[t]) + traj.cost_to_go[t + 1];
  }
  return traj;
}

void validate_trajectory(const Trajectory& traj, const TaskSpec& spec, double tol) {
  if (traj.states.size() != traj.inputs.size() + 1 ||
      traj.states.size() != traj.cost_to_go.size())
    throw ConfigError("trajectory: inconsistent lengths");
  if ((traj.states.front() - spec.x_start).cwiseAbs().maxCoeff() > tol)
    throw ConfigError("trajectory: does not start at x_start");
  for (std::size_t t = 0; t < traj.inputs.size(); ++t) {
    if (!in_constraints(spec.constraints, traj.states[t], traj.inputs[t], tol)) {
      std::ostringstream oss;
      oss << "trajectory: constraint violation at step " << t;
      throw ConfigError(oss.str());
    }
  }
  const Eigen::VectorXd zero_u = Eigen::VectorXd::Zero(spec.system.input_dim());
  if (!in_constraints(spec.constraints, traj.states.back(), zero_u, tol))
    throw ConfigError("trajectory: final state violates the state box");
}

SafeSetStore::SafeSetStore(QuadraticStageCost cost, Eigen::VectorXd x_target,
                           std::size_t max_points)
    : cost_(std::move(cost)), x_target_(std::move(x_target)), max_points_(max_points) {
  if (x_target_.size() < 1) throw ConfigError("safe set: empty target state");
  points_.push_back({x_target_, 0.0, -1, 0});
}

SafeSetStore SafeSetStore::restore(QuadraticStageCost cost, Eigen::VectorXd x_target,
                                   std::size_t max_points, std::vector<SafeSetPoint> points,
                                   std::vector<int> successful_iterations) {
  SafeSetStore store(std::move(cost), std::move(x_target), max_points);
  if (points.empty() || points.front().iteration != -1 ||
      (points.front().state - store.x_target_).cwiseAbs().maxCoeff() != 0.0)
    throw ConfigError("safe set: serialized data must start with the equilibrium record");
  store.points_ = std::move(points);
  store.successful_ = std::move(successful_iterations);
  return store;
}

SafeSetStore::AddResult SafeSetStore::add_trajectory(const Trajectory& traj,
                                                     double eps_terminal) {
  AddResult result;
  if (traj.states.empty() || traj.states.size() != traj.inputs.size() + 1 ||
      traj.states.size() != traj.cost_to_go.size()) {
    result.reason = "inconsistent trajectory lengths";
    return result;
  }
  for (const auto& x : traj.states) {
    if (x.size() != x_target_.size()) throw ConfigError("safe set: state dimension mismatch");
  }
  if (std::find(successful_.begin(), successful_.end(), traj.iteration) != successful_.end()) {
    result.reason = "iteration index already stored";
    return result;
  }

  // Suffix identity: cost_to_go[t] = h(x_t, u_t) + cost_to_go[t+1].
  const double scale = std::max(1.0, std::abs(traj.iteration_cost()));
  for (std::size_t t = 0; t < traj.inputs.size(); ++t) {
    const double expected =
        stage_cost(cost_, traj.states[t], traj.inputs[t]) + traj.cost_to_go[t + 1];
    if (std::abs(traj.cost_to_go[t] - expected) > 1e-9 * scale) {
      result.reason = "cost-to-go suffix identity violated";
      return result;
    }
  }
  if (std::abs(traj.cost_to_go.back()) > 1e-9 * scale) {
    result.reason = "cost-to-go must vanish at the final state";
    return result;
  }

  result.terminal_residual = (traj.states.back() - x_target_).norm();
  if (result.terminal_residual > eps_terminal) {
    std::ostringstream oss;
    oss << "terminal residual " << result.terminal_residual << " exceeds eps_terminal "
        << eps_terminal;
    result.reason = oss.str();
    return result;
  }

  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    points_.push_back(
        {traj.states[t], traj.cost_to_go[t], traj.iteration, static_cast<int>(t)});
  }
  successful_.push_back(traj.iteration);

  if (max_points_ > 0 && points_.size() > max_points_) {
    const std::size_t excess = points_.size() - max_points_;
    // Drop the oldest non-equilibrium records (index 0 is the equilibrium).
    points_.erase(points_.begin() + 1, points_.begin() + 1 + static_cast<std::ptrdiff_t>(excess));
    std::cerr << "[lmpc] warning: safe set cap " << max_points_ << " reached; dropped " << excess
              << " oldest points. Monotonicity guarantees may degrade.\n";
  }

  result.accepted = true;
  return result;
}

QpProblem SafeSetStore::hull_lp(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const Eigen::Index n = x_target_.size();
  const Eigen::Index s = static_cast<Eigen::Index>(points_.size());
  if (x.size() != n) throw ConfigError("safe set: query dimension mismatch");

  QpProblem lp;
  lp.H = Eigen::MatrixXd::Zero(s, s);
  lp.f.resize(s);
  lp.A_eq.resize(n + 1, s);
  for (Eigen::Index i = 0; i < s; ++i) {
    lp.A_eq.col(i).head(n) = points_[static_cast<std::size_t>(i)].state;
    lp.A_eq(n, i) = 1.0;
    lp.f[i] = points_[static_cast<std::size_t>(i)].cost_to_go;
  }
  lp.b_eq.resize(n + 1);
  lp.b_eq.head(n) = x;
  lp.b_eq(n) = 1.0;
  lp.A_in = Eigen::MatrixXd::Identity(s, s);
  lp.lo = Eigen::VectorXd::Zero(s);
  lp.hi = Eigen::VectorXd::Constant(s, kInf);
  return lp;
}

std::optional<double> SafeSetStore::terminal_cost(
    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const QpSolution sol = ::lmpc::solve(hull_lp(x), lp_settings_);
  if (sol.status == SolveStatus::Infeasible) return std::nullopt;
  if (sol.status != SolveStatus::Optimal)
    throw std::runtime_error("safe set: terminal-cost LP hit the iteration budget");
  return sol.objective;
}

bool SafeSetStore::contains(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return terminal_cost(x).has_value();
}

SafeSetSnapshot SafeSetStore::snapshot() const {
  SafeSetSnapshot snap;
  const Eigen::Index n = x_target_.size();
  const Eigen::Index s = static_cast<Eigen::Index>(points_.size());
  snap.states.resize(n, s);
  snap.costs.resize(s);
  for (Eigen::Index i = 0; i < s; ++i) {
    snap.states.col(i) = points_[static_cast<std::size_t>(i)].state;
    snap.costs[i] = points_[static_cast<std::size_t>(i)].cost_to_go;
  }
  return snap;
}

Eigen::Index SafeSetStore::find_point(int iteration, int time) const {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (points_[i].iteration == iteration && points_[i].time == time)
      return static_cast<Eigen::Index>(i);
  }
  return -1;
}

}  // namespace lmpc
