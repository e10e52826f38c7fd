#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "lmpc/controller.hpp"
#include "lmpc/errors.hpp"
#include "lmpc/safe_set.hpp"

using namespace lmpc;

namespace {

SafeSetSnapshot equilibrium_only() {
  SafeSetSnapshot snap;
  snap.states = Eigen::MatrixXd::Zero(2, 1);
  snap.costs = Eigen::VectorXd::Zero(1);
  return snap;
}

// Safe set from a hand-built feasible braking trajectory plus the
// equilibrium record.
SafeSetStore braking_store() {
  const TaskSpec spec = test::double_integrator_task();
  SafeSetStore store(spec.cost, spec.x_target);
  std::vector<Eigen::VectorXd> states{Eigen::Vector2d{-3.0, 1.0}, Eigen::Vector2d{-2.0, 1.0},
                                      Eigen::Vector2d{-1.0, 1.0}, Eigen::Vector2d{0.0, 0.0}};
  std::vector<Eigen::VectorXd> inputs{Eigen::VectorXd::Constant(1, 0.0),
                                      Eigen::VectorXd::Constant(1, 0.0),
                                      Eigen::VectorXd::Constant(1, -1.0)};
  const auto added = store.add_trajectory(make_trajectory(0, states, inputs, spec.cost));
  REQUIRE(added.accepted);
  return store;
}

// Independent equality-QP solve for the grid cross-check: N-step cost to
// reach a prescribed terminal state, no inequality constraints active.
double n_step_cost_to(const TaskSpec& spec, const Eigen::Vector2d& x_t,
                      const Eigen::Vector2d& x_terminal) {
  const Eigen::Index n = 2, m = 1, N = spec.horizon;
  const Eigen::Index d = m * N + n * N;
  auto u_off = [&](Eigen::Index k) { return m * k; };
  auto x_off = [&](Eigen::Index k) { return m * N + n * (k - 1); };

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index k = 0; k < N; ++k) H.block(u_off(k), u_off(k), m, m) = 2.0 * spec.cost.R;
  // Stage costs price x_1..x_{N-1} only; the terminal state is paid for by
  // the caller through the stored costs.
  for (Eigen::Index k = 1; k < N; ++k) H.block(x_off(k), x_off(k), n, n) = 2.0 * spec.cost.Q;

  const Eigen::Index rows = n * N + n;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(rows);
  A.block(0, x_off(1), n, n) = Eigen::MatrixXd::Identity(n, n);
  A.block(0, u_off(0), n, m) = -spec.system.B;
  b.head(n) = spec.system.A * x_t;
  for (Eigen::Index k = 1; k < N; ++k) {
    A.block(n * k, x_off(k + 1), n, n) = Eigen::MatrixXd::Identity(n, n);
    A.block(n * k, x_off(k), n, n) = -spec.system.A;
    A.block(n * k, u_off(k), n, m) = -spec.system.B;
  }
  A.block(n * N, x_off(N), n, n) = Eigen::MatrixXd::Identity(n, n);
  b.tail(n) = x_terminal;

  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(d + rows, d + rows);
  K.topLeftCorner(d, d) = H;
  K.topRightCorner(d, rows) = A.transpose();
  K.bottomLeftCorner(rows, d) = A;
  Eigen::VectorXd rhs(d + rows);
  rhs << Eigen::VectorXd::Zero(d), b;
  const Eigen::VectorXd w = K.fullPivLu().solve(rhs);
  const Eigen::VectorXd z = w.head(d);
  return 0.5 * z.dot(H * z) + x_t.dot(spec.cost.Q * x_t);
}

}  // namespace

TEST_CASE("layout arithmetic") {
  const TaskSpec spec = test::double_integrator_task(4);
  const SafeSetSnapshot snap = braking_store().snapshot();
  const LmpcFormulation form = build_qp(spec, snap, spec.x_start);
  CHECK(form.qp.num_vars() == 4 * 1 + 4 * 2 + snap.size());
  CHECK(form.qp.num_eq() == 2 * 4 + 2 + 1);
  CHECK(form.qp.num_in() == 2 * 4 + 1 * 4 + snap.size());
}

TEST_CASE("resting at the target is free") {
  TaskSpec spec = test::double_integrator_task(4, Eigen::Vector2d::Zero());
  const ControlStep step = solve_step(spec, equilibrium_only(), Eigen::Vector2d::Zero());
  CHECK(step.input.cwiseAbs().maxCoeff() < 1e-8);
  CHECK(step.optimal_cost < 1e-9);
  CHECK(step.lambda(0) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("empty snapshot is rejected with guidance") {
  const TaskSpec spec = test::double_integrator_task();
  SafeSetSnapshot empty;
  empty.states.resize(2, 0);
  empty.costs.resize(0);
  CHECK_THROWS_WITH_AS(build_qp(spec, empty, spec.x_start),
                       doctest::Contains("seed iteration 0"), ConfigError);
}

TEST_CASE("optimal cost never exceeds the stored cost-to-go (tail is feasible)") {
  const TaskSpec spec = test::double_integrator_task(2);
  const SafeSetStore store = braking_store();
  const SafeSetSnapshot snap = store.snapshot();

  for (const SafeSetPoint& point : store.points()) {
    if (point.iteration < 0) continue;
    const ControlStep step = solve_step(spec, snap, point.state);
    CHECK(step.optimal_cost <= point.cost_to_go + 1e-6);
  }
}

TEST_CASE("controller value matches a grid-and-KKT brute force on a tiny store") {
  // Keep everything well inside the boxes so the equality-only inner solve is
  // exact, then enumerate the terminal combination on a fine simplex grid.
  TaskSpec spec = test::double_integrator_task(2);
  SafeSetSnapshot snap;
  snap.states.resize(2, 3);
  snap.states.col(0) = Eigen::Vector2d{0.0, 0.0};
  snap.states.col(1) = Eigen::Vector2d{0.4, 0.0};
  snap.states.col(2) = Eigen::Vector2d{0.1, 0.3};
  snap.costs.resize(3);
  snap.costs << 0.0, 2.0, 1.5;

  const Eigen::Vector2d x_t{0.3, 0.1};
  const ControlStep step = solve_step(spec, snap, x_t);

  double best = kInf;
  const int grid = 60;
  for (int i = 0; i <= grid; ++i) {
    for (int j = 0; j + i <= grid; ++j) {
      const double l0 = static_cast<double>(i) / grid;
      const double l1 = static_cast<double>(j) / grid;
      const double l2 = 1.0 - l0 - l1;
      const Eigen::Vector2d target = l0 * snap.states.col(0) + l1 * snap.states.col(1) +
                                     l2 * snap.states.col(2);
      const double terminal = l0 * snap.costs(0) + l1 * snap.costs(1) + l2 * snap.costs(2);
      best = std::min(best, n_step_cost_to(spec, x_t, target) + terminal);
    }
  }
  CHECK(step.optimal_cost <= best + 1e-9);
  CHECK(step.optimal_cost >= best - 5e-3);  // grid resolution slack
}

TEST_CASE("cost decreases along the closed loop by at least the stage cost") {
  const TaskSpec spec = test::double_integrator_task(3, Eigen::Vector2d{-3.0, 1.0});
  LmpcController controller(spec);
  controller.set_safe_set(braking_store().snapshot());

  Eigen::VectorXd x = spec.x_start;
  ControlStep prev = controller.solve_step(x);
  for (int t = 0; t < 6; ++t) {
    const double h = stage_cost(spec.cost, x, prev.input);
    x = step(spec.system, x, prev.input);
    const ControlStep next = controller.solve_step(x);
    CHECK(next.optimal_cost - prev.optimal_cost + h <= 1e-6);
    prev = next;
  }
}

TEST_CASE("one-step propagation stays inside the safe set") {
  // Successor of each stored point (next point of its trajectory, the target
  // for the last one) combined with the optimal multipliers stays in the hull.
  const TaskSpec spec = test::double_integrator_task(2, Eigen::Vector2d{-3.0, 1.0});
  const SafeSetStore store = braking_store();
  const SafeSetSnapshot snap = store.snapshot();
  const ControlStep step = solve_step(spec, snap, spec.x_start);

  Eigen::VectorXd successor_mix = Eigen::VectorXd::Zero(2);
  for (Eigen::Index i = 0; i < snap.size(); ++i) {
    const SafeSetPoint& p = store.points()[static_cast<std::size_t>(i)];
    Eigen::Index succ = store.find_point(p.iteration, p.time + 1);
    if (succ < 0) succ = 0;  // trajectory end and equilibrium roll onto the target
    successor_mix += step.lambda(i) * snap.states.col(succ);
  }
  CHECK(store.contains(successor_mix));
}

TEST_CASE("enlarging the snapshot never increases the optimal cost") {
  const TaskSpec spec = test::double_integrator_task(2, Eigen::Vector2d{-3.0, 1.0});
  SafeSetStore store = braking_store();
  const ControlStep small = solve_step(spec, store.snapshot(), spec.x_start);

  std::vector<Eigen::VectorXd> states{Eigen::Vector2d{-1.0, 0.5}, Eigen::Vector2d{-0.5, 0.5},
                                      Eigen::Vector2d{0.0, 0.0}};
  std::vector<Eigen::VectorXd> inputs{Eigen::VectorXd::Constant(1, 0.0),
                                      Eigen::VectorXd::Constant(1, -0.5)};
  REQUIRE(store.add_trajectory(make_trajectory(1, states, inputs, spec.cost)).accepted);
  const ControlStep large = solve_step(spec, store.snapshot(), spec.x_start);

  CHECK(large.optimal_cost <= small.optimal_cost + 1e-7);
}

TEST_CASE("unreachable terminal set raises and dumps the problem") {
  const TaskSpec spec = test::double_integrator_task(2);
  const auto dir = std::filesystem::temp_directory_path() / "lmpc_dump_test";
  std::filesystem::remove_all(dir);

  LmpcController controller(spec);
  controller.set_dump_directory(dir.string());
  controller.set_safe_set(equilibrium_only());
  // Moving fast toward the wall: position exits the box at the next step no
  // matter the input, so the QP has no feasible point.
  CHECK_THROWS_AS(controller.solve_step(Eigen::Vector2d{3.9, 3.9}), InfeasibleError);
  CHECK(std::filesystem::exists(dir / "lmpc_qp_dump.json"));
  std::filesystem::remove_all(dir);
}
