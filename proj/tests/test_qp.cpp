#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <random>

#include "doctest.h"
#include "lmpc/errors.hpp"
#include "lmpc/qp.hpp"

using namespace lmpc;

namespace {

QpProblem empty_problem(int d) {
  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(d, d);
  qp.f = Eigen::VectorXd::Zero(d);
  qp.A_eq.resize(0, d);
  qp.b_eq.resize(0);
  qp.A_in.resize(0, d);
  qp.lo.resize(0);
  qp.hi.resize(0);
  return qp;
}

// Independent oracle for equality-constrained QPs: solve the KKT linear
// system [[H, A'], [A, 0]] directly.
Eigen::VectorXd kkt_oracle(const Eigen::MatrixXd& H, const Eigen::VectorXd& f,
                           const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const Eigen::Index d = H.rows(), e = A.rows();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(d + e, d + e);
  K.topLeftCorner(d, d) = H;
  K.topRightCorner(d, e) = A.transpose();
  K.bottomLeftCorner(e, d) = A;
  Eigen::VectorXd rhs(d + e);
  rhs << -f, b;
  return K.fullPivLu().solve(rhs).head(d);
}

}  // namespace

TEST_CASE("bound-constrained scalar problem") {
  QpProblem qp = empty_problem(1);
  qp.H(0, 0) = 1.0;
  qp.A_in = Eigen::MatrixXd::Constant(1, 1, 1.0);
  qp.lo = Eigen::VectorXd::Constant(1, 1.0);
  qp.hi = Eigen::VectorXd::Constant(1, kInf);

  const QpSolution sol = solve(qp);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.z(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sol.objective == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(sol.primal_residual <= 1e-9);
  CHECK(sol.dual_residual <= 1e-9);
}

TEST_CASE("equality-constrained least norm") {
  QpProblem qp = empty_problem(2);
  qp.H = Eigen::MatrixXd::Identity(2, 2);  // 1/2 ||z||^2
  qp.A_eq = Eigen::MatrixXd::Constant(1, 2, 1.0);
  qp.b_eq = Eigen::VectorXd::Constant(1, 1.0);

  const QpSolution sol = solve(qp);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.z(0) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(sol.z(1) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(sol.objective == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("contradictory equalities are reported infeasible") {
  QpProblem qp = empty_problem(1);
  qp.H(0, 0) = 1.0;
  qp.A_eq = Eigen::MatrixXd::Ones(2, 1);
  qp.b_eq = Eigen::Vector2d{2.0, 3.0};

  const QpSolution sol = solve(qp);
  CHECK(sol.status == SolveStatus::Infeasible);
}

TEST_CASE("simplex-constrained LP picks the cheap vertex") {
  Eigen::VectorXd c(2);
  c << 1.0, 2.0;
  Eigen::MatrixXd A_eq = Eigen::MatrixXd::Ones(1, 2);
  Eigen::VectorXd b_eq = Eigen::VectorXd::Ones(1);
  Eigen::MatrixXd A_in = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(2, kInf);

  const QpSolution sol = solve_lp(c, A_eq, b_eq, A_in, lo, hi);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.z(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(sol.z(1) == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("convex-hull membership LP detects an exterior point") {
  // Stored points (0,0), (1,0), (0,1); query (2,2) sits outside the hull.
  Eigen::MatrixXd D(2, 3);
  D << 0.0, 1.0, 0.0,  //
      0.0, 0.0, 1.0;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd A_eq(3, 3);
  A_eq.topRows(2) = D;
  A_eq.bottomRows(1) = Eigen::MatrixXd::Ones(1, 3);
  Eigen::VectorXd b_eq(3);
  b_eq << 2.0, 2.0, 1.0;
  Eigen::MatrixXd A_in = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(3, kInf);

  const QpSolution sol = solve_lp(c, A_eq, b_eq, A_in, lo, hi);
  CHECK(sol.status == SolveStatus::Infeasible);
}

TEST_CASE("segment query is supported on the two endpoints") {
  // Three stored points; the query is the midpoint of points 1 and 2.
  Eigen::MatrixXd D(2, 3);
  D << 0.0, 2.0, 1.0,  //
      0.0, 0.0, 3.0;
  Eigen::VectorXd cost(3);
  cost << 4.0, 10.0, 100.0;
  Eigen::MatrixXd A_eq(3, 3);
  A_eq.topRows(2) = D;
  A_eq.bottomRows(1) = Eigen::MatrixXd::Ones(1, 3);
  Eigen::VectorXd b_eq(3);
  b_eq << 1.0, 0.0, 1.0;  // midpoint of (0,0) and (2,0)
  Eigen::MatrixXd A_in = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(3, kInf);

  const QpSolution sol = solve_lp(cost, A_eq, b_eq, A_in, lo, hi);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.z(0) == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(sol.z(1) == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(sol.z(2) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(sol.objective == doctest::Approx(7.0).epsilon(1e-7));
}

TEST_CASE("random equality QPs match the KKT oracle") {
  std::mt19937 rng(29);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    const int d = 3 + static_cast<int>(rng() % 20);
    const int e = 1 + static_cast<int>(rng() % static_cast<unsigned>(d - 1));
    Eigen::MatrixXd G(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) G(i, j) = gauss(rng);
    QpProblem qp = empty_problem(d);
    qp.H = G * G.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
    for (int i = 0; i < d; ++i) qp.f(i) = gauss(rng);
    qp.A_eq.resize(e, d);
    for (int i = 0; i < e; ++i)
      for (int j = 0; j < d; ++j) qp.A_eq(i, j) = gauss(rng);
    Eigen::VectorXd z_feas(d);
    for (int i = 0; i < d; ++i) z_feas(i) = gauss(rng);
    qp.b_eq = qp.A_eq * z_feas;

    const QpSolution sol = solve(qp);
    REQUIRE(sol.status == SolveStatus::Optimal);
    const Eigen::VectorXd expected = kkt_oracle(qp.H, qp.f, qp.A_eq, qp.b_eq);
    CHECK((sol.z - expected).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("redundant constraints do not move the optimum") {
  std::mt19937 rng(31);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 4;
    Eigen::MatrixXd G(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) G(i, j) = gauss(rng);
    QpProblem qp = empty_problem(d);
    qp.H = G * G.transpose() + Eigen::MatrixXd::Identity(d, d);
    for (int i = 0; i < d; ++i) qp.f(i) = gauss(rng);
    qp.A_in = Eigen::MatrixXd::Identity(d, d);
    qp.lo = Eigen::VectorXd::Constant(d, -2.0);
    qp.hi = Eigen::VectorXd::Constant(d, 2.0);

    const QpSolution base = solve(qp);
    REQUIRE(base.status == SolveStatus::Optimal);

    // Append a loosened duplicate of the first row: always redundant.
    QpProblem wide = qp;
    wide.A_in.conservativeResize(d + 1, d);
    wide.A_in.row(d) = qp.A_in.row(0);
    wide.lo.conservativeResize(d + 1);
    wide.hi.conservativeResize(d + 1);
    wide.lo(d) = -4.0;
    wide.hi(d) = 4.0;

    const QpSolution with_redundant = solve(wide);
    REQUIRE(with_redundant.status == SolveStatus::Optimal);
    CHECK(std::abs(with_redundant.objective - base.objective) < 1e-7);
  }
}

TEST_CASE("identical inputs give identical outputs") {
  QpProblem qp = empty_problem(3);
  qp.H = Eigen::MatrixXd::Identity(3, 3);
  qp.f = Eigen::Vector3d{0.3, -1.7, 0.9};
  qp.A_eq = Eigen::MatrixXd::Ones(1, 3);
  qp.b_eq = Eigen::VectorXd::Ones(1);
  qp.A_in = Eigen::MatrixXd::Identity(3, 3);
  qp.lo = Eigen::Vector3d{-1.0, -1.0, -1.0};
  qp.hi = Eigen::Vector3d{1.0, 1.0, 1.0};

  const QpSolution a = solve(qp);
  const QpSolution b = solve(qp);
  REQUIRE(a.status == SolveStatus::Optimal);
  REQUIRE(b.status == SolveStatus::Optimal);
  CHECK(a.z == b.z);
  CHECK(a.objective == b.objective);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("warm started re-solve after an rhs update stays certified") {
  QpProblem qp = empty_problem(2);
  qp.H = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  qp.A_eq = Eigen::MatrixXd::Ones(1, 2);
  qp.b_eq = Eigen::VectorXd::Constant(1, 1.0);
  qp.A_in = Eigen::MatrixXd::Identity(2, 2);
  qp.lo = Eigen::Vector2d{-5.0, -5.0};
  qp.hi = Eigen::Vector2d{5.0, 5.0};

  QpSolver solver;
  solver.setup(qp);
  const QpSolution first = solver.solve();
  REQUIRE(first.status == SolveStatus::Optimal);
  CHECK(first.z(0) == doctest::Approx(0.5).epsilon(1e-9));

  solver.update_equality_rhs(Eigen::VectorXd::Constant(1, 3.0));
  const QpSolution second = solver.solve();
  REQUIRE(second.status == SolveStatus::Optimal);
  CHECK(second.z(0) == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(second.primal_residual <= 1e-9);
}

TEST_CASE("invalid problems are rejected") {
  SUBCASE("asymmetric H") {
    QpProblem qp = empty_problem(2);
    qp.H << 1.0, 0.5, 0.0, 1.0;
    CHECK_THROWS_AS(solve(qp), ConfigError);
  }
  SUBCASE("indefinite H") {
    QpProblem qp = empty_problem(2);
    qp.H << 1.0, 0.0, 0.0, -1.0;
    CHECK_THROWS_AS(solve(qp), ConfigError);
  }
  SUBCASE("crossed bounds") {
    QpProblem qp = empty_problem(1);
    qp.H(0, 0) = 1.0;
    qp.A_in = Eigen::MatrixXd::Ones(1, 1);
    qp.lo = Eigen::VectorXd::Constant(1, 2.0);
    qp.hi = Eigen::VectorXd::Constant(1, 1.0);
    CHECK_THROWS_AS(solve(qp), ConfigError);
  }
}
