#include "lmpc/controller.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lmpc/errors.hpp"

namespace lmpc {

LmpcFormulation build_qp(const TaskSpec& spec, const SafeSetSnapshot& snapshot,
                         const Eigen::Ref<const Eigen::VectorXd>& x_t) {
  if (snapshot.size() == 0)
    throw ConfigError(
        "controller: empty safe-set snapshot; seed iteration 0 before building the QP");
  const Eigen::Index n = spec.system.state_dim();
  const Eigen::Index m = spec.system.input_dim();
  const Eigen::Index N = spec.horizon;
  if (N < 2) throw ConfigError("controller: horizon must be >= 2");
  if (snapshot.states.rows() != n) throw ConfigError("controller: snapshot dimension mismatch");
  if (x_t.size() != n) throw ConfigError("controller: x_t dimension mismatch");

  LmpcFormulation form;
  LmpcLayout& lay = form.layout;
  lay.n = n;
  lay.m = m;
  lay.N = N;
  lay.S = snapshot.size();

  const Eigen::Index d = lay.num_vars();
  QpProblem& qp = form.qp;

  qp.H = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index k = 0; k < N; ++k)
    qp.H.block(lay.input_offset(k), lay.input_offset(k), m, m) = 2.0 * spec.cost.R;
  // Stage costs cover x_1..x_{N-1}; the terminal state is priced by the
  // stored costs through the multipliers, not by a quadratic block.
  for (Eigen::Index k = 1; k < N; ++k)
    qp.H.block(lay.state_offset(k), lay.state_offset(k), n, n) = 2.0 * spec.cost.Q;

  qp.f = Eigen::VectorXd::Zero(d);
  qp.f.tail(lay.S) = snapshot.costs;

  form.cost_offset = x_t.dot(spec.cost.Q * x_t);

  qp.A_eq = Eigen::MatrixXd::Zero(lay.num_eq(), d);
  qp.b_eq = Eigen::VectorXd::Zero(lay.num_eq());
  // Dynamics: x_1 - B u_0 = A x_t, then x_{k+1} - A x_k - B u_k = 0.
  qp.A_eq.block(0, lay.state_offset(1), n, n) = Eigen::MatrixXd::Identity(n, n);
  qp.A_eq.block(0, lay.input_offset(0), n, m) = -spec.system.B;
  qp.b_eq.head(n) = spec.system.A * x_t;
  for (Eigen::Index k = 1; k < N; ++k) {
    const Eigen::Index row = n * k;
    qp.A_eq.block(row, lay.state_offset(k + 1), n, n) = Eigen::MatrixXd::Identity(n, n);
    qp.A_eq.block(row, lay.state_offset(k), n, n) = -spec.system.A;
    qp.A_eq.block(row, lay.input_offset(k), n, m) = -spec.system.B;
  }
  // Terminal coupling x_N = D lambda and the simplex row.
  const Eigen::Index coupling_row = n * N;
  qp.A_eq.block(coupling_row, lay.state_offset(N), n, n) = Eigen::MatrixXd::Identity(n, n);
  qp.A_eq.block(coupling_row, lay.lambda_offset(), n, lay.S) = -snapshot.states;
  qp.A_eq.row(n * N + n).segment(lay.lambda_offset(), lay.S).setOnes();
  qp.b_eq(n * N + n) = 1.0;

  qp.A_in = Eigen::MatrixXd::Zero(lay.num_in(), d);
  qp.lo.resize(lay.num_in());
  qp.hi.resize(lay.num_in());
  Eigen::Index row = 0;
  for (Eigen::Index k = 1; k <= N; ++k) {
    qp.A_in.block(row, lay.state_offset(k), n, n) = Eigen::MatrixXd::Identity(n, n);
    qp.lo.segment(row, n) = spec.constraints.x_lo;
    qp.hi.segment(row, n) = spec.constraints.x_hi;
    row += n;
  }
  for (Eigen::Index k = 0; k < N; ++k) {
    qp.A_in.block(row, lay.input_offset(k), m, m) = Eigen::MatrixXd::Identity(m, m);
    qp.lo.segment(row, m) = spec.constraints.u_lo;
    qp.hi.segment(row, m) = spec.constraints.u_hi;
    row += m;
  }
  qp.A_in.block(row, lay.lambda_offset(), lay.S, lay.S) =
      Eigen::MatrixXd::Identity(lay.S, lay.S);
  qp.lo.segment(row, lay.S).setZero();
  qp.hi.segment(row, lay.S).setConstant(kInf);

  return form;
}

LmpcController::LmpcController(TaskSpec spec, SolverSettings settings)
    : spec_(std::move(spec)), settings_(settings), solver_(settings) {
  validate_task(spec_);
}

void LmpcController::set_safe_set(const SafeSetSnapshot& snapshot) {
  form_ = build_qp(spec_, snapshot, spec_.x_start);
  solver_ = QpSolver(settings_);
  solver_.setup(form_.qp);
  have_snapshot_ = true;
  have_prev_ = false;

  // Seed with the previous snapshot's first-step solution; fresh multipliers
  // (and their bound rows) start at zero, which is feasible for them.
  if (have_first_ && first_lambda_size_ <= form_.layout.S) {
    const Eigen::Index head = form_.layout.lambda_offset();
    Eigen::VectorXd z0 = Eigen::VectorXd::Zero(form_.qp.num_vars());
    z0.head(head) = first_z_.head(head);
    z0.segment(head, first_lambda_size_) = first_z_.tail(first_lambda_size_);
    const Eigen::Index eq_rows = form_.layout.num_eq();
    const Eigen::Index fixed_in = form_.layout.n * form_.layout.N + form_.layout.m * form_.layout.N;
    Eigen::VectorXd y0 = Eigen::VectorXd::Zero(eq_rows + form_.layout.num_in());
    y0.head(eq_rows + fixed_in) = first_y_.head(eq_rows + fixed_in);
    y0.segment(eq_rows + fixed_in, first_lambda_size_) =
        first_y_.tail(first_lambda_size_);
    solver_.warm_start(z0, y0);
  }
  have_first_ = false;
}

ControlStep LmpcController::solve_step(const Eigen::Ref<const Eigen::VectorXd>& x_t) {
  if (!have_snapshot_) throw ConfigError("controller: set_safe_set() before solve_step()");
  const LmpcLayout& lay = form_.layout;
  if (x_t.size() != lay.n) throw ConfigError("controller: x_t dimension mismatch");

  form_.qp.b_eq.head(lay.n) = spec_.system.A * x_t;
  form_.cost_offset = x_t.dot(spec_.cost.Q * x_t);
  solver_.update_equality_rhs(form_.qp.b_eq);

  if (have_prev_) {
    // Shift the previous plan one step: drop u_0 and x_1, repeat the last
    // entries, keep the multipliers.
    Eigen::VectorXd z0 = prev_z_;
    const Eigen::Index m = lay.m, n = lay.n, N = lay.N;
    if (N > 1) {
      z0.segment(0, m * (N - 1)) = prev_z_.segment(m, m * (N - 1));
      z0.segment(lay.state_offset(1), n * (N - 1)) =
          prev_z_.segment(lay.state_offset(2), n * (N - 1));
    }
    solver_.warm_start(z0, prev_y_);
  }

  QpSolution sol = solver_.solve();
  if (sol.status != SolveStatus::Optimal) {
    // A controller problem fed from the closed loop must stay feasible; dump
    // the QP for inspection before failing.
    namespace fs = std::filesystem;
    std::string path;
    try {
      nlohmann::json dump;
      auto mat = [](const Eigen::MatrixXd& M) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < M.rows(); ++r) {
          nlohmann::json row = nlohmann::json::array();
          for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
          rows.push_back(row);
        }
        return nlohmann::json{{"rows", M.rows()}, {"cols", M.cols()}, {"data", rows}};
      };
      auto vec = [](const Eigen::VectorXd& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
        return arr;
      };
      dump["H"] = mat(form_.qp.H);
      dump["f"] = vec(form_.qp.f);
      dump["A_eq"] = mat(form_.qp.A_eq);
      dump["b_eq"] = vec(form_.qp.b_eq);
      dump["A_in"] = mat(form_.qp.A_in);
      dump["lo"] = vec(form_.qp.lo);
      dump["hi"] = vec(form_.qp.hi);
      dump["x_t"] = vec(x_t);
      dump["status"] = to_string(sol.status);
      fs::create_directories(dump_dir_);
      path = (fs::path(dump_dir_) / "lmpc_qp_dump.json").string();
      std::ofstream out(path);
      out << dump.dump(2) << "\n";
    } catch (...) {
      path = "(dump failed)";
    }
    std::ostringstream oss;
    oss << "controller: QP returned status '" << to_string(sol.status) << "' at x_t = ["
        << x_t.transpose() << "]; problem dumped to " << path;
    throw InfeasibleError(oss.str());
  }

  ControlStep out;
  out.input = sol.z.segment(lay.input_offset(0), lay.m);
  out.predicted_states.resize(lay.n, lay.N);
  for (Eigen::Index k = 1; k <= lay.N; ++k)
    out.predicted_states.col(k - 1) = sol.z.segment(lay.state_offset(k), lay.n);
  out.lambda = sol.z.tail(lay.S);
  out.optimal_cost = sol.objective + form_.cost_offset;
  out.solve_time = sol.solve_time;
  out.qp_iterations = sol.iterations;
  out.polished = sol.polished;

  if (out.lambda.minCoeff() < -1e-9)
    throw InvariantViolation("controller: multiplier fell below zero beyond tolerance");
  if (std::abs(out.lambda.sum() - 1.0) > 1e-8)
    throw InvariantViolation("controller: multipliers do not sum to one within tolerance");
  // Terminal state must match the stored-point combination (the coupling
  // block of A_eq holds -D, so x_N - D lambda = x_N + block * lambda).
  const auto coupling = form_.qp.A_eq.block(lay.n * lay.N, lay.lambda_offset(), lay.n, lay.S);
  const Eigen::VectorXd mismatch =
      out.predicted_states.col(lay.N - 1) + coupling * out.lambda;
  if (mismatch.cwiseAbs().maxCoeff() > 1e-7)
    throw InvariantViolation("controller: terminal state is not the stored-point combination");

  prev_z_ = sol.z;
  prev_y_ = sol.dual;
  if (!have_prev_) {
    first_z_ = sol.z;
    first_y_ = sol.dual;
    first_lambda_size_ = lay.S;
    have_first_ = true;
  }
  have_prev_ = true;
  return out;
}

ControlStep solve_step(const TaskSpec& spec, const SafeSetSnapshot& snapshot,
                       const Eigen::Ref<const Eigen::VectorXd>& x_t,
                       const SolverSettings& settings) {
  LmpcController controller(spec, settings);
  controller.set_safe_set(snapshot);
  return controller.solve_step(x_t);
}

}  // namespace lmpc
