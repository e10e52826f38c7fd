#include "lmpc/json_io.hpp"

#include "lmpc/errors.hpp"

namespace lmpc {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& M) {
  json data = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    data.push_back(std::move(row));
  }
  return json{{"rows", M.rows()}, {"cols", M.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw ConfigError("matrix: expected an object with rows, cols and data");
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows)
    throw ConfigError("matrix: data must hold exactly 'rows' row arrays");
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = data.at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ConfigError("matrix: row length does not match 'cols'");
    for (Eigen::Index c = 0; c < cols; ++c)
      M(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return M;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd vector_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("vector: expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

json trajectory_to_json(const Trajectory& traj) {
  json states = json::array();
  for (const auto& x : traj.states) states.push_back(vector_to_json(x));
  json inputs = json::array();
  for (const auto& u : traj.inputs) inputs.push_back(vector_to_json(u));
  return json{{"version", 1},
              {"kind", "trajectory"},
              {"iteration", traj.iteration},
              {"states", std::move(states)},
              {"inputs", std::move(inputs)},
              {"cost_to_go", traj.cost_to_go}};
}

Trajectory trajectory_from_json(const json& j) {
  if (!j.is_object() || j.value("kind", "") != "trajectory")
    throw ConfigError("trajectory: expected a trajectory document");
  if (j.value("version", 0) != 1) throw ConfigError("trajectory: unsupported version");
  Trajectory traj;
  traj.iteration = j.at("iteration").get<int>();
  for (const json& x : j.at("states")) traj.states.push_back(vector_from_json(x));
  for (const json& u : j.at("inputs")) traj.inputs.push_back(vector_from_json(u));
  traj.cost_to_go = j.at("cost_to_go").get<std::vector<double>>();
  if (traj.states.size() != traj.inputs.size() + 1 ||
      traj.states.size() != traj.cost_to_go.size())
    throw ConfigError("trajectory: inconsistent lengths in document");
  return traj;
}

json safe_set_to_json(const SafeSetStore& store) {
  json points = json::array();
  for (const SafeSetPoint& p : store.points()) {
    points.push_back(json{{"state", vector_to_json(p.state)},
                          {"cost_to_go", p.cost_to_go},
                          {"iteration", p.iteration},
                          {"time", p.time}});
  }
  return json{{"version", 1},
              {"kind", "safe_set"},
              {"x_target", vector_to_json(store.target())},
              {"Q", matrix_to_json(store.cost().Q)},
              {"R", matrix_to_json(store.cost().R)},
              {"max_points", store.max_points()},
              {"successful_iterations", store.successful_iterations()},
              {"points", std::move(points)}};
}

SafeSetStore safe_set_from_json(const json& j) {
  if (!j.is_object() || j.value("kind", "") != "safe_set")
    throw ConfigError("safe set: expected a safe_set document");
  if (j.value("version", 0) != 1) throw ConfigError("safe set: unsupported version");
  QuadraticStageCost cost{matrix_from_json(j.at("Q")), matrix_from_json(j.at("R"))};
  Eigen::VectorXd x_target = vector_from_json(j.at("x_target"));
  std::vector<SafeSetPoint> points;
  for (const json& p : j.at("points")) {
    points.push_back({vector_from_json(p.at("state")), p.at("cost_to_go").get<double>(),
                      p.at("iteration").get<int>(), p.at("time").get<int>()});
  }
  return SafeSetStore::restore(std::move(cost), std::move(x_target),
                               j.at("max_points").get<std::size_t>(), std::move(points),
                               j.at("successful_iterations").get<std::vector<int>>());
}

}  // namespace lmpc
