#pragma once

#include <Eigen/Dense>

#include "json.hpp"
#include "lmpc/safe_set.hpp"

namespace lmpc {

/// Matrix as {"rows": r, "cols": c, "data": [[row 0...], ...]}; doubles keep
/// their exact value through dump/parse (shortest round-trip formatting).
nlohmann::json matrix_to_json(const Eigen::MatrixXd& M);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

nlohmann::json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);

nlohmann::json safe_set_to_json(const SafeSetStore& store);
SafeSetStore safe_set_from_json(const nlohmann::json& j);

}  // namespace lmpc
