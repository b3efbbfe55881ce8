#include "rdiff/kinematics.hpp"

#include <algorithm>
#include <fstream>

namespace rdiff {

RobotModel::RobotModel(std::string name, std::vector<JointSpec> joints,
                       std::vector<std::vector<Vec3>> link_points)
    : name_(std::move(name)), joints_(std::move(joints)), link_points_(std::move(link_points)) {
  if (joints_.empty()) throw LoadError("robot '" + name_ + "': dof must be at least 1");
  if (link_points_.size() != joints_.size()) {
    throw LoadError("robot '" + name_ + "': " + std::to_string(link_points_.size()) +
                    " link point sets for " + std::to_string(joints_.size()) + " joints");
  }
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const JointSpec& js = joints_[i];
    for (double v : {js.a, js.d, js.alpha, js.theta_offset, js.limit_lo, js.limit_hi}) {
      if (!std::isfinite(v)) {
        throw LoadError("robot '" + name_ + "': joint " + std::to_string(i) + " has a non-finite value");
      }
    }
    if (!(js.limit_lo < js.limit_hi)) {
      throw LoadError("robot '" + name_ + "': joint " + std::to_string(i) +
                      " has limit_lo >= limit_hi");
    }
    if (link_points_[i].empty()) {
      throw LoadError("robot '" + name_ + "': link " + std::to_string(i) + " has no sample points");
    }
    for (const Vec3& p : link_points_[i]) {
      if (!p.allFinite()) throw LoadError("robot '" + name_ + "': non-finite link point");
      point_link_.push_back(static_cast<int>(i));
      local_points_.push_back(p);
    }
  }
}

JointConfig RobotModel::lower() const {
  JointConfig v(dof());
  for (int i = 0; i < dof(); ++i) v(i) = joints_[i].limit_lo;
  return v;
}

JointConfig RobotModel::upper() const {
  JointConfig v(dof());
  for (int i = 0; i < dof(); ++i) v(i) = joints_[i].limit_hi;
  return v;
}

bool RobotModel::within_limits(const JointConfig& q, double tol) const {
  if (q.size() != dof()) return false;
  for (int i = 0; i < dof(); ++i) {
    if (q(i) < joints_[i].limit_lo - tol || q(i) > joints_[i].limit_hi + tol) return false;
  }
  return true;
}

JointConfig RobotModel::clamp(const JointConfig& q) const {
  check_config(q);
  return q.cwiseMax(lower()).cwiseMin(upper());
}

void RobotModel::check_config(const JointConfig& q) const {
  if (q.size() != dof()) {
    throw DimensionError("config has " + std::to_string(q.size()) + " entries, robot '" + name_ +
                         "' has dof " + std::to_string(dof()));
  }
  if (!q.allFinite()) throw DimensionError("config has non-finite entries");
}

RobotModel robot_from_json(const nlohmann::json& j) {
  try {
    std::string name = j.at("name").get<std::string>();
    const int dof = j.at("dof").get<int>();
    std::vector<JointSpec> joints;
    for (const auto& jj : j.at("joints")) {
      JointSpec js;
      js.a = jj.at("a").get<double>();
      js.d = jj.at("d").get<double>();
      js.alpha = jj.at("alpha").get<double>();
      js.theta_offset = jj.value("theta_offset", 0.0);
      js.limit_lo = jj.at("limit_lo").get<double>();
      js.limit_hi = jj.at("limit_hi").get<double>();
      joints.push_back(js);
    }
    if (static_cast<int>(joints.size()) != dof) {
      throw LoadError("robot '" + name + "': dof " + std::to_string(dof) + " but " +
                      std::to_string(joints.size()) + " joints listed");
    }
    std::vector<std::vector<Vec3>> links;
    for (const auto& lj : j.at("link_points")) {
      std::vector<Vec3> pts;
      for (const auto& pj : lj) {
        if (pj.size() != 3) throw LoadError("robot '" + name + "': link point must have 3 coordinates");
        pts.emplace_back(pj[0].get<double>(), pj[1].get<double>(), pj[2].get<double>());
      }
      links.push_back(std::move(pts));
    }
    return RobotModel(std::move(name), std::move(joints), std::move(links));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("robot description: ") + e.what());
  }
}

nlohmann::json robot_to_json(const RobotModel& model) {
  nlohmann::json j;
  j["name"] = model.name();
  j["dof"] = model.dof();
  j["joints"] = nlohmann::json::array();
  for (const JointSpec& js : model.joints()) {
    j["joints"].push_back({{"a", js.a},
                           {"d", js.d},
                           {"alpha", js.alpha},
                           {"theta_offset", js.theta_offset},
                           {"limit_lo", js.limit_lo},
                           {"limit_hi", js.limit_hi}});
  }
  j["link_points"] = nlohmann::json::array();
  for (const auto& link : model.link_points()) {
    nlohmann::json lj = nlohmann::json::array();
    for (const Vec3& p : link) lj.push_back({p.x(), p.y(), p.z()});
    j["link_points"].push_back(std::move(lj));
  }
  return j;
}

RobotModel load_robot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open robot description " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("robot description " + path.string() + ": " + e.what());
  }
  return robot_from_json(j);
}

void fk_points_with_jacobian(const RobotModel& model, const JointConfig& q, PointSet& points,
                             Eigen::MatrixXd& jacobian) {
  const auto poses = forward_kinematics(model, q);
  points = points_from_poses(model, poses);
  const int n = model.total_points();
  jacobian.setZero(3 * n, model.dof());
  for (int k = 0; k < n; ++k) {
    const Vec3 p = points.row(k).transpose();
    // Joint j rotates about z of frame j, moving every link from j onward.
    for (int j = 0; j <= model.point_link(k); ++j) {
      const Vec3 axis = poses[j].rotation.col(2);
      jacobian.block<3, 1>(3 * k, j) = axis.cross(p - poses[j].translation);
    }
  }
}

Eigen::MatrixXd fk_points_jacobian(const RobotModel& model, const JointConfig& q) {
  PointSet pts;
  Eigen::MatrixXd jac;
  fk_points_with_jacobian(model, q, pts, jac);
  return jac;
}

Eigen::Matrix<double, 6, Eigen::Dynamic> end_effector_jacobian(const RobotModel& model,
                                                               const JointConfig& q) {
  const auto poses = forward_kinematics(model, q);
  const Vec3 tip = poses.back().translation;
  Eigen::Matrix<double, 6, Eigen::Dynamic> jac(6, model.dof());
  for (int j = 0; j < model.dof(); ++j) {
    const Vec3 axis = poses[j].rotation.col(2);
    jac.block<3, 1>(0, j) = axis.cross(tip - poses[j].translation);
    jac.block<3, 1>(3, j) = axis;
  }
  return jac;
}

LinkPose end_effector_pose(const RobotModel& model, const JointConfig& q) {
  return forward_kinematics(model, q).back();
}

double rotation_distance(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Eigen::Quaterniond to_quaternion(const Mat3& r) {
  Eigen::Quaterniond quat(r);
  quat.normalize();
  return quat;
}

}  // namespace rdiff
