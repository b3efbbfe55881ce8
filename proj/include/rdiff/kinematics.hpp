#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "rdiff/error.hpp"

namespace rdiff {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using JointConfig = Eigen::VectorXd;
/// N x D joint trajectory, one frame per row.
using Trajectory = Eigen::MatrixXd;

/// K x 3 workspace points, one row per point.
template <typename Scalar>
using PointSetT = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
using PointSet = PointSetT<double>;

/// Standard (distal) Denavit-Hartenberg row: Rz(theta) Tz(d) Tx(a) Rx(alpha).
struct JointSpec {
  double a = 0.0;
  double d = 0.0;
  double alpha = 0.0;
  double theta_offset = 0.0;
  double limit_lo = -M_PI;
  double limit_hi = M_PI;
};

template <typename Scalar>
struct LinkPoseT {
  Eigen::Matrix<Scalar, 3, 3> rotation = Eigen::Matrix<Scalar, 3, 3>::Identity();
  Eigen::Matrix<Scalar, 3, 1> translation = Eigen::Matrix<Scalar, 3, 1>::Zero();

  Eigen::Matrix<Scalar, 3, 1> apply(const Eigen::Matrix<Scalar, 3, 1>& p) const {
    return rotation * p + translation;
  }
};
using LinkPose = LinkPoseT<double>;

/// Serial chain with sample points attached to every moving link. Link i
/// (0-based) rides on the frame produced by joint i.
class RobotModel {
 public:
  RobotModel() = default;
  RobotModel(std::string name, std::vector<JointSpec> joints,
             std::vector<std::vector<Vec3>> link_points);

  const std::string& name() const { return name_; }
  int dof() const { return static_cast<int>(joints_.size()); }
  const std::vector<JointSpec>& joints() const { return joints_; }
  const std::vector<std::vector<Vec3>>& link_points() const { return link_points_; }

  /// Total sample points across all links.
  int total_points() const { return static_cast<int>(point_link_.size()); }
  /// Link owning flattened point k.
  int point_link(int k) const { return point_link_[k]; }
  const Vec3& local_point(int k) const { return local_points_[k]; }

  JointConfig lower() const;
  JointConfig upper() const;
  bool within_limits(const JointConfig& q, double tol = 0.0) const;
  JointConfig clamp(const JointConfig& q) const;

  void check_config(const JointConfig& q) const;

 private:
  std::string name_;
  std::vector<JointSpec> joints_;
  std::vector<std::vector<Vec3>> link_points_;
  std::vector<int> point_link_;
  std::vector<Vec3> local_points_;
};

RobotModel robot_from_json(const nlohmann::json& j);
nlohmann::json robot_to_json(const RobotModel& model);
RobotModel load_robot(const std::filesystem::path& path);

template <typename Scalar>
LinkPoseT<Scalar> dh_transform(const JointSpec& js, Scalar q) {
  using std::cos;
  using std::sin;
  const Scalar theta = q + Scalar(js.theta_offset);
  const Scalar ct = cos(theta), st = sin(theta);
  const Scalar ca = Scalar(std::cos(js.alpha)), sa = Scalar(std::sin(js.alpha));
  LinkPoseT<Scalar> t;
  t.rotation << ct, -st * ca, st * sa,
                st, ct * ca, -ct * sa,
                Scalar(0), sa, ca;
  t.translation << Scalar(js.a) * ct, Scalar(js.a) * st, Scalar(js.d);
  return t;
}

template <typename Scalar>
LinkPoseT<Scalar> compose(const LinkPoseT<Scalar>& parent, const LinkPoseT<Scalar>& child) {
  LinkPoseT<Scalar> out;
  out.rotation = parent.rotation * child.rotation;
  out.translation = parent.rotation * child.translation + parent.translation;
  return out;
}

/// Link frames base first; size dof()+1, the last entry is the end effector.
template <typename Derived>
std::vector<LinkPoseT<typename Derived::Scalar>> forward_kinematics(
    const RobotModel& model, const Eigen::MatrixBase<Derived>& q) {
  using Scalar = typename Derived::Scalar;
  if (q.size() != model.dof()) {
    throw DimensionError("forward_kinematics: config has " + std::to_string(q.size()) +
                         " entries, model '" + model.name() + "' has dof " +
                         std::to_string(model.dof()));
  }
  std::vector<LinkPoseT<Scalar>> poses;
  poses.reserve(model.dof() + 1);
  poses.emplace_back();
  for (int i = 0; i < model.dof(); ++i) {
    poses.push_back(compose(poses.back(), dh_transform<Scalar>(model.joints()[i], q(i))));
  }
  return poses;
}

template <typename Scalar>
PointSetT<Scalar> points_from_poses(const RobotModel& model,
                                    const std::vector<LinkPoseT<Scalar>>& poses) {
  PointSetT<Scalar> out(model.total_points(), 3);
  for (int k = 0; k < model.total_points(); ++k) {
    const auto& pose = poses[model.point_link(k) + 1];
    out.row(k) = pose.apply(model.local_point(k).template cast<Scalar>()).transpose();
  }
  return out;
}

/// Sample points in workspace, link-major, authored order preserved.
template <typename Derived>
PointSetT<typename Derived::Scalar> fk_points(const RobotModel& model,
                                              const Eigen::MatrixBase<Derived>& q) {
  return points_from_poses(model, forward_kinematics(model, q));
}

/// d(fk_points)/dq with rows ordered (point, coordinate): row 3k+c.
Eigen::MatrixXd fk_points_jacobian(const RobotModel& model, const JointConfig& q);

/// Points and their Jacobian from one FK pass.
void fk_points_with_jacobian(const RobotModel& model, const JointConfig& q, PointSet& points,
                             Eigen::MatrixXd& jacobian);

/// 6 x D geometric Jacobian of the end-effector frame: linear rows first.
Eigen::Matrix<double, 6, Eigen::Dynamic> end_effector_jacobian(const RobotModel& model,
                                                               const JointConfig& q);

LinkPose end_effector_pose(const RobotModel& model, const JointConfig& q);

/// Rotation angle (radians) of a.rotation^T b.rotation.
double rotation_distance(const Mat3& a, const Mat3& b);

Eigen::Quaterniond to_quaternion(const Mat3& r);

}  // namespace rdiff
