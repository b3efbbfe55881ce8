#pragma once

#include <random>
#include <string>

#include "rdiff/kinematics.hpp"

namespace rdiff::test {

inline std::string data_path(const std::string& rel) { return std::string(RDIFF_DATA_DIR) + "/" + rel; }

inline const RobotModel& panda() {
  static const RobotModel model = load_robot(data_path("robots/panda_like.json"));
  return model;
}

inline const RobotModel& planar() {
  static const RobotModel model = load_robot(data_path("robots/planar2.json"));
  return model;
}

inline JointConfig random_config(const RobotModel& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  JointConfig q(model.dof());
  for (int i = 0; i < model.dof(); ++i) {
    q(i) = model.joints()[i].limit_lo + (model.joints()[i].limit_hi - model.joints()[i].limit_lo) * unit(rng);
  }
  return q;
}

/// Independent FK oracle: explicit 4x4 products Rz(theta) Tz(d) Tx(a) Rx(alpha).
inline std::vector<Eigen::Matrix4d> oracle_frames(const RobotModel& model, const JointConfig& q) {
  auto rot_z = [](double t) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 0) = std::cos(t); m(0, 1) = -std::sin(t);
    m(1, 0) = std::sin(t); m(1, 1) = std::cos(t);
    return m;
  };
  auto rot_x = [](double t) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(1, 1) = std::cos(t); m(1, 2) = -std::sin(t);
    m(2, 1) = std::sin(t); m(2, 2) = std::cos(t);
    return m;
  };
  auto trans = [](int axis, double v) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(axis, 3) = v;
    return m;
  };
  std::vector<Eigen::Matrix4d> frames{Eigen::Matrix4d::Identity()};
  for (int i = 0; i < model.dof(); ++i) {
    const auto& j = model.joints()[i];
    frames.push_back(frames.back() * rot_z(q(i) + j.theta_offset) * trans(2, j.d) * trans(0, j.a) * rot_x(j.alpha));
  }
  return frames;
}

inline PointSet oracle_points(const RobotModel& model, const JointConfig& q) {
  const auto frames = oracle_frames(model, q);
  PointSet out(model.total_points(), 3);
  int k = 0;
  for (int l = 0; l < model.dof(); ++l) {
    for (const auto& p : model.link_points()[l]) {
      out.row(k++) = (frames[l + 1] * p.homogeneous()).head<3>().transpose();
    }
  }
  return out;
}

}  // namespace rdiff::test

namespace rdiff::test {

/// Element-wise relative error with a magnitude floor so entries near zero
/// are compared absolutely.
template <typename A, typename B>
double max_rel_error(const A& a, const B& b, double floor = 1e-3) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double x = static_cast<double>(a(i, j)), y = static_cast<double>(b(i, j));
      worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
    }
  }
  return worst;
}

}  // namespace rdiff::test

#include "rdiff/world.hpp"

namespace rdiff::test {

inline JointConfig two_sphere_start() {
  JointConfig q(7);
  q << 1.57, 1.23, 1.68, 1.38, 1.31, 2.85, 1.68;
  return q;
}

inline JointConfig two_sphere_goal() {
  JointConfig q(7);
  q << 0.21, 1.21, 1.78, 2.45, 1.73, 2.62, 1.52;
  return q;
}

inline const Scene& two_sphere_scene() {
  static const Scene scene = load_scene(data_path("scenes/two_spheres.json"));
  return scene;
}

}  // namespace rdiff::test
