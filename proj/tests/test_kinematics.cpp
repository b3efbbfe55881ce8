#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "rdiff/kinematics.hpp"

using namespace rdiff;
using rdiff::test::panda;
using rdiff::test::planar;

namespace {

nlohmann::json planar_json() { return robot_to_json(planar()); }

}  // namespace

TEST_CASE("fixtures load with their declared dof") {
  CHECK(panda().dof() == 7);
  CHECK(planar().dof() == 2);
  CHECK(panda().total_points() == 50);
}

TEST_CASE("invalid descriptions are rejected") {
  SUBCASE("limit_lo >= limit_hi") {
    auto j = planar_json();
    j["joints"][1]["limit_lo"] = 1.0;
    j["joints"][1]["limit_hi"] = 1.0;
    CHECK_THROWS_AS(robot_from_json(j), LoadError);
  }
  SUBCASE("zero links") {
    auto j = planar_json();
    j["dof"] = 0;
    j["joints"] = nlohmann::json::array();
    j["link_points"] = nlohmann::json::array();
    CHECK_THROWS_AS(robot_from_json(j), LoadError);
  }
  SUBCASE("dof mismatch") {
    auto j = planar_json();
    j["dof"] = 3;
    CHECK_THROWS_AS(robot_from_json(j), LoadError);
  }
  SUBCASE("empty link point set") {
    auto j = planar_json();
    j["link_points"][0] = nlohmann::json::array();
    CHECK_THROWS_AS(robot_from_json(j), LoadError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_robot("/nonexistent/robot.json"), LoadError); }
}

TEST_CASE("planar arm analytic poses") {
  const auto straight = forward_kinematics(planar(), JointConfig::Zero(2));
  REQUIRE(straight.size() == 3);
  CHECK((straight.back().translation - Vec3(2, 0, 0)).norm() == doctest::Approx(0.0));
  JointConfig q(2);
  q << M_PI / 2, 0.0;
  const auto turned = forward_kinematics(planar(), q);
  CHECK((turned.back().translation - Vec3(0, 2, 0)).norm() < 1e-15);

  const PointSet pts = fk_points(planar(), JointConfig::Zero(2));
  REQUIRE(pts.rows() == 2);
  CHECK((pts.row(0) - Eigen::RowVector3d(1, 0, 0)).norm() == 0.0);
  CHECK((pts.row(1) - Eigen::RowVector3d(2, 0, 0)).norm() == 0.0);
}

TEST_CASE("7-DOF FK matches the matrix-product oracle") {
  std::mt19937_64 rng(11);
  double worst_pose = 0.0, worst_point = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const JointConfig q = test::random_config(panda(), rng);
    const auto poses = forward_kinematics(panda(), q);
    const auto oracle = test::oracle_frames(panda(), q);
    for (std::size_t i = 0; i < poses.size(); ++i) {
      worst_pose = std::max(worst_pose, (poses[i].translation - oracle[i].block<3, 1>(0, 3)).norm());
      worst_pose = std::max(worst_pose, (poses[i].rotation - oracle[i].block<3, 3>(0, 0)).cwiseAbs().maxCoeff());
      const Mat3& r = poses[i].rotation;
      CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
    }
    const PointSet pts = fk_points(panda(), q);
    REQUIRE(pts.rows() == panda().total_points());
    worst_point = std::max(worst_point, (pts - test::oracle_points(panda(), q)).cwiseAbs().maxCoeff());
  }
  CHECK(worst_pose < 1e-9);
  CHECK(worst_point < 1e-9);
}

TEST_CASE("FK is total and checks dimensions") {
  JointConfig beyond = panda().upper().array() + 1.0;
  CHECK_NOTHROW(forward_kinematics(panda(), beyond));
  CHECK_THROWS_AS(forward_kinematics(panda(), JointConfig::Zero(6)), DimensionError);
  CHECK_THROWS_AS(fk_points_jacobian(panda(), JointConfig::Zero(3)), DimensionError);
}

TEST_CASE("fk_points is deterministic and continuous") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const JointConfig q = test::random_config(panda(), rng);
    const PointSet a = fk_points(panda(), q);
    const PointSet b = fk_points(panda(), q);
    CHECK((a.array() == b.array()).all());
    std::uniform_real_distribution<double> sign(-1e-6, 1e-6);
    JointConfig dq(7);
    for (int i = 0; i < 7; ++i) dq(i) = sign(rng);
    const PointSet c = fk_points(panda(), JointConfig(q + dq));
    CHECK((a - c).rowwise().norm().maxCoeff() < 1e-4);
  }
}

TEST_CASE("point Jacobian matches central finite differences") {
  std::mt19937_64 rng(5);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const JointConfig q = test::random_config(panda(), rng);
    const Eigen::MatrixXd jac = fk_points_jacobian(panda(), q);
    REQUIRE(jac.rows() == 3 * panda().total_points());
    REQUIRE(jac.cols() == 7);
    Eigen::MatrixXd fd(jac.rows(), jac.cols());
    for (int j = 0; j < 7; ++j) {
      JointConfig qp = q, qm = q;
      qp(j) += h;
      qm(j) -= h;
      const PointSet dp = (fk_points(panda(), qp) - fk_points(panda(), qm)) / (2 * h);
      for (int k = 0; k < panda().total_points(); ++k) fd.block<3, 1>(3 * k, j) = dp.row(k).transpose();
    }
    worst = std::max(worst, test::max_rel_error(jac, fd));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("planar Jacobian at the straight pose") {
  const Eigen::MatrixXd jac = fk_points_jacobian(planar(), JointConfig::Zero(2));
  CHECK(jac.cols() == 2);
  // Tip point is point 1: rows 3..5.
  CHECK(jac(4, 0) == doctest::Approx(2.0));
  CHECK(jac(4, 1) == doctest::Approx(1.0));
  CHECK(jac(3, 0) == doctest::Approx(0.0));
}

TEST_CASE("end-effector Jacobian matches finite differences") {
  std::mt19937_64 rng(8);
  const JointConfig q = test::random_config(panda(), rng);
  const auto jac = end_effector_jacobian(panda(), q);
  const double h = 1e-6;
  for (int j = 0; j < 7; ++j) {
    JointConfig qp = q, qm = q;
    qp(j) += h;
    qm(j) -= h;
    const Vec3 dv = (end_effector_pose(panda(), qp).translation - end_effector_pose(panda(), qm).translation) / (2 * h);
    CHECK((dv - jac.block<3, 1>(0, j)).norm() < 1e-6);
  }
}
