#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "rdiff/world.hpp"

using namespace rdiff;

namespace {

Scene single_sphere(double r = 0.2, Vec3 c = Vec3::Zero()) {
  Scene s;
  s.spheres.push_back({c, r});
  return s;
}

}  // namespace

TEST_CASE("surface sampling") {
  const Scene scene = single_sphere();
  const auto cloud = sample_point_cloud(scene, 1400, 42);
  REQUIRE(cloud.size() == 1400);
  CHECK(cloud.flattened().size() == 4200);
  for (int k = 0; k < cloud.size(); ++k) CHECK(std::abs(cloud.points.row(k).norm() - 0.2) < 1e-9);

  const auto again = sample_point_cloud(scene, 1400, 42);
  CHECK((cloud.points.array() == again.points.array()).all());
  const auto other = sample_point_cloud(scene, 1400, 43);
  CHECK((cloud.points.array() != other.points.array()).any());
}

TEST_CASE("area-proportional allocation") {
  Scene two;
  two.spheres = {{Vec3(-0.5, 0, 0), 0.2}, {Vec3(0.5, 0, 0), 0.2}};
  auto counts = allocate_points(two, 1400);
  CHECK(counts == std::vector<int>{700, 700});
  two.spheres[1].radius = 0.4;
  counts = allocate_points(two, 1400);
  CHECK(counts[0] + counts[1] == 1400);
  CHECK(counts[0] == 280);

  const auto cloud = sample_point_cloud(two, 1400, 1);
  for (int k = 0; k < cloud.size(); ++k) {
    const Vec3 p = cloud.points.row(k).transpose();
    const double d0 = std::abs((p - two.spheres[0].center).norm() - two.spheres[0].radius);
    const double d1 = std::abs((p - two.spheres[1].center).norm() - two.spheres[1].radius);
    CHECK(std::min(d0, d1) < 1e-9);
  }
}

TEST_CASE("empty scenes") {
  Scene empty;
  CHECK_THROWS_AS(sample_point_cloud(empty, 10, 0), Error);
  CHECK(std::isinf(signed_distance(Vec3::Zero(), empty)));
  CHECK(std::isinf(min_clearance(PointSet::Zero(3, 3), empty)));
}

TEST_CASE("signed distance") {
  const Scene scene = single_sphere();
  CHECK(signed_distance(Vec3(0.5, 0, 0), scene) == doctest::Approx(0.3));
  CHECK(std::abs(signed_distance(Vec3(0, 0.2, 0), scene)) < 1e-15);
  CHECK(signed_distance(Vec3::Zero(), scene) == doctest::Approx(-0.2));
}

TEST_CASE("hinge penalty branches") {
  const Scene scene = single_sphere();
  const double s = 0.05;
  CHECK(std::abs(hinge_penalty(Vec3(0.5, 0, 0), scene, s) - 0.0) < 1e-12);
  CHECK(std::abs(hinge_penalty(Vec3(0.2, 0, 0), scene, s) - 0.05) < 1e-12);
  CHECK(std::abs(hinge_penalty(Vec3(0.1, 0, 0), scene, s) - 0.15) < 1e-12);
  // Boundary D == S: both branches give 0.
  CHECK(hinge_penalty(Vec3(0.25, 0, 0), scene, s) == doctest::Approx(0.0));
}

TEST_CASE("hinge penalty properties") {
  const Scene scene = single_sphere(0.3, Vec3(0.1, -0.2, 0.3));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const Vec3 q(u(rng), u(rng), u(rng));
    CHECK(hinge_penalty(p, scene, 0.05) >= 0.0);
    CHECK(std::abs(signed_distance(p, scene) - signed_distance(q, scene)) <= (p - q).norm() + 1e-12);
    const double d = signed_distance(p, scene);
    const double h0 = hinge_penalty(p, scene, 0.0);
    CHECK(h0 == (d <= 0.0 ? -d : 0.0));
    CHECK((h0 > 0.0) == (d < 0.0));
    // Continuity across D = S.
    const Vec3 dir = (p - scene.spheres[0].center).normalized();
    const Vec3 at = scene.spheres[0].center + dir * (0.3 + 0.05);
    CHECK(hinge_penalty(at + dir * 1e-9, scene, 0.05) < 1e-8);
    CHECK(hinge_penalty(at - dir * 1e-9, scene, 0.05) < 1e-8);
  }
}

TEST_CASE("collision loss value and gradient") {
  const Scene scene = single_sphere();
  SUBCASE("far points") {
    PointSet pts(2, 3);
    pts << 1, 0, 0, 0, 1, 0;
    const auto loss = collision_loss(pts, scene, 0.05);
    CHECK(loss.value == 0.0);
    CHECK(loss.gradient.isZero());
  }
  SUBCASE("surface point") {
    PointSet pts(1, 3);
    pts << 0, 0, 0.2;
    CHECK(collision_loss(pts, scene, 0.05).value == doctest::Approx(0.05));
  }
  SUBCASE("finite differences away from the kink") {
    Scene two;
    two.spheres = {{Vec3(0, 0, 0), 0.3}, {Vec3(0.6, 0.1, 0), 0.2}};
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.6, 1.0);
    PointSet pts(50, 3);
    for (int k = 0; k < 50; ++k) {
      Vec3 p;
      double d;
      do {
        p = Vec3(u(rng), u(rng), u(rng) * 0.3);
        d = signed_distance(p, two);
      } while (std::abs(d - 0.05) <= 1e-3);
      pts.row(k) = p.transpose();
    }
    const auto loss = collision_loss(pts, two, 0.05);
    PointSet fd(50, 3);
    const double h = 1e-6;
    for (int k = 0; k < 50; ++k) {
      for (int c = 0; c < 3; ++c) {
        PointSet a = pts, b = pts;
        a(k, c) += h;
        b(k, c) -= h;
        fd(k, c) = (collision_loss(a, two, 0.05).value - collision_loss(b, two, 0.05).value) / (2 * h);
      }
    }
    CHECK(test::max_rel_error(loss.gradient, fd) < 1e-4);
  }
  SUBCASE("equidistant spheres use the lowest index") {
    Scene two;
    two.spheres = {{Vec3(-1, 0, 0), 0.5}, {Vec3(1, 0, 0), 0.5}};
    PointSet pts(1, 3);
    pts << 0, 0, 0;
    int nearest = -2;
    signed_distance(Vec3::Zero(), two, nearest);
    CHECK(nearest == 0);
    PointSet inside(1, 3);
    inside << 0, 0.4, 0;
    two.spheres = {{Vec3(-0.3, 0, 0), 0.5}, {Vec3(0.3, 0, 0), 0.5}};
    const auto loss = collision_loss(inside, two, 0.05);
    const Vec3 expected = -(Vec3(0, 0.4, 0) - Vec3(-0.3, 0, 0)).normalized();
    CHECK((loss.gradient.row(0).transpose() - expected).norm() < 1e-12);
  }
}

TEST_CASE("collision loss decreases moving radially outward") {
  const Scene scene = single_sphere(0.2, Vec3(0.1, 0.2, 0.3));
  const Vec3 dir = Vec3(1, 2, -1).normalized();
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 40; ++i) {
    PointSet pts(1, 3);
    pts.row(0) = (scene.spheres[0].center + dir * (0.01 * i)).transpose();
    const double v = collision_loss(pts, scene, 0.05).value;
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("min clearance") {
  const Scene scene = single_sphere();
  PointSet pts(2, 3);
  pts << 0.5, 0, 0, 0, 0.7, 0;
  CHECK(min_clearance(pts, scene) == doctest::Approx(0.3));
  pts.row(1) << 0, 0.1, 0;
  CHECK(min_clearance(pts, scene) < 0.0);
}

TEST_CASE("scene json validation") {
  nlohmann::json j = {{"bounds", {{"min", {-1, -1, -1}}, {"max", {1, 1, 1}}}},
                      {"spheres", {{{"center", {0, 0.02, 0.63}}, {"radius", 0.2}}}}};
  const Scene s = scene_from_json(j);
  CHECK(s.spheres.size() == 1);
  CHECK(scene_from_json(scene_to_json(s)).spheres[0].center == s.spheres[0].center);
  j["spheres"][0]["radius"] = -0.1;
  CHECK_THROWS_AS(scene_from_json(j), LoadError);
  j["spheres"][0]["radius"] = 0.1;
  j["spheres"][0]["center"] = {3, 0, 0};
  CHECK_THROWS_AS(scene_from_json(j), LoadError);
  j["spheres"] = nlohmann::json::array();
  j["bounds"]["max"] = {1, -1, 1};
  CHECK_THROWS_AS(scene_from_json(j), LoadError);
}
