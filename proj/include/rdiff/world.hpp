#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "rdiff/kinematics.hpp"

namespace rdiff {

inline constexpr double kDefaultSafeDistance = 0.05;
inline constexpr int kDefaultCloudPoints = 1400;

struct SphereObstacle {
  Vec3 center = Vec3::Zero();
  double radius = 0.1;
};

struct Bounds {
  Vec3 min = Vec3::Constant(-1.0);
  Vec3 max = Vec3::Constant(1.0);

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

struct Scene {
  std::vector<SphereObstacle> spheres;
  Bounds bounds;

  /// Throws LoadError when bounds are degenerate or a sphere is invalid.
  void validate() const;
};

Scene scene_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const Scene& scene);
Scene load_scene(const std::filesystem::path& path);

struct ObstaclePointCloud {
  PointSet points;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(points.rows()); }
  /// Row-major flattening (x0, y0, z0, x1, ...).
  Eigen::VectorXf flattened() const;
};

/// Per-sphere point counts proportional to surface area (largest remainder).
std::vector<int> allocate_points(const Scene& scene, int k);

/// Samples k surface points; spheres are visited in order, so the cloud is
/// sphere-major and reproducible for a fixed seed.
ObstaclePointCloud sample_point_cloud(const Scene& scene, int k, std::uint64_t seed);

/// Minimum over spheres of |p - c| - r; +infinity for an empty scene.
double signed_distance(const Vec3& p, const Scene& scene);

/// Signed distance plus the lowest-index sphere attaining it (-1 if none).
double signed_distance(const Vec3& p, const Scene& scene, int& nearest);

/// S - D(p) when D(p) <= S, else 0.
double hinge_penalty(const Vec3& p, const Scene& scene, double safe_distance);

struct CollisionLoss {
  double value = 0.0;
  PointSet gradient;
};

/// Mean hinge penalty over the rows of points and its gradient.
CollisionLoss collision_loss(const PointSet& points, const Scene& scene, double safe_distance);

/// Minimum signed distance over all points; +infinity for an empty scene.
double min_clearance(const PointSet& points, const Scene& scene);

}  // namespace rdiff
