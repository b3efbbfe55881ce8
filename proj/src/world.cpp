#include "rdiff/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace rdiff {

namespace {

Vec3 vec3_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw LoadError(std::string("scene: ") + what + " must be [x,y,z]");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

void Scene::validate() const {
  if (!bounds.min.allFinite() || !bounds.max.allFinite() ||
      !(bounds.min.array() < bounds.max.array()).all()) {
    throw LoadError("scene: bounds must satisfy min < max on every axis");
  }
  for (std::size_t i = 0; i < spheres.size(); ++i) {
    const auto& s = spheres[i];
    if (!s.center.allFinite() || !std::isfinite(s.radius) || !(s.radius > 0.0)) {
      throw LoadError("scene: sphere " + std::to_string(i) + " needs a finite center and radius > 0");
    }
    if (!bounds.contains(s.center)) {
      throw LoadError("scene: sphere " + std::to_string(i) + " center lies outside the bounds");
    }
  }
}

Scene scene_from_json(const nlohmann::json& j) {
  Scene scene;
  try {
    if (j.contains("bounds")) {
      scene.bounds.min = vec3_from_json(j.at("bounds").at("min"), "bounds.min");
      scene.bounds.max = vec3_from_json(j.at("bounds").at("max"), "bounds.max");
    }
    for (const auto& sj : j.value("spheres", nlohmann::json::array())) {
      SphereObstacle s;
      s.center = vec3_from_json(sj.at("center"), "center");
      s.radius = sj.at("radius").get<double>();
      scene.spheres.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("scene: ") + e.what());
  }
  scene.validate();
  return scene;
}

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json j;
  j["bounds"] = {{"min", {scene.bounds.min.x(), scene.bounds.min.y(), scene.bounds.min.z()}},
                 {"max", {scene.bounds.max.x(), scene.bounds.max.y(), scene.bounds.max.z()}}};
  j["spheres"] = nlohmann::json::array();
  for (const auto& s : scene.spheres) {
    j["spheres"].push_back(
        {{"center", {s.center.x(), s.center.y(), s.center.z()}}, {"radius", s.radius}});
  }
  return j;
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open scene " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("scene " + path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

Eigen::VectorXf ObstaclePointCloud::flattened() const {
  Eigen::VectorXf out(points.size());
  for (Eigen::Index k = 0; k < points.rows(); ++k) {
    for (int c = 0; c < 3; ++c) out(3 * k + c) = static_cast<float>(points(k, c));
  }
  return out;
}

std::vector<int> allocate_points(const Scene& scene, int k) {
  const std::size_t n = scene.spheres.size();
  std::vector<double> area(n);
  for (std::size_t i = 0; i < n; ++i) area[i] = scene.spheres[i].radius * scene.spheres[i].radius;
  const double total = std::accumulate(area.begin(), area.end(), 0.0);
  std::vector<int> counts(n);
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double share = k * area[i] / total;
    counts[i] = static_cast<int>(std::floor(share));
    assigned += counts[i];
    remainders.emplace_back(share - counts[i], i);
  }
  // Ties go to the lower index.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int r = 0; r < k - assigned; ++r) ++counts[remainders[r % n].second];
  return counts;
}

ObstaclePointCloud sample_point_cloud(const Scene& scene, int k, std::uint64_t seed) {
  if (scene.spheres.empty()) throw Error("sample_point_cloud: scene has no obstacles");
  if (k < 1) throw Error("sample_point_cloud: k must be at least 1");
  const auto counts = allocate_points(scene, k);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ObstaclePointCloud cloud;
  cloud.seed = seed;
  cloud.points.resize(k, 3);
  int row = 0;
  for (std::size_t i = 0; i < scene.spheres.size(); ++i) {
    const auto& s = scene.spheres[i];
    for (int c = 0; c < counts[i]; ++c) {
      Vec3 u;
      do {
        u = Vec3(normal(rng), normal(rng), normal(rng));
      } while (u.norm() < 1e-12);
      cloud.points.row(row++) = (s.center + s.radius * u.normalized()).transpose();
    }
  }
  return cloud;
}

double signed_distance(const Vec3& p, const Scene& scene, int& nearest) {
  double best = std::numeric_limits<double>::infinity();
  nearest = -1;
  for (std::size_t i = 0; i < scene.spheres.size(); ++i) {
    const double d = (p - scene.spheres[i].center).norm() - scene.spheres[i].radius;
    if (d < best) {
      best = d;
      nearest = static_cast<int>(i);
    }
  }
  return best;
}

double signed_distance(const Vec3& p, const Scene& scene) {
  int nearest;
  return signed_distance(p, scene, nearest);
}

double hinge_penalty(const Vec3& p, const Scene& scene, double safe_distance) {
  const double d = signed_distance(p, scene);
  return d <= safe_distance ? safe_distance - d : 0.0;
}

CollisionLoss collision_loss(const PointSet& points, const Scene& scene, double safe_distance) {
  CollisionLoss out;
  out.gradient.setZero(points.rows(), 3);
  if (points.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(points.rows());
  for (Eigen::Index k = 0; k < points.rows(); ++k) {
    const Vec3 p = points.row(k).transpose();
    int nearest;
    const double d = signed_distance(p, scene, nearest);
    if (nearest < 0 || d > safe_distance) continue;
    out.value += safe_distance - d;
    Vec3 dir = p - scene.spheres[nearest].center;
    const double len = dir.norm();
    // At the exact center the direction is arbitrary; +x is used.
    dir = len > 0.0 ? Vec3(dir / len) : Vec3::UnitX();
    out.gradient.row(k) = (-inv_n * dir).transpose();
  }
  out.value *= inv_n;
  return out;
}

double min_clearance(const PointSet& points, const Scene& scene) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < points.rows(); ++k) {
    best = std::min(best, signed_distance(points.row(k).transpose(), scene));
  }
  return best;
}

}  // namespace rdiff
