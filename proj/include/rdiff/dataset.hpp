#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rdiff/planner.hpp"

namespace rdiff {

/// Random sphere scenes: centers in a horizontal annulus around the base.
struct SceneSpec {
  int min_spheres = 1;
  int max_spheres = 2;
  double min_radius = 0.1;
  double max_radius = 0.2;
  double min_horizontal = 0.3;
  double max_horizontal = 0.75;
  double min_z = 0.1;
  double max_z = 1.0;
  Bounds bounds{Vec3(-1.2, -1.2, -0.2), Vec3(1.2, 1.2, 1.6)};

  void validate() const;
};

nlohmann::json scene_spec_to_json(const SceneSpec& s);
SceneSpec scene_spec_from_json(const nlohmann::json& j, SceneSpec base = {});

/// Sphere values are rounded to f32 so the scene survives storage unchanged.
Scene random_scene(const SceneSpec& spec, std::mt19937_64& rng);

struct DatasetRecord {
  Scene scene;
  JointConfig q_init;
  JointConfig q_goal;
  Trajectory trajectory;
};

/// Throws Error naming the first violated record invariant.
void validate_record(const DatasetRecord& r, const RobotModel& model, double safe_distance,
                     double edge_step = 0.01);

struct DatasetConfig {
  SceneSpec scene;
  PlannerConfig planner;
  int frames = 50;
  int ik_solutions = 4;
  /// Attempts per record before the generator gives up.
  int max_attempts = 200;
  int config_tries = 100;
  int workers = 1;

  DatasetConfig();
  void validate() const;
};

nlohmann::json dataset_config_to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j, DatasetConfig base = {});

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::int64_t records = 0;
  std::int64_t attempts = 0;
  std::map<std::string, std::int64_t> rejections;
  std::string robot_name;
  double safe_distance = kDefaultSafeDistance;
  int frames_per_trajectory = 50;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

struct Dataset {
  std::vector<DatasetRecord> records;
  DatasetManifest manifest;
};

using ProgressFn = std::function<void(int done, int total)>;

/// Seed of record i; records are generated independently so worker count does not matter.
std::uint64_t record_seed(std::uint64_t seed, std::uint64_t index);

/// Generates one record; failed attempts are tallied in `rejections`.
DatasetRecord generate_record(const RobotModel& model, const DatasetConfig& cfg, std::uint64_t seed,
                              std::map<std::string, std::int64_t>& rejections, std::int64_t& attempts);

Dataset generate_dataset(const RobotModel& model, int n_records, const DatasetConfig& cfg, std::uint64_t seed,
                         const ProgressFn& progress = {});

std::string encode_dataset(const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> decode_dataset(const std::string& bytes);

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);
/// Writes the binary file and its sidecar manifest.
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
/// Reads the binary file (and manifest when present); validates every record when a model is given.
Dataset read_dataset(const std::filesystem::path& path, const RobotModel* model = nullptr);

}  // namespace rdiff
