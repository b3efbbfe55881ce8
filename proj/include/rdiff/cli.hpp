#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdiff/methods.hpp"

namespace rdiff {

/// Every tunable default the command-line tools read, as one JSON document.
nlohmann::json default_config_json();

/// Defaults overlaid with `path` (JSON merge patch); relative paths inside resolve against its directory.
nlohmann::json load_config(const std::filesystem::path& path);

/// Trajectory file: {robot, method, seed, q_init, q_goal, frames}.
struct TrajectoryFile {
  std::string robot;
  std::string method;
  std::uint64_t seed = 0;
  JointConfig q_init;
  JointConfig q_goal;
  Trajectory frames;
};

nlohmann::json trajectory_file_to_json(const TrajectoryFile& t);
TrajectoryFile trajectory_file_from_json(const nlohmann::json& j);
void write_trajectory_file(const TrajectoryFile& t, const std::filesystem::path& path);
TrajectoryFile read_trajectory_file(const std::filesystem::path& path);

/// Benchmark tasks from a dataset file or a JSON {tasks: [{name, scene, q_init, q_goal}]} file.
std::vector<EvalTask> load_tasks(const std::filesystem::path& path, const RobotModel& model);

/// Entry point of the rdiff tool; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rdiff
