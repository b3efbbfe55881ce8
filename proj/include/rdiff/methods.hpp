#pragma once

#include <optional>
#include <string>

#include "rdiff/diffusion.hpp"
#include "rdiff/evalbench.hpp"
#include "rdiff/planner.hpp"

namespace rdiff {

enum class Method { rrt_star, informed, shared_tree, diffusion };

std::string method_name(Method m);
Method parse_method(const std::string& s);

struct PlanRequest {
  Scene scene;
  JointConfig q_init;
  /// Exactly one of goal_config / goal_pose is expected.
  std::optional<JointConfig> goal_config;
  std::optional<LinkPose> goal_pose;
  Method method = Method::shared_tree;
  std::uint64_t seed = 0;
  double budget_s = 60.0;
};

/// Shared settings for all methods; the diffusion pointers are only needed for Method::diffusion.
struct MethodContext {
  PlannerConfig planner;
  int frames = 50;
  /// Planner outputs get extra frames when needed to keep every per-joint step under this bound.
  double max_frame_step = 0.1;
  int ik_solutions = 4;
  GuidanceConfig guidance;
  const DiffusionModel* diffusion = nullptr;
  const CaeModel* cae = nullptr;
};

nlohmann::json method_context_to_json(const MethodContext& c);
/// Leaves the model pointers untouched.
MethodContext method_context_from_json(const nlohmann::json& j, MethodContext base = {});

/// "a,b,c" to a config; throws Error on empty items or trailing junk.
JointConfig parse_config(const std::string& csv);

struct PlanOutcome {
  Trajectory trajectory;
  JointConfig q_goal;
  double wall_time = 0.0;
  int clamped = 0;
  bool erratic_risk = false;
};

/// Throws PlanningError when no trajectory is found and Error on invalid requests.
PlanOutcome run_method(const RobotModel& model, const PlanRequest& req, const MethodContext& ctx);

/// Benchmark adapter running `method` on each task toward its goal configuration.
BenchmarkPlanner method_planner(const RobotModel& model, Method method, const MethodContext& ctx);

}  // namespace rdiff
