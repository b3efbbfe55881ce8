#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "rdiff/kinematics.hpp"
#include "rdiff/world.hpp"

namespace rdiff {

struct PlannerConfig {
  double step_size = 0.15;
  double goal_bias = 0.1;
  int max_iters = 30000;
  /// <= 0 selects a gamma giving a 0.6 rad rewire radius at 1000 nodes.
  double rewire_gamma = 0.0;
  double clearance = kDefaultSafeDistance;
  double time_budget = 600.0;
  std::uint64_t seed = 0;
  int shortcut_passes = 0;
  /// Iterations to keep refining once every goal is connected; < 0 runs to max_iters.
  int refine_iters = -1;
  /// Maximum per-joint increment when densifying edges.
  double edge_step = 0.01;

  void validate() const;
  double gamma_for(int dof) const;
};

nlohmann::json planner_config_to_json(const PlannerConfig& c);
/// Missing keys keep their defaults.
PlannerConfig planner_config_from_json(const nlohmann::json& j, PlannerConfig base = {});

struct Path {
  std::vector<JointConfig> waypoints;
  double cost = 0.0;
};

struct GoalSet {
  std::vector<JointConfig> configs;
};

struct PlanStats {
  /// Best solution cost after each iteration (+inf before the first solution).
  std::vector<double> best_cost;
  int iterations = 0;
  /// Nodes added to the tree.
  int expansions = 0;
  /// Number of trees grown; shared-tree planning grows exactly one.
  int tree_builds = 0;
  int collision_checks = 0;
  double wall_time = 0.0;
};

struct PlanResult {
  Path path;
  int goal_index = -1;
  PlanStats stats;
};

struct SharedTreeResult {
  /// Goal index -> best path found to that goal.
  std::map<int, Path> paths;
  int best_goal = -1;
  PlanStats stats;
};

/// Called for every free-space sample. `informed` marks samples drawn from the
/// ellipsoid with foci (q_init, goal) and transverse diameter `best_cost`.
using SampleObserver =
    std::function<void(const JointConfig& sample, bool informed, int goal, double best_cost)>;

/// Configuration validity under node security defense: inside joint limits
/// and every link point at least `clearance` from the obstacles.
class CollisionChecker {
 public:
  CollisionChecker(const RobotModel& model, const Scene& scene, double clearance,
                   double edge_step = 0.01);

  bool valid(const JointConfig& q) const;
  double clearance(const JointConfig& q) const;
  /// Checks every interpolated configuration at <= edge_step per joint, end included.
  bool edge_valid(const JointConfig& from, const JointConfig& to) const;

  long checks() const { return checks_; }
  const RobotModel& model() const { return model_; }
  const Scene& scene() const { return scene_; }
  double margin() const { return clearance_; }

 private:
  const RobotModel& model_;
  const Scene& scene_;
  double clearance_;
  double edge_step_;
  mutable long checks_ = 0;
};

double config_distance(const JointConfig& a, const JointConfig& b);
double path_cost(const std::vector<JointConfig>& waypoints);
double trajectory_arc_length(const Trajectory& traj);

/// Densifies a waypoint sequence so no joint moves more than max_step between rows.
Trajectory densify(const Trajectory& frames, double max_step);
Trajectory densify(const std::vector<JointConfig>& waypoints, double max_step);

struct IkOptions {
  double damping = 1e-2;
  int restarts_per_solution = 50;
  int max_iterations = 300;
  double position_tolerance = 1e-3;
  double orientation_tolerance = 0.5 * M_PI / 180.0;
  double duplicate_tolerance = 1e-2;
};

/// Damped least squares IK from random restarts. Returns up to n distinct,
/// in-limit configurations with clearance >= `clearance` in `scene`.
/// Throws PlanningError when no solution is found.
GoalSet ik_solve(const RobotModel& model, const LinkPose& target, int n, std::uint64_t seed,
                 const Scene& scene = {}, double clearance = kDefaultSafeDistance,
                 const IkOptions& options = {});

PlanResult plan_rrt_star(const RobotModel& model, const Scene& scene, const JointConfig& q_init,
                         const GoalSet& goals, const PlannerConfig& cfg,
                         const SampleObserver& observer = {});

PlanResult plan_informed_rrt_star(const RobotModel& model, const Scene& scene,
                                  const JointConfig& q_init, const GoalSet& goals,
                                  const PlannerConfig& cfg, const SampleObserver& observer = {});

/// One tree rooted at q_init serves every goal; informed sampling is keyed
/// to the cheapest connected goal.
SharedTreeResult plan_shared_tree(const RobotModel& model, const Scene& scene,
                                  const JointConfig& q_init, const GoalSet& goals,
                                  const PlannerConfig& cfg, const SampleObserver& observer = {});

/// Random shortcutting; keeps the endpoints and never increases cost.
Path shortcut_path(const Path& path, const CollisionChecker& checker, int passes,
                   std::uint64_t seed);

/// n frames evenly spaced in config-space arc length.
Trajectory resample_path(const Path& path, int n);

}  // namespace rdiff
