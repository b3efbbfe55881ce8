#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rdiff/kinematics.hpp"
#include "rdiff/world.hpp"

namespace rdiff {

struct EvalThresholds {
  double pos_tol = 0.01;
  double ori_tol_deg = 15.0;
  double max_joint_step = 0.2;
  double safe_distance = kDefaultSafeDistance;
  double densify_step = 0.01;

  void validate() const;
};

nlohmann::json thresholds_to_json(const EvalThresholds& t);
EvalThresholds thresholds_from_json(const nlohmann::json& j, EvalThresholds base = {});

enum class FailureReason { none, collision, limits, erratic, goal_miss, timeout };

std::string failure_reason_name(FailureReason r);
FailureReason parse_failure_reason(const std::string& s);

struct MetricsRecord {
  bool success = false;
  bool collision = false;
  double path_length = 0.0;
  double wall_time = 0.0;
  FailureReason failure_reason = FailureReason::none;

  double min_clearance = 0.0;
  /// Clearance dipped into [0, safe_distance) somewhere.
  bool margin_warning = false;
  bool within_limits = true;
  bool erratic = false;
  double max_joint_step = 0.0;
  double position_error = 0.0;
  double orientation_error_deg = 0.0;
  /// Planner diagnostic when no trajectory was produced.
  std::string error;
};

nlohmann::json metrics_to_json(const MetricsRecord& m);
MetricsRecord metrics_from_json(const nlohmann::json& j);

struct EvalTask {
  std::string name;
  Scene scene;
  JointConfig q_init;
  JointConfig q_goal;
  LinkPose target;
};

/// Task whose target is the end-effector pose of q_goal.
EvalTask make_task(const RobotModel& model, const Scene& scene, const JointConfig& q_init, const JointConfig& q_goal,
                   std::string name = {});

/// Sum over link frames of the distance travelled by each frame origin.
double path_length(const Trajectory& traj, const RobotModel& model);

MetricsRecord evaluate(const Trajectory& traj, const EvalTask& task, const RobotModel& model,
                       const EvalThresholds& th, double wall_time = 0.0);

struct PlanAttempt {
  bool returned = false;
  Trajectory trajectory;
  double wall_time = 0.0;
  std::string error;
};

using PlannerFn = std::function<PlanAttempt(const EvalTask& task, double budget_s, std::uint64_t seed)>;

struct BenchmarkPlanner {
  std::string name;
  PlannerFn plan;
};

struct PlannerSummary {
  std::string name;
  int attempts = 0;
  int returned = 0;
  int successes = 0;
  int collisions = 0;
  int collisions_returned = 0;
  double success_rate = 0.0;
  /// Collisions over all attempts and over attempts that returned a trajectory.
  double collision_rate = 0.0;
  double collision_rate_returned = 0.0;
  /// Over successful attempts; 0 when there are none.
  double mean_length = 0.0;
  double mean_wall_time = 0.0;
  /// (time_s, success_rate) at the report checkpoints.
  std::vector<std::pair<double, double>> curve;
  std::vector<MetricsRecord> records;
};

struct BenchmarkReport {
  double budget_s = 0.0;
  std::uint64_t seed = 0;
  int tasks = 0;
  std::vector<double> checkpoints;
  std::vector<PlannerSummary> planners;
};

struct BenchmarkOptions {
  int curve_points = 10;
  int workers = 1;
};

/// Task i of every planner runs with the same seed; results are assembled in task order.
BenchmarkReport run_benchmark(const std::vector<BenchmarkPlanner>& planners, const std::vector<EvalTask>& tasks,
                              double budget_s, const RobotModel& model, const EvalThresholds& th, std::uint64_t seed,
                              const BenchmarkOptions& options = {});

/// Per-task seed shared by all planners.
std::uint64_t task_seed(std::uint64_t seed, std::size_t index);

/// `timing` false drops wall times and curves, leaving only seed-determined fields.
nlohmann::json report_to_json(const BenchmarkReport& r, bool timing = true);
std::string report_table(const BenchmarkReport& r);
/// Rows of planner,time_s,success_rate.
std::string report_curves_csv(const BenchmarkReport& r);

}  // namespace rdiff
