#include "rdiff/evalbench.hpp"

#include <atomic>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "rdiff/planner.hpp"

namespace rdiff {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const std::vector<std::pair<FailureReason, const char*>> kReasonNames = {
    {FailureReason::none, "none"},         {FailureReason::collision, "collision"},
    {FailureReason::limits, "limits"},     {FailureReason::erratic, "erratic"},
    {FailureReason::goal_miss, "goal_miss"}, {FailureReason::timeout, "timeout"}};

}  // namespace

void EvalThresholds::validate() const {
  if (!(pos_tol > 0.0 && ori_tol_deg > 0.0 && max_joint_step > 0.0 && safe_distance > 0.0 && densify_step > 0.0)) {
    throw Error("EvalThresholds: all thresholds must be positive");
  }
}

nlohmann::json thresholds_to_json(const EvalThresholds& t) {
  return {{"pos_tol", t.pos_tol},
          {"ori_tol_deg", t.ori_tol_deg},
          {"max_joint_step", t.max_joint_step},
          {"safe_distance", t.safe_distance},
          {"densify_step", t.densify_step}};
}

EvalThresholds thresholds_from_json(const nlohmann::json& j, EvalThresholds t) {
  t.pos_tol = j.value("pos_tol", t.pos_tol);
  t.ori_tol_deg = j.value("ori_tol_deg", t.ori_tol_deg);
  t.max_joint_step = j.value("max_joint_step", t.max_joint_step);
  t.safe_distance = j.value("safe_distance", t.safe_distance);
  t.densify_step = j.value("densify_step", t.densify_step);
  t.validate();
  return t;
}

std::string failure_reason_name(FailureReason r) {
  for (const auto& [k, v] : kReasonNames) {
    if (k == r) return v;
  }
  throw Error("unknown failure reason");
}

FailureReason parse_failure_reason(const std::string& s) {
  for (const auto& [k, v] : kReasonNames) {
    if (s == v) return k;
  }
  throw Error("unknown failure reason '" + s + "'");
}

nlohmann::json metrics_to_json(const MetricsRecord& m) {
  nlohmann::json j = {{"success", m.success},
                      {"collision", m.collision},
                      {"path_length", m.path_length},
                      {"wall_time", m.wall_time},
                      {"failure_reason", failure_reason_name(m.failure_reason)},
                      {"min_clearance", m.min_clearance},
                      {"margin_warning", m.margin_warning},
                      {"within_limits", m.within_limits},
                      {"erratic", m.erratic},
                      {"max_joint_step", m.max_joint_step},
                      {"position_error", m.position_error},
                      {"orientation_error_deg", m.orientation_error_deg}};
  if (!m.error.empty()) j["error"] = m.error;
  // Clearance is +inf in empty scenes, which JSON cannot carry.
  if (!std::isfinite(m.min_clearance)) j["min_clearance"] = nullptr;
  return j;
}

MetricsRecord metrics_from_json(const nlohmann::json& j) {
  MetricsRecord m;
  m.success = j.at("success").get<bool>();
  m.collision = j.at("collision").get<bool>();
  m.path_length = j.at("path_length").get<double>();
  m.wall_time = j.at("wall_time").get<double>();
  m.failure_reason = parse_failure_reason(j.at("failure_reason").get<std::string>());
  m.min_clearance = j.at("min_clearance").is_null() ? std::numeric_limits<double>::infinity()
                                                    : j.at("min_clearance").get<double>();
  m.margin_warning = j.at("margin_warning").get<bool>();
  m.within_limits = j.at("within_limits").get<bool>();
  m.erratic = j.at("erratic").get<bool>();
  m.max_joint_step = j.at("max_joint_step").get<double>();
  m.position_error = j.at("position_error").get<double>();
  m.orientation_error_deg = j.at("orientation_error_deg").get<double>();
  m.error = j.value("error", std::string());
  return m;
}

EvalTask make_task(const RobotModel& model, const Scene& scene, const JointConfig& q_init, const JointConfig& q_goal,
                   std::string name) {
  model.check_config(q_init);
  model.check_config(q_goal);
  return {std::move(name), scene, q_init, q_goal, end_effector_pose(model, q_goal)};
}

double path_length(const Trajectory& traj, const RobotModel& model) {
  if (traj.cols() != model.dof()) throw DimensionError("path_length: trajectory has the wrong dof");
  double total = 0.0;
  std::vector<LinkPose> prev;
  for (Eigen::Index f = 0; f < traj.rows(); ++f) {
    std::vector<LinkPose> poses = forward_kinematics(model, JointConfig(traj.row(f).transpose()));
    if (f > 0) {
      for (std::size_t l = 1; l < poses.size(); ++l) total += (poses[l].translation - prev[l].translation).norm();
    }
    prev = std::move(poses);
  }
  return total;
}

MetricsRecord evaluate(const Trajectory& traj, const EvalTask& task, const RobotModel& model,
                       const EvalThresholds& th, double wall_time) {
  th.validate();
  if (traj.rows() == 0) throw DimensionError("evaluate: empty trajectory");
  if (traj.cols() != model.dof()) {
    throw DimensionError("evaluate: trajectory has " + std::to_string(traj.cols()) + " joints, model has " +
                         std::to_string(model.dof()));
  }
  MetricsRecord m;
  m.wall_time = wall_time;
  const Trajectory dense = densify(traj, th.densify_step);
  m.min_clearance = std::numeric_limits<double>::infinity();
  for (Eigen::Index f = 0; f < dense.rows(); ++f) {
    m.min_clearance = std::min(m.min_clearance, min_clearance(fk_points(model, JointConfig(dense.row(f).transpose())),
                                                              task.scene));
  }
  m.collision = m.min_clearance < 0.0;
  m.margin_warning = !m.collision && m.min_clearance < th.safe_distance;
  for (Eigen::Index f = 0; f < traj.rows(); ++f) {
    if (!model.within_limits(traj.row(f).transpose())) m.within_limits = false;
    if (f > 0) m.max_joint_step = std::max(m.max_joint_step, (traj.row(f) - traj.row(f - 1)).cwiseAbs().maxCoeff());
  }
  m.erratic = m.max_joint_step > th.max_joint_step;
  const LinkPose ee = end_effector_pose(model, traj.row(traj.rows() - 1).transpose());
  m.position_error = (ee.translation - task.target.translation).norm();
  m.orientation_error_deg = rotation_distance(ee.rotation, task.target.rotation) * 180.0 / M_PI;
  const bool goal_ok = m.position_error <= th.pos_tol && m.orientation_error_deg <= th.ori_tol_deg;
  m.path_length = path_length(traj, model);

  if (m.collision) {
    m.failure_reason = FailureReason::collision;
  } else if (!m.within_limits) {
    m.failure_reason = FailureReason::limits;
  } else if (m.erratic) {
    m.failure_reason = FailureReason::erratic;
  } else if (!goal_ok) {
    m.failure_reason = FailureReason::goal_miss;
  }
  m.success = !m.collision && m.within_limits && !m.erratic && goal_ok;
  return m;
}

std::uint64_t task_seed(std::uint64_t seed, std::size_t index) { return splitmix64(splitmix64(seed) ^ index); }

BenchmarkReport run_benchmark(const std::vector<BenchmarkPlanner>& planners, const std::vector<EvalTask>& tasks,
                              double budget_s, const RobotModel& model, const EvalThresholds& th, std::uint64_t seed,
                              const BenchmarkOptions& options) {
  if (planners.empty()) throw Error("run_benchmark: no planners");
  if (tasks.empty()) throw Error("run_benchmark: no tasks");
  if (!(budget_s > 0.0)) throw Error("run_benchmark: budget must be positive");
  if (options.curve_points < 1 || options.workers < 1) throw Error("run_benchmark: bad options");
  th.validate();

  BenchmarkReport report;
  report.budget_s = budget_s;
  report.seed = seed;
  report.tasks = static_cast<int>(tasks.size());
  for (int k = 1; k <= options.curve_points; ++k) report.checkpoints.push_back(budget_s * k / options.curve_points);

  for (const auto& planner : planners) {
    PlannerSummary s;
    s.name = planner.name;
    s.records.resize(tasks.size());
    std::vector<bool> returned(tasks.size(), false);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t i = next++; i < tasks.size(); i = next++) {
        PlanAttempt a;
        try {
          a = planner.plan(tasks[i], budget_s, task_seed(seed, i));
        } catch (const std::exception& e) {
          a.returned = false;
          a.error = e.what();
        }
        MetricsRecord m;
        if (a.returned) {
          try {
            m = evaluate(a.trajectory, tasks[i], model, th, a.wall_time);
          } catch (const std::exception& e) {
            a.returned = false;
            a.error = e.what();
          }
        }
        if (!a.returned) {
          m = MetricsRecord{};
          m.wall_time = a.wall_time;
          m.failure_reason = FailureReason::timeout;
          m.error = a.error.empty() ? "no trajectory returned" : a.error;
        } else if (a.wall_time > budget_s && m.success) {
          m.success = false;
          m.failure_reason = FailureReason::timeout;
        }
        returned[i] = a.returned;
        s.records[i] = std::move(m);
      }
    };
    const int workers = std::min<int>(options.workers, static_cast<int>(tasks.size()));
    if (workers == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(work);
      for (auto& t : pool) t.join();
    }

    double length = 0.0, time = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const MetricsRecord& m = s.records[i];
      ++s.attempts;
      time += m.wall_time;
      if (returned[i]) ++s.returned;
      if (m.collision) {
        ++s.collisions;
        if (returned[i]) ++s.collisions_returned;
      }
      if (m.success) {
        ++s.successes;
        length += m.path_length;
      }
    }
    s.success_rate = static_cast<double>(s.successes) / s.attempts;
    s.collision_rate = static_cast<double>(s.collisions) / s.attempts;
    s.collision_rate_returned = s.returned > 0 ? static_cast<double>(s.collisions_returned) / s.returned : 0.0;
    s.mean_length = s.successes > 0 ? length / s.successes : 0.0;
    s.mean_wall_time = time / s.attempts;
    for (double c : report.checkpoints) {
      int n = 0;
      for (const auto& m : s.records) n += (m.success && m.wall_time <= c) ? 1 : 0;
      s.curve.emplace_back(c, static_cast<double>(n) / s.attempts);
    }
    report.planners.push_back(std::move(s));
  }
  return report;
}

nlohmann::json report_to_json(const BenchmarkReport& r, bool timing) {
  nlohmann::json planners = nlohmann::json::array();
  for (const auto& s : r.planners) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& m : s.records) {
      nlohmann::json j = metrics_to_json(m);
      if (!timing) j.erase("wall_time");
      records.push_back(std::move(j));
    }
    nlohmann::json p = {{"name", s.name},
                        {"attempts", s.attempts},
                        {"returned", s.returned},
                        {"successes", s.successes},
                        {"collisions", s.collisions},
                        {"collisions_returned", s.collisions_returned},
                        {"success_rate", s.success_rate},
                        {"collision_rate", s.collision_rate},
                        {"collision_rate_returned", s.collision_rate_returned},
                        {"mean_length", s.mean_length},
                        {"records", std::move(records)}};
    if (timing) {
      p["mean_wall_time"] = s.mean_wall_time;
      nlohmann::json curve = nlohmann::json::array();
      for (const auto& [t, v] : s.curve) curve.push_back({{"time_s", t}, {"success_rate", v}});
      p["curve"] = std::move(curve);
    }
    planners.push_back(std::move(p));
  }
  return {{"budget_s", r.budget_s}, {"seed", r.seed}, {"tasks", r.tasks}, {"planners", std::move(planners)}};
}

std::string report_table(const BenchmarkReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "Method" << std::right << std::setw(12) << "Success (%)" << std::setw(15)
      << "Collision (%)" << std::setw(12) << "Length" << std::setw(12) << "Time (s)" << "\n";
  out << std::fixed;
  for (const auto& s : r.planners) {
    out << std::left << std::setw(16) << s.name << std::right << std::setprecision(1) << std::setw(12)
        << 100.0 * s.success_rate << std::setw(15) << 100.0 * s.collision_rate << std::setprecision(3)
        << std::setw(12) << s.mean_length << std::setw(12) << s.mean_wall_time << "\n";
  }
  return out.str();
}

std::string report_curves_csv(const BenchmarkReport& r) {
  std::ostringstream out;
  out << "planner,time_s,success_rate\n";
  for (const auto& s : r.planners) {
    for (const auto& [t, v] : s.curve) out << s.name << "," << t << "," << v << "\n";
  }
  return out.str();
}

}  // namespace rdiff
