#include "rdiff/methods.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>

namespace rdiff {

namespace {

const std::vector<std::pair<Method, const char*>> kMethodNames = {{Method::rrt_star, "rrt_star"},
                                                                  {Method::informed, "informed"},
                                                                  {Method::shared_tree, "shared_tree"},
                                                                  {Method::diffusion, "diffusion"}};

Trajectory frames_for(const Path& path, const MethodContext& ctx) {
  const double arc = path_cost(path.waypoints);
  const int n = std::max(ctx.frames, static_cast<int>(std::ceil(arc / ctx.max_frame_step)) + 1);
  Trajectory t = resample_path(path, n);
  t.row(0) = path.waypoints.front().transpose();
  t.row(n - 1) = path.waypoints.back().transpose();
  return t;
}

}  // namespace

std::string method_name(Method m) {
  for (const auto& [k, v] : kMethodNames) {
    if (k == m) return v;
  }
  throw Error("unknown method");
}

Method parse_method(const std::string& s) {
  for (const auto& [k, v] : kMethodNames) {
    if (s == v) return k;
  }
  throw Error("unknown method '" + s + "' (expected rrt_star, informed, shared_tree or diffusion)");
}

nlohmann::json method_context_to_json(const MethodContext& c) {
  return {{"planner", planner_config_to_json(c.planner)},
          {"frames", c.frames},
          {"max_frame_step", c.max_frame_step},
          {"ik_solutions", c.ik_solutions},
          {"guidance", guidance_to_json(c.guidance)}};
}

MethodContext method_context_from_json(const nlohmann::json& j, MethodContext c) {
  if (j.contains("planner")) c.planner = planner_config_from_json(j["planner"], c.planner);
  c.frames = j.value("frames", c.frames);
  c.max_frame_step = j.value("max_frame_step", c.max_frame_step);
  c.ik_solutions = j.value("ik_solutions", c.ik_solutions);
  if (j.contains("guidance")) c.guidance = guidance_from_json(j["guidance"], c.guidance);
  if (c.frames < 2) throw Error("frames must be at least 2");
  if (!(c.max_frame_step > 0.0)) throw Error("max_frame_step must be positive");
  if (c.ik_solutions < 1) throw Error("ik_solutions must be at least 1");
  c.guidance.validate(c.frames);
  return c;
}

JointConfig parse_config(const std::string& csv) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const std::size_t comma = std::min(csv.find(',', pos), csv.size());
    const std::string item = csv.substr(pos, comma - pos);
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || end == item.c_str() || !std::all_of(static_cast<const char*>(end), item.c_str() + item.size(),
                                                         [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }) ||
        !std::isfinite(v)) {
      throw Error("cannot parse config '" + csv + "'");
    }
    values.push_back(v);
    pos = comma + 1;
  }
  return Eigen::Map<const JointConfig>(values.data(), static_cast<Eigen::Index>(values.size()));
}

PlanOutcome run_method(const RobotModel& model, const PlanRequest& req, const MethodContext& ctx) {
  const auto start = std::chrono::steady_clock::now();
  model.check_config(req.q_init);
  if (!model.within_limits(req.q_init)) throw Error("plan: q_init is outside the joint limits");
  if (!(req.budget_s > 0.0)) throw Error("plan: budget_s must be positive");
  req.scene.validate();

  GoalSet goals;
  if (req.goal_config) {
    model.check_config(*req.goal_config);
    if (!model.within_limits(*req.goal_config)) throw Error("plan: goal config is outside the joint limits");
    goals.configs.push_back(*req.goal_config);
  } else if (req.goal_pose) {
    const int n = req.method == Method::diffusion ? 1 : ctx.ik_solutions;
    goals = ik_solve(model, *req.goal_pose, n, req.seed, req.scene, ctx.planner.clearance);
  } else {
    throw Error("plan: a goal config or goal pose is required");
  }

  PlanOutcome out;
  auto finish = [&] {
    out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
  };
  for (const auto& g : goals.configs) {
    if (config_distance(g, req.q_init) == 0.0) {
      out.q_goal = g;
      out.trajectory.resize(2, model.dof());
      out.trajectory.row(0) = req.q_init.transpose();
      out.trajectory.row(1) = g.transpose();
      return finish();
    }
  }

  PlannerConfig pc = ctx.planner;
  pc.seed = req.seed;
  pc.time_budget = req.budget_s;
  switch (req.method) {
    case Method::rrt_star:
    case Method::informed: {
      const PlanResult r = req.method == Method::rrt_star ? plan_rrt_star(model, req.scene, req.q_init, goals, pc)
                                                          : plan_informed_rrt_star(model, req.scene, req.q_init, goals, pc);
      if (r.goal_index < 0 || r.path.waypoints.empty()) throw PlanningError("plan: no path found within the budget");
      out.q_goal = goals.configs[r.goal_index];
      out.trajectory = frames_for(r.path, ctx);
      break;
    }
    case Method::shared_tree: {
      const SharedTreeResult r = plan_shared_tree(model, req.scene, req.q_init, goals, pc);
      if (r.best_goal < 0) throw PlanningError("plan: no path found within the budget");
      out.q_goal = goals.configs[r.best_goal];
      out.trajectory = frames_for(r.paths.at(r.best_goal), ctx);
      break;
    }
    case Method::diffusion: {
      if (!ctx.diffusion || !ctx.cae) throw Error("plan: diffusion needs a trained model and encoder");
      if (ctx.diffusion->robot_name != model.name()) {
        throw Error("plan: diffusion model was trained for robot '" + ctx.diffusion->robot_name + "'");
      }
      if (ctx.diffusion->cae_checksum != ctx.cae->frozen_checksum()) {
        throw Error("plan: encoder checksum does not match the diffusion model");
      }
      out.q_goal = goals.configs.front();
      const SampleTask task{req.scene, make_condition(*ctx.cae, req.scene, req.q_init, out.q_goal)};
      SampleResult r = sample(*ctx.diffusion, model, task, ctx.guidance, req.seed);
      out.trajectory = std::move(r.trajectory);
      out.clamped = r.clamped;
      out.erratic_risk = r.erratic_risk;
      break;
    }
  }
  return finish();
}

BenchmarkPlanner method_planner(const RobotModel& model, Method method, const MethodContext& ctx) {
  return {method_name(method), [&model, method, ctx](const EvalTask& task, double budget_s, std::uint64_t seed) {
            PlanRequest req;
            req.scene = task.scene;
            req.q_init = task.q_init;
            req.goal_config = task.q_goal;
            req.method = method;
            req.seed = seed;
            req.budget_s = budget_s;
            PlanAttempt a;
            const auto start = std::chrono::steady_clock::now();
            try {
              PlanOutcome o = run_method(model, req, ctx);
              a.returned = true;
              a.trajectory = std::move(o.trajectory);
              a.wall_time = o.wall_time;
            } catch (const PlanningError& e) {
              a.error = e.what();
              a.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            }
            return a;
          }};
}

}  // namespace rdiff
