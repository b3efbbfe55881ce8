#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "rdiff/dataset.hpp"
#include "rdiff/evalbench.hpp"
#include "rdiff/methods.hpp"

using namespace rdiff;
using rdiff::test::panda;
using rdiff::test::planar;

namespace {

Scene open_scene() {
  Scene s;
  s.bounds.min = Vec3(-3, -3, -3);
  s.bounds.max = Vec3(3, 3, 3);
  return s;
}

Trajectory straight(const JointConfig& a, const JointConfig& b, int n) {
  Trajectory t(n, a.size());
  for (int i = 0; i < n; ++i) t.row(i) = (a + (b - a) * (static_cast<double>(i) / (n - 1))).transpose();
  return t;
}

JointConfig cfg(std::initializer_list<double> v) {
  JointConfig q(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) q(i++) = x;
  return q;
}

bool conjunction_holds(const MetricsRecord& m, const EvalThresholds& th) {
  const bool goal_ok = m.position_error <= th.pos_tol && m.orientation_error_deg <= th.ori_tol_deg;
  return m.success == (!m.collision && m.within_limits && !m.erratic && goal_ok) &&
         (!m.success || m.failure_reason == FailureReason::none);
}

Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

}  // namespace

TEST_CASE("clean straight trajectory succeeds") {
  const JointConfig a = test::two_sphere_start(), b = a + JointConfig::Constant(7, 0.3);
  const EvalTask task = make_task(panda(), open_scene(), a, b);
  const EvalThresholds th;
  const MetricsRecord m = evaluate(straight(a, b, 20), task, panda(), th, 1.5);
  CHECK(m.success);
  CHECK(m.failure_reason == FailureReason::none);
  CHECK_FALSE(m.collision);
  CHECK_FALSE(m.margin_warning);
  CHECK(m.wall_time == 1.5);
  CHECK(m.position_error < 1e-12);
  CHECK(m.max_joint_step == doctest::Approx(0.3 / 19));
  CHECK(conjunction_holds(m, th));
  const MetricsRecord again = evaluate(straight(a, b, 20), task, panda(), th, 1.5);
  CHECK(metrics_to_json(again) == metrics_to_json(m));
  CHECK(metrics_to_json(metrics_from_json(metrics_to_json(m))) == metrics_to_json(m));
}

TEST_CASE("penetration between frames is caught by densification") {
  const JointConfig a = cfg({0.0, 0.0}), b = cfg({1.0, 0.0});
  Scene s = open_scene();
  // Tip of the arm at the middle configuration; the two frames themselves stay clear.
  s.spheres.push_back({Vec3(2.0 * std::cos(0.5), 2.0 * std::sin(0.5), 0.0), 0.1});
  const EvalTask task = make_task(planar(), s, a, b);
  EvalThresholds th;
  th.max_joint_step = 2.0;
  const Trajectory two = straight(a, b, 2);
  CHECK(min_clearance(fk_points(planar(), a), s) > 0.0);
  CHECK(min_clearance(fk_points(planar(), b), s) > 0.0);
  const MetricsRecord m = evaluate(two, task, planar(), th);
  CHECK(m.collision);
  CHECK_FALSE(m.success);
  CHECK(m.failure_reason == FailureReason::collision);
  CHECK(m.min_clearance < 0.0);
  CHECK(conjunction_holds(m, th));
}

TEST_CASE("margin band is a warning, not a failure") {
  const JointConfig a = cfg({0.0, 0.0}), b = cfg({0.2, 0.0});
  Scene s = open_scene();
  s.spheres.push_back({Vec3(2.0 + 0.1 + 0.03, 0.0, 0.0), 0.1});
  const EvalTask task = make_task(planar(), s, a, b);
  const EvalThresholds th;
  const MetricsRecord m = evaluate(straight(a, b, 5), task, planar(), th);
  CHECK(m.success);
  CHECK(m.margin_warning);
  CHECK(m.min_clearance >= 0.0);
  CHECK(m.min_clearance < th.safe_distance);
}

TEST_CASE("goal tolerances") {
  const JointConfig a = test::two_sphere_start(), b = test::two_sphere_goal();
  const Trajectory traj = straight(a, b, 60);
  const EvalThresholds th;
  EvalTask task = make_task(panda(), open_scene(), a, b);
  const LinkPose exact = task.target;

  task.target.translation = exact.translation + Vec3(0.02, 0.0, 0.0);
  MetricsRecord m = evaluate(traj, task, panda(), th);
  CHECK(m.failure_reason == FailureReason::goal_miss);
  CHECK(m.position_error == doctest::Approx(0.02));
  CHECK(conjunction_holds(m, th));

  task.target.translation = exact.translation + Vec3(0.0, 0.005, 0.0);
  CHECK(evaluate(traj, task, panda(), th).success);

  task.target = exact;
  task.target.rotation = exact.rotation * rot_z(20.0 * M_PI / 180.0);
  m = evaluate(traj, task, panda(), th);
  CHECK(m.failure_reason == FailureReason::goal_miss);
  CHECK(m.orientation_error_deg == doctest::Approx(20.0));

  task.target.rotation = exact.rotation * rot_z(10.0 * M_PI / 180.0);
  CHECK(evaluate(traj, task, panda(), th).success);
}

TEST_CASE("limit and erratic violations") {
  const EvalThresholds th;
  const JointConfig a = cfg({0.0, 0.0}), b = cfg({1.0, 0.5});
  const EvalTask task = make_task(planar(), open_scene(), a, b);

  Trajectory jumpy = straight(a, b, 4);
  MetricsRecord m = evaluate(jumpy, task, planar(), th);
  CHECK(m.erratic);
  CHECK(m.failure_reason == FailureReason::erratic);
  CHECK(conjunction_holds(m, th));
  CHECK(evaluate(straight(a, b, 7), task, planar(), th).success);

  Trajectory out = straight(a, b, 20);
  out(10, 0) = 3.3;
  out(9, 0) = 3.2;
  out(11, 0) = 3.2;
  EvalThresholds loose = th;
  loose.max_joint_step = 10.0;
  m = evaluate(out, task, planar(), loose);
  CHECK_FALSE(m.within_limits);
  CHECK(m.failure_reason == FailureReason::limits);
  CHECK(conjunction_holds(m, loose));

  CHECK_THROWS_AS(evaluate(Trajectory(0, 2), task, planar(), th), DimensionError);
  CHECK_THROWS_AS(evaluate(Trajectory::Zero(3, 3), task, planar(), th), DimensionError);
  EvalThresholds bad = th;
  bad.pos_tol = 0.0;
  CHECK_THROWS_AS(evaluate(out, task, planar(), bad), Error);
  CHECK(th.pos_tol == 0.01);
  CHECK(th.ori_tol_deg == 15.0);
  CHECK(th.max_joint_step == 0.2);
}

TEST_CASE("path length against the chord-sum oracle") {
  CHECK(path_length(Trajectory::Constant(10, 7, 0.3), panda()) == 0.0);

  const int steps = 1000;
  Trajectory sweep(steps + 1, 2);
  for (int i = 0; i <= steps; ++i) sweep.row(i) << 0.5 * M_PI * i / steps, 0.0;
  // Link origins sit at radii 1 and 2; each step moves them along chords of angle pi/(2*steps).
  const double chord = 2.0 * std::sin(0.25 * M_PI / steps);
  const double oracle = steps * chord * (1.0 + 2.0);
  const double arc = 0.5 * M_PI * (1.0 + 2.0);
  const double length = path_length(sweep, planar());
  CHECK(length == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(std::abs(length - arc) / arc < 1e-3);

  std::mt19937_64 rng(3);
  Trajectory t(30, 7);
  for (int i = 0; i < 30; ++i) t.row(i) = test::random_config(panda(), rng).transpose();
  const Trajectory reversed = t.colwise().reverse();
  CHECK(path_length(reversed, panda()) == doctest::Approx(path_length(t, panda())).epsilon(1e-12));
  CHECK_THROWS_AS(path_length(Trajectory::Zero(3, 2), panda()), DimensionError);
}

TEST_CASE("benchmark harness with a straight-line planner") {
  std::vector<EvalTask> tasks;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 6; ++i) {
    Scene s = open_scene();
    const JointConfig a = test::random_config(panda(), rng);
    const JointConfig b = (a + JointConfig::Constant(7, 0.2)).cwiseMin(panda().upper());
    tasks.push_back(make_task(panda(), s, a, b, "t" + std::to_string(i)));
  }
  const BenchmarkPlanner straight_line{"straight", [](const EvalTask& t, double, std::uint64_t) {
                                         PlanAttempt a;
                                         a.returned = true;
                                         a.trajectory = straight(t.q_init, t.q_goal, 10);
                                         a.wall_time = 0.001;
                                         return a;
                                       }};
  const BenchmarkPlanner flaky{"flaky", [](const EvalTask& t, double, std::uint64_t) -> PlanAttempt {
                                 if (t.name == "t2") throw std::runtime_error("boom");
                                 PlanAttempt a;
                                 a.returned = true;
                                 a.trajectory = straight(t.q_init, t.q_goal, 10);
                                 a.wall_time = t.name == "t4" ? 5.0 : 0.5;
                                 return a;
                               }};
  const EvalThresholds th;
  const BenchmarkReport r = run_benchmark({straight_line, flaky}, tasks, 2.0, panda(), th, 11);
  REQUIRE(r.planners.size() == 2);
  const PlannerSummary& s = r.planners[0];
  CHECK(s.success_rate == 1.0);
  CHECK(s.collision_rate == 0.0);
  CHECK(s.attempts == 6);
  CHECK(s.mean_length > 0.0);
  CHECK(r.checkpoints.size() == 10);
  CHECK(s.curve.back().second == 1.0);

  const PlannerSummary& f = r.planners[1];
  CHECK(f.attempts == 6);
  CHECK(f.returned == 5);
  CHECK(f.successes == 4);
  CHECK(f.records[2].failure_reason == FailureReason::timeout);
  CHECK(f.records[2].error == "boom");
  CHECK(f.records[4].failure_reason == FailureReason::timeout);
  for (std::size_t i = 1; i < f.curve.size(); ++i) CHECK(f.curve[i].second >= f.curve[i - 1].second);
  CHECK(f.curve.front().second == 0.0);
  CHECK(f.curve.back().second == doctest::Approx(4.0 / 6.0));

  const BenchmarkReport again = run_benchmark({straight_line, flaky}, tasks, 2.0, panda(), th, 11);
  CHECK(report_to_json(again, false) == report_to_json(r, false));
  const BenchmarkReport parallel =
      run_benchmark({straight_line, flaky}, tasks, 2.0, panda(), th, 11, BenchmarkOptions{10, 3});
  CHECK(report_to_json(parallel, false) == report_to_json(r, false));
  CHECK(task_seed(11, 0) != task_seed(11, 1));
  CHECK(task_seed(11, 3) == task_seed(11, 3));

  const std::string table = report_table(r);
  CHECK(table.find("Success (%)") != std::string::npos);
  CHECK(table.find("Collision (%)") != std::string::npos);
  CHECK(table.find("straight") != std::string::npos);
  const std::string csv = report_curves_csv(r);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 10);
  CHECK(csv.rfind("planner,time_s,success_rate\n", 0) == 0);
  const auto j = report_to_json(r);
  CHECK(j["planners"][0]["curve"].size() == 10);
  CHECK(j["planners"][1]["collision_rate_returned"].is_number());

  CHECK_THROWS_AS(run_benchmark({}, tasks, 2.0, panda(), th, 1), Error);
  CHECK_THROWS_AS(run_benchmark({straight_line}, {}, 2.0, panda(), th, 1), Error);
}

TEST_CASE("planner methods through the benchmark adapter") {
  const auto records = generate_dataset(panda(), 4, DatasetConfig{}, 41).records;
  std::vector<EvalTask> tasks;
  for (std::size_t i = 0; i < records.size(); ++i) {
    tasks.push_back(make_task(panda(), records[i].scene, records[i].q_init, records[i].q_goal));
  }
  MethodContext ctx;
  ctx.planner.max_iters = 3000;
  ctx.planner.refine_iters = 200;
  ctx.planner.shortcut_passes = 50;
  const EvalThresholds th;
  const BenchmarkReport r = run_benchmark({method_planner(panda(), Method::rrt_star, ctx),
                                           method_planner(panda(), Method::shared_tree, ctx)},
                                          tasks, 30.0, panda(), th, 3);
  for (const auto& s : r.planners) {
    MESSAGE(s.name << " returned " << s.returned << " success " << s.success_rate);
    CHECK(s.returned > 0);
    CHECK(s.collisions_returned == 0);
    CHECK(s.collision_rate_returned == 0.0);
    for (const auto& m : s.records) {
      if (m.failure_reason == FailureReason::timeout) continue;
      CHECK(m.min_clearance >= th.safe_distance - 1e-9);
      CHECK_FALSE(m.erratic);
    }
  }
}

TEST_CASE("run_method requests") {
  MethodContext ctx;
  PlanRequest req;
  req.scene = test::two_sphere_scene();
  req.q_init = test::two_sphere_start();
  req.goal_config = test::two_sphere_start();
  const PlanOutcome trivial = run_method(panda(), req, ctx);
  CHECK(trivial.trajectory.rows() == 2);
  CHECK(trivial.trajectory.row(0) == req.q_init.transpose());
  CHECK(trivial.trajectory.row(1) == req.q_init.transpose());

  req.method = Method::diffusion;
  req.goal_config = test::two_sphere_goal();
  CHECK_THROWS_AS(run_method(panda(), req, ctx), Error);
  req.goal_config.reset();
  CHECK_THROWS_AS(run_method(panda(), req, ctx), Error);
  req.goal_config = JointConfig::Zero(3);
  CHECK_THROWS_AS(run_method(panda(), req, ctx), DimensionError);

  req.method = Method::shared_tree;
  req.goal_config.reset();
  req.goal_pose = end_effector_pose(panda(), test::two_sphere_start() + JointConfig::Constant(7, 0.15));
  ctx.planner.max_iters = 4000;
  ctx.planner.refine_iters = 100;
  ctx.planner.shortcut_passes = 50;
  const PlanOutcome o = run_method(panda(), req, ctx);
  CHECK(o.trajectory.row(0) == req.q_init.transpose());
  CHECK(o.trajectory.row(o.trajectory.rows() - 1) == o.q_goal.transpose());
  CHECK(o.trajectory.rows() >= ctx.frames);
  const MetricsRecord m = evaluate(o.trajectory, make_task(panda(), req.scene, req.q_init, o.q_goal), panda(),
                                   EvalThresholds{});
  CHECK(m.success);
  CHECK(m.min_clearance >= kDefaultSafeDistance - 1e-9);

  CHECK(parse_method("informed") == Method::informed);
  CHECK(method_name(Method::diffusion) == "diffusion");
  CHECK_THROWS_AS(parse_method("astar"), Error);
  CHECK(parse_failure_reason("goal_miss") == FailureReason::goal_miss);
  CHECK_THROWS_AS(parse_failure_reason("nope"), Error);
}
