#include "rdiff/planner.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <numeric>
#include <random>

namespace rdiff {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

JointConfig sample_uniform(const JointConfig& lo, const JointConfig& hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  JointConfig q(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) q(i) = lo(i) + (hi(i) - lo(i)) * unit(rng);
  return q;
}

JointConfig sample_unit_ball(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  JointConfig v(dim);
  do {
    for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  } while (v.norm() < 1e-12);
  return v.normalized() * std::pow(unit(rng), 1.0 / dim);
}

/// Prolate hyperellipsoid with foci a, b; Householder maps e1 onto the focal axis.
class InformedSampler {
 public:
  InformedSampler(const JointConfig& a, const JointConfig& b) : center_((a + b) / 2.0) {
    c_min_ = config_distance(a, b);
    const int dim = static_cast<int>(a.size());
    axis_ = c_min_ > 0.0 ? JointConfig((b - a) / c_min_) : JointConfig(JointConfig::Unit(dim, 0));
  }

  JointConfig sample(double c_best, std::mt19937_64& rng) const {
    const int dim = static_cast<int>(center_.size());
    JointConfig x = sample_unit_ball(dim, rng);
    const double r1 = c_best / 2.0;
    const double rn = std::sqrt(std::max(0.0, c_best * c_best - c_min_ * c_min_)) / 2.0;
    x(0) *= r1;
    x.tail(dim - 1) *= rn;
    // H = I - 2 v v^T / |v|^2 with v = e1 - axis.
    JointConfig v = -axis_;
    v(0) += 1.0;
    const double vn2 = v.squaredNorm();
    if (vn2 > 1e-24) x -= v * (2.0 * v.dot(x) / vn2);
    return center_ + x;
  }

 private:
  JointConfig center_;
  JointConfig axis_;
  double c_min_ = 0.0;
};

enum class SamplingMode { kUniform, kInformed };

struct TreeNode {
  int parent = -1;
  double cost = 0.0;
  int goal = -1;
  std::vector<int> children;
};

class TreeGrower {
 public:
  TreeGrower(const RobotModel& model, const Scene& scene, const JointConfig& q_init,
             const GoalSet& goals, const PlannerConfig& cfg, SamplingMode mode,
             const SampleObserver& observer)
      : model_(model),
        checker_(model, scene, cfg.clearance, cfg.edge_step),
        q_init_(q_init),
        goals_(goals),
        cfg_(cfg),
        mode_(mode),
        observer_(observer),
        rng_(cfg.seed),
        lo_(model.lower()),
        hi_(model.upper()),
        goal_node_(goals.configs.size(), -1) {
    cfg.validate();
    model.check_config(q_init);
    if (goals.configs.empty()) throw PlanningError("planner: goal set is empty");
    for (const auto& g : goals.configs) model.check_config(g);
    for (const auto& g : goals.configs) samplers_.emplace_back(q_init, g);
    gamma_ = cfg.gamma_for(model.dof());
  }

  void run() {
    const auto t0 = std::chrono::steady_clock::now();
    stats_.tree_builds = 1;
    if (!checker_.valid(q_init_)) {
      throw PlanningError("planner: start configuration is in collision or violates limits");
    }
    configs_.resize(model_.dof(), 1024);
    add_node(q_init_, -1, 0.0);

    int all_connected_at = -1;
    for (int iter = 0; iter < cfg_.max_iters; ++iter) {
      if ((iter & 63) == 0 && elapsed(t0) > cfg_.time_budget) break;
      step();
      stats_.iterations = iter + 1;
      stats_.best_cost.push_back(best_cost());
      if (all_connected_at < 0 &&
          std::all_of(goal_node_.begin(), goal_node_.end(), [](int n) { return n >= 0; })) {
        all_connected_at = iter;
      }
      if (all_connected_at >= 0 && cfg_.refine_iters >= 0 &&
          iter - all_connected_at >= cfg_.refine_iters) {
        break;
      }
    }
    stats_.collision_checks = static_cast<int>(checker_.checks());
    stats_.wall_time = elapsed(t0);
  }

  double best_cost(int* which = nullptr) const {
    double best = kInf;
    for (std::size_t g = 0; g < goal_node_.size(); ++g) {
      if (goal_node_[g] >= 0 && nodes_[goal_node_[g]].cost < best) {
        best = nodes_[goal_node_[g]].cost;
        if (which) *which = static_cast<int>(g);
      }
    }
    return best;
  }

  bool connected(int goal) const { return goal_node_[goal] >= 0; }

  Path extract(int goal) const {
    Path path;
    for (int n = goal_node_[goal]; n >= 0; n = nodes_[n].parent) {
      path.waypoints.push_back(configs_.col(n));
    }
    std::reverse(path.waypoints.begin(), path.waypoints.end());
    path.cost = path_cost(path.waypoints);
    return path;
  }

  const CollisionChecker& checker() const { return checker_; }
  PlanStats& stats() { return stats_; }

 private:
  static double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  int add_node(const JointConfig& q, int parent, double cost) {
    const int id = static_cast<int>(nodes_.size());
    if (id >= configs_.cols()) configs_.conservativeResize(Eigen::NoChange, configs_.cols() * 2);
    configs_.col(id) = q;
    TreeNode node;
    node.parent = parent;
    node.cost = cost;
    nodes_.push_back(std::move(node));
    if (parent >= 0) nodes_[parent].children.push_back(id);
    ++stats_.expansions;
    return id;
  }

  JointConfig draw_sample() {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<int> unreached;
    for (std::size_t g = 0; g < goal_node_.size(); ++g) {
      if (goal_node_[g] < 0) unreached.push_back(static_cast<int>(g));
    }
    if (!unreached.empty() && unit(rng_) < cfg_.goal_bias) {
      const int g = unreached[goal_cursor_++ % unreached.size()];
      return goals_.configs[g];
    }
    int focus = -1;
    const double c_best = best_cost(&focus);
    // Unreached goals may lie outside the focused ellipsoid, so half of the
    // free samples stay uniform until every goal is connected.
    const bool focus_only = unreached.empty() || unit(rng_) < 0.5;
    if (mode_ == SamplingMode::kInformed && focus >= 0 && focus_only) {
      for (int attempt = 0; attempt < 256; ++attempt) {
        JointConfig s = samplers_[focus].sample(c_best, rng_);
        if (model_.within_limits(s)) {
          if (observer_) observer_(s, true, focus, c_best);
          return s;
        }
      }
      return {};
    }
    JointConfig s = sample_uniform(lo_, hi_, rng_);
    if (observer_) observer_(s, false, -1, c_best);
    return s;
  }

  void step() {
    const JointConfig sample = draw_sample();
    if (sample.size() == 0) return;
    const int n = static_cast<int>(nodes_.size());
    const auto block = configs_.leftCols(n);
    Eigen::VectorXd d2 = (block.colwise() - sample).colwise().squaredNorm().transpose();
    Eigen::Index nearest;
    const double dist_nearest = std::sqrt(d2.minCoeff(&nearest));
    if (dist_nearest < 1e-12) return;

    JointConfig q_new = sample;
    if (dist_nearest > cfg_.step_size) {
      q_new = configs_.col(nearest) + (sample - configs_.col(nearest)) * (cfg_.step_size / dist_nearest);
    }
    if (!checker_.valid(q_new) || !checker_.edge_valid(configs_.col(nearest), q_new)) return;

    const double radius = std::min(
        4.0 * cfg_.step_size,
        gamma_ * std::pow(std::log(n + 1.0) / (n + 1.0), 1.0 / model_.dof()));
    d2 = (block.colwise() - q_new).colwise().squaredNorm().transpose();
    std::vector<int> near;
    for (int i = 0; i < n; ++i) {
      if (d2(i) <= radius * radius) near.push_back(i);
    }
    if (std::find(near.begin(), near.end(), static_cast<int>(nearest)) == near.end()) {
      near.push_back(static_cast<int>(nearest));
    }

    // Choose parent: cheapest candidate whose edge is feasible.
    std::vector<std::pair<double, int>> candidates;
    for (int i : near) candidates.emplace_back(nodes_[i].cost + std::sqrt(d2(i)), i);
    std::sort(candidates.begin(), candidates.end());
    int parent = -1;
    double cost = kInf;
    for (const auto& [c, i] : candidates) {
      if (i == nearest || checker_.edge_valid(configs_.col(i), q_new)) {
        parent = i;
        cost = c;
        break;
      }
    }
    if (parent < 0) return;
    const int id = add_node(q_new, parent, cost);

    for (int i : near) {
      if (i == parent) continue;
      const double c = cost + std::sqrt(d2(i));
      if (c < nodes_[i].cost - 1e-12 && checker_.edge_valid(q_new, configs_.col(i))) {
        reparent(i, id, c);
      }
    }

    for (std::size_t g = 0; g < goals_.configs.size(); ++g) {
      const JointConfig& goal = goals_.configs[g];
      const double dg = config_distance(q_new, goal);
      if (goal_node_[g] >= 0) {
        const int gn = goal_node_[g];
        if (gn != id && cost + dg < nodes_[gn].cost - 1e-12 && dg <= radius &&
            checker_.edge_valid(q_new, goal)) {
          reparent(gn, id, cost + dg);
        }
        continue;
      }
      if (dg < 1e-12) {
        goal_node_[g] = id;
        nodes_[id].goal = static_cast<int>(g);
      } else if (dg <= cfg_.step_size && checker_.edge_valid(q_new, goal)) {
        const int gn = add_node(goal, id, cost + dg);
        goal_node_[g] = gn;
        nodes_[gn].goal = static_cast<int>(g);
      }
    }
  }

  void reparent(int node, int new_parent, double new_cost) {
    auto& siblings = nodes_[nodes_[node].parent].children;
    siblings.erase(std::find(siblings.begin(), siblings.end(), node));
    nodes_[node].parent = new_parent;
    nodes_[new_parent].children.push_back(node);
    const double delta = new_cost - nodes_[node].cost;
    std::vector<int> stack{node};
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      nodes_[cur].cost += delta;
      for (int c : nodes_[cur].children) stack.push_back(c);
    }
  }

  const RobotModel& model_;
  CollisionChecker checker_;
  JointConfig q_init_;
  const GoalSet& goals_;
  PlannerConfig cfg_;
  SamplingMode mode_;
  const SampleObserver& observer_;
  std::mt19937_64 rng_;
  JointConfig lo_, hi_;
  double gamma_ = 1.0;

  Eigen::MatrixXd configs_;
  std::vector<TreeNode> nodes_;
  std::vector<int> goal_node_;
  std::vector<InformedSampler> samplers_;
  std::size_t goal_cursor_ = 0;
  PlanStats stats_;
};

int trivial_goal(const JointConfig& q_init, const GoalSet& goals) {
  for (std::size_t g = 0; g < goals.configs.size(); ++g) {
    if (goals.configs[g].size() == q_init.size() && config_distance(goals.configs[g], q_init) < 1e-12) {
      return static_cast<int>(g);
    }
  }
  return -1;
}

PlanResult plan_single(const RobotModel& model, const Scene& scene, const JointConfig& q_init,
                       const GoalSet& goals, const PlannerConfig& cfg, SamplingMode mode,
                       const SampleObserver& observer) {
  PlanResult result;
  if (const int g = trivial_goal(q_init, goals); g >= 0) {
    CollisionChecker checker(model, scene, cfg.clearance, cfg.edge_step);
    if (!checker.valid(q_init)) throw PlanningError("planner: start configuration is in collision");
    result.path.waypoints = {q_init, goals.configs[g]};
    result.goal_index = g;
    result.stats.tree_builds = 1;
    result.stats.best_cost = {0.0};
    return result;
  }
  TreeGrower tree(model, scene, q_init, goals, cfg, mode, observer);
  tree.run();
  int best = -1;
  if (!std::isfinite(tree.best_cost(&best))) {
    throw PlanningError("planner: no solution within " + std::to_string(cfg.max_iters) +
                        " iterations / " + std::to_string(cfg.time_budget) + " s");
  }
  result.path = shortcut_path(tree.extract(best), tree.checker(), cfg.shortcut_passes, cfg.seed);
  result.goal_index = best;
  result.stats = tree.stats();
  return result;
}

}  // namespace

void PlannerConfig::validate() const {
  if (!(step_size > 0.0)) throw Error("planner config: step_size must be > 0");
  if (!(goal_bias >= 0.0 && goal_bias <= 1.0)) throw Error("planner config: goal_bias must lie in [0,1]");
  if (max_iters < 1) throw Error("planner config: max_iters must be >= 1");
  if (!(edge_step > 0.0)) throw Error("planner config: edge_step must be > 0");
  if (!(clearance >= 0.0)) throw Error("planner config: clearance must be >= 0");
}

nlohmann::json planner_config_to_json(const PlannerConfig& c) {
  return {{"step_size", c.step_size},         {"goal_bias", c.goal_bias},
          {"max_iters", c.max_iters},         {"rewire_gamma", c.rewire_gamma},
          {"clearance", c.clearance},         {"time_budget", c.time_budget},
          {"seed", c.seed},                   {"shortcut_passes", c.shortcut_passes},
          {"refine_iters", c.refine_iters},   {"edge_step", c.edge_step}};
}

PlannerConfig planner_config_from_json(const nlohmann::json& j, PlannerConfig c) {
  c.step_size = j.value("step_size", c.step_size);
  c.goal_bias = j.value("goal_bias", c.goal_bias);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.rewire_gamma = j.value("rewire_gamma", c.rewire_gamma);
  c.clearance = j.value("clearance", c.clearance);
  c.time_budget = j.value("time_budget", c.time_budget);
  c.seed = j.value("seed", c.seed);
  c.shortcut_passes = j.value("shortcut_passes", c.shortcut_passes);
  c.refine_iters = j.value("refine_iters", c.refine_iters);
  c.edge_step = j.value("edge_step", c.edge_step);
  c.validate();
  return c;
}

double PlannerConfig::gamma_for(int dof) const {
  if (rewire_gamma > 0.0) return rewire_gamma;
  return 0.6 / std::pow(std::log(1000.0) / 1000.0, 1.0 / dof);
}

CollisionChecker::CollisionChecker(const RobotModel& model, const Scene& scene, double clearance,
                                   double edge_step)
    : model_(model), scene_(scene), clearance_(clearance), edge_step_(edge_step) {}

double CollisionChecker::clearance(const JointConfig& q) const {
  return min_clearance(fk_points(model_, q), scene_);
}

bool CollisionChecker::valid(const JointConfig& q) const {
  ++checks_;
  if (!model_.within_limits(q)) return false;
  if (scene_.spheres.empty()) return true;
  return clearance(q) >= clearance_;
}

bool CollisionChecker::edge_valid(const JointConfig& from, const JointConfig& to) const {
  const JointConfig delta = to - from;
  const int steps = std::max(1, static_cast<int>(std::ceil(delta.cwiseAbs().maxCoeff() / edge_step_)));
  for (int s = 1; s <= steps; ++s) {
    const JointConfig q = s == steps ? to : JointConfig(from + delta * (static_cast<double>(s) / steps));
    if (!valid(q)) return false;
  }
  return true;
}

double config_distance(const JointConfig& a, const JointConfig& b) { return (a - b).norm(); }

double path_cost(const std::vector<JointConfig>& waypoints) {
  double c = 0.0;
  for (std::size_t i = 1; i < waypoints.size(); ++i) c += config_distance(waypoints[i - 1], waypoints[i]);
  return c;
}

double trajectory_arc_length(const Trajectory& traj) {
  double c = 0.0;
  for (Eigen::Index i = 1; i < traj.rows(); ++i) c += (traj.row(i) - traj.row(i - 1)).norm();
  return c;
}

Trajectory densify(const Trajectory& frames, double max_step) {
  if (frames.rows() < 2) return frames;
  std::vector<Eigen::RowVectorXd> rows{frames.row(0)};
  for (Eigen::Index i = 1; i < frames.rows(); ++i) {
    const Eigen::RowVectorXd delta = frames.row(i) - frames.row(i - 1);
    const int steps = std::max(1, static_cast<int>(std::ceil(delta.cwiseAbs().maxCoeff() / max_step)));
    for (int s = 1; s < steps; ++s) rows.push_back(frames.row(i - 1) + delta * (static_cast<double>(s) / steps));
    rows.push_back(frames.row(i));
  }
  Trajectory out(rows.size(), frames.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = rows[i];
  return out;
}

Trajectory densify(const std::vector<JointConfig>& waypoints, double max_step) {
  if (waypoints.empty()) return {};
  Trajectory frames(waypoints.size(), waypoints.front().size());
  for (std::size_t i = 0; i < waypoints.size(); ++i) frames.row(i) = waypoints[i].transpose();
  return densify(frames, max_step);
}

GoalSet ik_solve(const RobotModel& model, const LinkPose& target, int n, std::uint64_t seed,
                 const Scene& scene, double clearance, const IkOptions& options) {
  if (n < 1) throw Error("ik_solve: n must be at least 1");
  std::mt19937_64 rng(seed);
  const JointConfig lo = model.lower(), hi = model.upper();
  const CollisionChecker checker(model, scene, clearance);
  const double lambda2 = options.damping * options.damping;
  GoalSet out;
  const int attempts = options.restarts_per_solution * n;
  for (int attempt = 0; attempt < attempts && static_cast<int>(out.configs.size()) < n; ++attempt) {
    JointConfig q = sample_uniform(lo, hi, rng);
    double pos_err = kInf, ori_err = kInf;
    for (int it = 0; it < options.max_iterations; ++it) {
      const LinkPose pose = end_effector_pose(model, q);
      Eigen::Matrix<double, 6, 1> err;
      err.head<3>() = target.translation - pose.translation;
      const Eigen::AngleAxisd aa(Mat3(target.rotation * pose.rotation.transpose()));
      err.tail<3>() = aa.angle() * aa.axis();
      pos_err = err.head<3>().norm();
      ori_err = std::abs(aa.angle());
      if (pos_err < 0.05 * options.position_tolerance && ori_err < 0.05 * options.orientation_tolerance) break;
      const auto jac = end_effector_jacobian(model, q);
      const Eigen::Matrix<double, 6, 6> jjt =
          jac * jac.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
      JointConfig dq = jac.transpose() * jjt.ldlt().solve(err);
      const double norm = dq.norm();
      if (norm > 0.3) dq *= 0.3 / norm;
      q = (q + dq).cwiseMax(lo).cwiseMin(hi);
    }
    const LinkPose pose = end_effector_pose(model, q);
    pos_err = (pose.translation - target.translation).norm();
    ori_err = rotation_distance(pose.rotation, target.rotation);
    if (pos_err >= options.position_tolerance || ori_err >= options.orientation_tolerance) continue;
    if (!checker.valid(q)) continue;
    const bool duplicate = std::any_of(out.configs.begin(), out.configs.end(), [&](const JointConfig& o) {
      return (o - q).cwiseAbs().maxCoeff() < options.duplicate_tolerance;
    });
    if (!duplicate) out.configs.push_back(q);
  }
  if (out.configs.empty()) {
    throw PlanningError("ik_solve: target unreachable after " + std::to_string(attempts) + " restarts");
  }
  return out;
}

PlanResult plan_rrt_star(const RobotModel& model, const Scene& scene, const JointConfig& q_init,
                         const GoalSet& goals, const PlannerConfig& cfg, const SampleObserver& observer) {
  return plan_single(model, scene, q_init, goals, cfg, SamplingMode::kUniform, observer);
}

PlanResult plan_informed_rrt_star(const RobotModel& model, const Scene& scene,
                                  const JointConfig& q_init, const GoalSet& goals,
                                  const PlannerConfig& cfg, const SampleObserver& observer) {
  return plan_single(model, scene, q_init, goals, cfg, SamplingMode::kInformed, observer);
}

SharedTreeResult plan_shared_tree(const RobotModel& model, const Scene& scene,
                                  const JointConfig& q_init, const GoalSet& goals,
                                  const PlannerConfig& cfg, const SampleObserver& observer) {
  SharedTreeResult result;
  if (goals.configs.empty()) throw PlanningError("plan_shared_tree: goal set is empty");
  if (const int g = trivial_goal(q_init, goals); g >= 0) {
    const PlanResult single = plan_single(model, scene, q_init, goals, cfg, SamplingMode::kInformed, observer);
    result.paths[g] = single.path;
    result.best_goal = g;
    result.stats = single.stats;
    return result;
  }
  TreeGrower tree(model, scene, q_init, goals, cfg, SamplingMode::kInformed, observer);
  tree.run();
  double best = kInf;
  for (std::size_t g = 0; g < goals.configs.size(); ++g) {
    if (!tree.connected(static_cast<int>(g))) continue;
    Path p = shortcut_path(tree.extract(static_cast<int>(g)), tree.checker(), cfg.shortcut_passes,
                           cfg.seed + g);
    if (p.cost < best) {
      best = p.cost;
      result.best_goal = static_cast<int>(g);
    }
    result.paths.emplace(static_cast<int>(g), std::move(p));
  }
  if (result.paths.empty()) {
    throw PlanningError("plan_shared_tree: no goal reached within " + std::to_string(cfg.max_iters) +
                        " iterations / " + std::to_string(cfg.time_budget) + " s");
  }
  result.stats = tree.stats();
  return result;
}

Path shortcut_path(const Path& path, const CollisionChecker& checker, int passes, std::uint64_t seed) {
  Path out = path;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int pass = 0; pass < passes && out.waypoints.size() > 2; ++pass) {
    std::uniform_int_distribution<std::size_t> pick(0, out.waypoints.size() - 1);
    std::size_t i = pick(rng), j = pick(rng);
    if (i > j) std::swap(i, j);
    if (j < i + 2) continue;
    if (!checker.edge_valid(out.waypoints[i], out.waypoints[j])) continue;
    out.waypoints.erase(out.waypoints.begin() + static_cast<std::ptrdiff_t>(i) + 1,
                        out.waypoints.begin() + static_cast<std::ptrdiff_t>(j));
  }
  out.cost = path_cost(out.waypoints);
  return out;
}

Trajectory resample_path(const Path& path, int n) {
  if (n < 2) throw Error("resample_path: n must be at least 2");
  if (path.waypoints.empty()) throw Error("resample_path: empty path");
  const auto& w = path.waypoints;
  const Eigen::Index dof = w.front().size();
  Trajectory out(n, dof);
  std::vector<double> cum(w.size(), 0.0);
  for (std::size_t i = 1; i < w.size(); ++i) cum[i] = cum[i - 1] + config_distance(w[i - 1], w[i]);
  const double total = cum.back();
  if (total <= 0.0) {
    for (int k = 0; k < n; ++k) out.row(k) = w.front().transpose();
    return out;
  }
  std::size_t seg = 1;
  for (int k = 0; k < n; ++k) {
    const double s = total * k / (n - 1);
    while (seg + 1 < w.size() && cum[seg] < s) ++seg;
    const double len = cum[seg] - cum[seg - 1];
    const double u = len > 0.0 ? std::clamp((s - cum[seg - 1]) / len, 0.0, 1.0) : 1.0;
    out.row(k) = (w[seg - 1] + (w[seg] - w[seg - 1]) * u).transpose();
  }
  out.row(0) = w.front().transpose();
  out.row(n - 1) = w.back().transpose();
  return out;
}

}  // namespace rdiff
