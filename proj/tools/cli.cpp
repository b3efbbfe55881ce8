#include "rdiff/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "rdiff/dataset.hpp"
#include "rdiff/service.hpp"

namespace rdiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vec_json(const JointConfig& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

JointConfig json_vec(const json& j, const std::string& what) {
  if (!j.is_array()) throw LoadError(what + " must be an array of numbers");
  JointConfig v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw Error(what + " path is required");
  if (!fs::is_regular_file(path)) throw LoadError(what + " not found: " + path);
}

void prepare_output(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const PlanningError*>(&e)) return "planning_error";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension_error";
  if (dynamic_cast<const LoadError*>(&e)) return "load_error";
  if (dynamic_cast<const Error*>(&e)) return "error";
  return "internal_error";
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

NoiseSchedule schedule_from_config(const json& j) {
  return NoiseSchedule::linear(j.value("T", 200), j.value("beta_1", 1e-4), j.value("beta_T", 0.02));
}

std::vector<Method> parse_methods(const std::string& csv) {
  std::vector<Method> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_method(item));
  }
  if (out.empty()) throw Error("no methods given");
  return out;
}

LinkPose parse_pose(const std::string& csv) {
  const JointConfig v = parse_config(csv);
  if (v.size() != 7) throw Error("goal pose needs x,y,z,qw,qx,qy,qz");
  Eigen::Quaterniond q(v(3), v(4), v(5), v(6));
  if (q.norm() < 1e-9) throw Error("goal pose quaternion must be non-zero");
  LinkPose p;
  p.translation = v.head<3>();
  p.rotation = q.normalized().toRotationMatrix();
  return p;
}

/// Loaded diffusion model and encoder for commands that accept --model/--cae.
struct LoadedModels {
  std::optional<DiffusionModel> diffusion;
  std::optional<CaeModel> cae;

  void attach(MethodContext& ctx) const {
    ctx.diffusion = diffusion ? &*diffusion : nullptr;
    ctx.cae = cae ? &*cae : nullptr;
  }
};

LoadedModels load_models(const std::string& model_path, const std::string& cae_path, bool required) {
  LoadedModels m;
  if (model_path.empty() && cae_path.empty() && !required) return m;
  require_file(model_path, "diffusion model");
  require_file(cae_path, "encoder");
  m.diffusion = DiffusionModel::load(model_path);
  m.cae = CaeModel::load(cae_path);
  if (!m.cae->frozen()) m.cae->freeze();
  if (m.diffusion->cae_checksum != m.cae->frozen_checksum()) {
    throw LoadError("encoder " + cae_path + " does not match the encoder the diffusion model was trained with");
  }
  return m;
}

struct Cli {
  Cli(std::ostream& o, std::ostream& e) : out(o), err(e) {}

  std::ostream& out;
  std::ostream& err;
  std::string config_path;
  std::string error_log;
  json cfg;

  std::string robot_path;
  std::string method;
  std::string scene;
  std::string start;
  std::string goal;
  std::string goal_pose;
  std::string model;
  std::string cae;
  std::string dataset;
  std::string output;
  std::string tasks;
  std::string trajectory;
  std::string bind;
  std::string job_log;
  std::uint64_t seed = 0;
  int n = 0;
  int steps = 0;
  int workers = 0;
  int layers = 0;
  int width = 0;
  int heads = 0;
  int batch = 0;
  int limit = 0;
  int port = 0;
  int log_every = 0;
  double budget = 0.0;

  RobotModel robot() const {
    return load_robot(robot_path.empty() ? cfg.at("robot").get<std::string>() : robot_path);
  }
  MethodContext method_context() const { return method_context_from_json(cfg.at("methods")); }
  EvalThresholds thresholds() const { return thresholds_from_json(cfg.at("eval")); }

  int gen_dataset(const CLI::App& sub);
  int train_cae_cmd(const CLI::App& sub);
  int train_diffusion_cmd(const CLI::App& sub);
  int plan(const CLI::App& sub);
  int eval(const CLI::App& sub);
  int bench(const CLI::App& sub);
  int serve(const CLI::App& sub);
};

int Cli::gen_dataset(const CLI::App& sub) {
  const json& dj = cfg.at("dataset");
  DatasetConfig dc = dataset_config_from_json(dj);
  if (sub.count("--workers")) dc.workers = workers;
  const int records = sub.count("--n") ? n : dj.value("n", 2000);
  const std::uint64_t s = sub.count("--seed") ? seed : dj.value("seed", std::uint64_t{0});
  if (records < 1) throw Error("gen-dataset: --n must be positive");
  const RobotModel model = robot();
  prepare_output(output);
  const Dataset ds = generate_dataset(model, records, dc, s);
  write_dataset(ds, output);
  out << manifest_to_json(ds.manifest).dump(2) << "\n";
  return 0;
}

int Cli::train_cae_cmd(const CLI::App& sub) {
  require_file(dataset, "dataset");
  CaeConfig cc = cae_config_from_json(cfg.at("cae"));
  if (sub.count("--steps")) cc.steps = steps;
  if (sub.count("--seed")) cc.seed = seed;
  if (sub.count("--batch")) cc.batch = batch;
  cc.validate();
  const Dataset ds = read_dataset(dataset);
  if (ds.records.empty()) throw Error("train-cae: dataset has no records");
  std::vector<ObstaclePointCloud> clouds;
  clouds.reserve(ds.records.size());
  for (const DatasetRecord& r : ds.records) clouds.push_back(sample_point_cloud(r.scene, cc.num_points(), kEncodeCloudSeed));
  CaeTrainLog log;
  const CaeModel m = train_cae(cc, clouds, &log);
  prepare_output(output);
  m.save(output);
  out << json{{"output", output},
              {"steps", cc.steps},
              {"loss_first", log.losses.empty() ? 0.0 : log.losses.front()},
              {"loss_last", log.losses.empty() ? 0.0 : log.losses.back()},
              {"checksum", m.frozen_checksum()}}
             .dump(2)
      << "\n";
  return 0;
}

int Cli::train_diffusion_cmd(const CLI::App& sub) {
  require_file(dataset, "dataset");
  require_file(cae, "encoder");
  const json& dj = cfg.at("diffusion");
  DenoiserConfig den = denoiser_config_from_json(dj.at("denoiser"));
  if (sub.count("--layers")) den.layers = layers;
  if (sub.count("--width")) den.width = width;
  if (sub.count("--heads")) den.heads = heads;
  DiffusionTrainConfig tc = train_config_from_json(dj.at("train"));
  if (sub.count("--steps")) tc.steps = steps;
  if (sub.count("--seed")) tc.seed = seed;
  if (sub.count("--batch")) tc.batch = batch;
  const RobotModel model = robot();
  den.dof = model.dof();
  den.validate();
  tc.validate();
  const NoiseSchedule schedule = schedule_from_config(dj.at("schedule"));
  const Dataset ds = read_dataset(dataset, &model);
  if (ds.records.empty()) throw Error("train-diffusion: dataset has no records");
  CaeModel encoder = CaeModel::load(cae);
  if (!encoder.frozen()) encoder.freeze();
  if (den.latent_dim != encoder.config().latent_dim) den.latent_dim = encoder.config().latent_dim;
  DiffusionTrainLog log;
  const auto t0 = std::chrono::steady_clock::now();
  const DiffusionModel m = train_diffusion(tc, den, schedule, ds.records, encoder, model, &log, [&](int step, double loss) {
    if (log_every > 0 && step % log_every == 0) {
      const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      err << "step " << step << " loss " << loss << " elapsed " << t << " s\n";
    }
  });
  prepare_output(output);
  m.save(output);
  out << json{{"output", output},
              {"sidecar", DiffusionModel::sidecar_path(output)},
              {"steps", tc.steps},
              {"loss_first", log.loss.empty() ? 0.0 : log.loss.front()},
              {"loss_last", log.loss.empty() ? 0.0 : log.loss.back()}}
             .dump(2)
      << "\n";
  return 0;
}

int Cli::plan(const CLI::App& sub) {
  require_file(scene, "scene");
  const json& pj = cfg.at("plan");
  const RobotModel model = robot();
  PlanRequest req;
  req.scene = load_scene(scene);
  req.q_init = parse_config(start);
  model.check_config(req.q_init);
  if (goal.empty() == goal_pose.empty()) throw Error("plan: give exactly one of --goal, --goal-pose");
  if (!goal.empty()) {
    req.goal_config = parse_config(goal);
    model.check_config(*req.goal_config);
  } else {
    req.goal_pose = parse_pose(goal_pose);
  }
  req.method = parse_method(sub.count("--method") ? method : pj.value("method", std::string("shared_tree")));
  req.seed = sub.count("--seed") ? seed : pj.value("seed", std::uint64_t{0});
  req.budget_s = sub.count("--budget") ? budget : pj.value("budget_s", 60.0);

  MethodContext ctx = method_context();
  const LoadedModels models = load_models(this->model, cae, req.method == Method::diffusion);
  models.attach(ctx);
  const PlanOutcome o = run_method(model, req, ctx);

  EvalTask task = make_task(model, req.scene, req.q_init, o.q_goal, "plan");
  if (req.goal_pose) task.target = *req.goal_pose;
  const MetricsRecord m = evaluate(o.trajectory, task, model, thresholds(), o.wall_time);

  prepare_output(output);
  write_trajectory_file({model.name(), method_name(req.method), req.seed, req.q_init, o.q_goal, o.trajectory}, output);
  json report = metrics_to_json(m);
  report["trajectory_file"] = output;
  report["frames"] = o.trajectory.rows();
  out << report.dump(2) << "\n";
  return 0;
}

int Cli::eval(const CLI::App&) {
  require_file(trajectory, "trajectory");
  require_file(scene, "scene");
  const RobotModel model = robot();
  const TrajectoryFile t = read_trajectory_file(trajectory);
  if (t.robot != model.name()) throw Error("eval: trajectory was planned for robot '" + t.robot + "'");
  if (t.frames.cols() != model.dof()) throw DimensionError("eval: trajectory dof does not match the robot");
  const JointConfig q_goal = goal.empty() ? t.q_goal : parse_config(goal);
  EvalTask task = make_task(model, load_scene(scene), t.q_init, q_goal, "eval");
  if (!goal_pose.empty()) task.target = parse_pose(goal_pose);
  out << metrics_to_json(evaluate(t.frames, task, model, thresholds())).dump(2) << "\n";
  return 0;
}

int Cli::bench(const CLI::App& sub) {
  require_file(tasks, "task list");
  const json& bj = cfg.at("bench");
  const RobotModel model = robot();
  std::vector<EvalTask> list = load_tasks(tasks, model);
  if (limit > 0 && static_cast<std::size_t>(limit) < list.size()) list.resize(static_cast<std::size_t>(limit));
  if (list.empty()) throw Error("bench: task list " + tasks + " is empty");

  std::vector<Method> methods;
  if (sub.count("--methods")) {
    methods = parse_methods(method);
  } else {
    for (const auto& m : bj.at("methods")) methods.push_back(parse_method(m.get<std::string>()));
  }
  bool wants_diffusion = false;
  for (Method m : methods) wants_diffusion = wants_diffusion || m == Method::diffusion;

  MethodContext ctx = method_context();
  const LoadedModels models = load_models(this->model, cae, wants_diffusion);
  models.attach(ctx);
  std::vector<BenchmarkPlanner> planners;
  for (Method m : methods) planners.push_back(method_planner(model, m, ctx));

  BenchmarkOptions bo;
  bo.curve_points = bj.value("curve_points", bo.curve_points);
  bo.workers = sub.count("--workers") ? workers : bj.value("workers", bo.workers);
  const double b = sub.count("--budget") ? budget : bj.value("budget_s", 60.0);
  const std::uint64_t s = sub.count("--seed") ? seed : bj.value("seed", std::uint64_t{0});
  const BenchmarkReport report = run_benchmark(planners, list, b, model, thresholds(), s, bo);

  fs::create_directories(output);
  write_text(fs::path(output) / "report.json", report_to_json(report).dump(2) + "\n");
  write_text(fs::path(output) / "table.txt", report_table(report));
  write_text(fs::path(output) / "curves.csv", report_curves_csv(report));
  out << report_table(report);
  return 0;
}

int Cli::serve(const CLI::App& sub) {
  const json& sj = cfg.at("service");
  ServiceOptions so = service_options_from_json(sj);
  so.methods = method_context();
  so.thresholds = thresholds();
  if (sub.count("--workers")) so.workers = workers;
  if (sub.count("--job-log")) so.job_log = job_log;
  const LoadedModels models = load_models(this->model, cae, false);
  models.attach(so.methods);
  const int p = sub.count("--port") ? port : sj.value("port", 8080);
  const std::string host = bind.empty() ? default_bind_address() : bind;

  PlanService service({robot()}, so);
  HttpServer server(service);
  const int bound = server.bind(host, p);
  err << "rdiff: serving on http://" << host << ":" << bound << std::endl;
  server.listen();
  return 0;
}

}  // namespace

json default_config_json() {
  ServiceOptions so;
  return {{"robot", "../data/robots/panda_like.json"},
          {"dataset", [] {
             json j = dataset_config_to_json(DatasetConfig());
             j["n"] = 2000;
             j["seed"] = 0;
             return j;
           }()},
          {"cae", cae_config_to_json(CaeConfig())},
          {"diffusion",
           {{"denoiser", denoiser_config_to_json(DenoiserConfig())},
            {"schedule", {{"T", 200}, {"beta_1", 1e-4}, {"beta_T", 0.02}}},
            {"train", train_config_to_json(DiffusionTrainConfig())}}},
          {"methods", method_context_to_json(MethodContext())},
          {"eval", thresholds_to_json(EvalThresholds())},
          {"plan", {{"method", "shared_tree"}, {"seed", 0}, {"budget_s", 60.0}}},
          {"bench",
           {{"budget_s", 60.0},
            {"seed", 0},
            {"curve_points", BenchmarkOptions().curve_points},
            {"workers", BenchmarkOptions().workers},
            {"methods", {"rrt_star", "informed", "shared_tree", "diffusion"}}}},
          {"service", {{"port", 8080}, {"workers", so.workers}, {"job_log", so.job_log}}},
          {"error_log", "rdiff-errors.jsonl"}};
}

json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path.string());
  json patch = json::parse(in, nullptr, false);
  if (patch.is_discarded() || !patch.is_object()) throw LoadError("config " + path.string() + " is not a JSON object");
  json cfg = default_config_json();
  cfg.merge_patch(patch);
  const fs::path base = path.parent_path();
  auto resolve = [&](json& field) {
    if (!field.is_string()) throw LoadError("config " + path.string() + ": path fields must be strings");
    const fs::path p = field.get<std::string>();
    if (!p.empty() && p.is_relative()) field = (base / p).lexically_normal().string();
  };
  resolve(cfg["robot"]);
  resolve(cfg["service"]["job_log"]);
  try {
    dataset_config_from_json(cfg.at("dataset"));
    cae_config_from_json(cfg.at("cae"));
    denoiser_config_from_json(cfg.at("diffusion").at("denoiser"));
    train_config_from_json(cfg.at("diffusion").at("train"));
    schedule_from_config(cfg.at("diffusion").at("schedule")).validate();
    method_context_from_json(cfg.at("methods"));
    thresholds_from_json(cfg.at("eval"));
    service_options_from_json(cfg.at("service"));
  } catch (const std::exception& e) {
    throw LoadError("config " + path.string() + ": " + e.what());
  }
  return cfg;
}

json trajectory_file_to_json(const TrajectoryFile& t) {
  json frames = json::array();
  for (Eigen::Index i = 0; i < t.frames.rows(); ++i) frames.push_back(vec_json(t.frames.row(i).transpose()));
  return {{"robot", t.robot},
          {"method", t.method},
          {"seed", t.seed},
          {"q_init", vec_json(t.q_init)},
          {"q_goal", vec_json(t.q_goal)},
          {"frames", std::move(frames)}};
}

TrajectoryFile trajectory_file_from_json(const json& j) {
  try {
    TrajectoryFile t;
    t.robot = j.at("robot").get<std::string>();
    t.method = j.at("method").get<std::string>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.q_init = json_vec(j.at("q_init"), "q_init");
    t.q_goal = json_vec(j.at("q_goal"), "q_goal");
    const json& frames = j.at("frames");
    if (!frames.is_array() || frames.size() < 2) throw LoadError("trajectory needs at least 2 frames");
    const auto dof = static_cast<Eigen::Index>(t.q_init.size());
    t.frames.resize(static_cast<Eigen::Index>(frames.size()), dof);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const JointConfig row = json_vec(frames[i], "frame");
      if (row.size() != dof) throw LoadError("trajectory frame " + std::to_string(i) + " has the wrong dof");
      t.frames.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    if (t.q_goal.size() != dof) throw LoadError("trajectory q_goal has the wrong dof");
    return t;
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed trajectory file: ") + e.what());
  }
}

void write_trajectory_file(const TrajectoryFile& t, const fs::path& path) {
  write_text(path, trajectory_file_to_json(t).dump() + "\n");
}

TrajectoryFile read_trajectory_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open trajectory file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw LoadError("trajectory file " + path.string() + " is not valid JSON");
  return trajectory_file_from_json(j);
}

std::vector<EvalTask> load_tasks(const fs::path& path, const RobotModel& model) {
  std::vector<EvalTask> out;
  if (path.extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open task list " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("tasks") || !j["tasks"].is_array()) {
      throw LoadError("task list " + path.string() + " must be {\"tasks\": [...]}");
    }
    for (std::size_t i = 0; i < j["tasks"].size(); ++i) {
      const json& t = j["tasks"][i];
      try {
        const JointConfig q_init = json_vec(t.at("q_init"), "q_init");
        const JointConfig q_goal = json_vec(t.at("q_goal"), "q_goal");
        model.check_config(q_init);
        model.check_config(q_goal);
        out.push_back(make_task(model, scene_from_json(t.at("scene")), q_init, q_goal,
                                t.value("name", "task-" + std::to_string(i))));
      } catch (const json::exception& e) {
        throw LoadError("task " + std::to_string(i) + " in " + path.string() + ": " + e.what());
      }
    }
    return out;
  }
  const Dataset ds = read_dataset(path, &model);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const DatasetRecord& r = ds.records[i];
    out.push_back(make_task(model, r.scene, r.q_init, r.q_goal, "task-" + std::to_string(i)));
  }
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli(out, err);
  CLI::App app{"Motion-planning workbench: datasets, encoder and diffusion training, planning, benchmarks"};
  app.name("rdiff");
  app.require_subcommand(1);
  app.add_option("--config", cli.config_path, "JSON config overlaid on the defaults");
  app.add_option("--error-log", cli.error_log, "Append structured errors to this JSON-lines file");

  auto* gen = app.add_subcommand("gen-dataset", "Generate planner-labelled trajectories");
  gen->add_option("--n", cli.n, "Number of records");
  gen->add_option("--seed", cli.seed, "Dataset seed");
  gen->add_option("--out", cli.output, "Dataset file")->required();
  gen->add_option("--workers", cli.workers, "Worker threads");
  gen->add_option("--robot", cli.robot_path, "Robot description");

  auto* tcae = app.add_subcommand("train-cae", "Train and freeze the obstacle encoder");
  tcae->add_option("--dataset", cli.dataset, "Dataset file")->required();
  tcae->add_option("--out", cli.output, "Encoder checkpoint")->required();
  tcae->add_option("--steps", cli.steps, "Optimizer steps");
  tcae->add_option("--seed", cli.seed, "Training seed");
  tcae->add_option("--batch", cli.batch, "Minibatch size");

  auto* tdiff = app.add_subcommand("train-diffusion", "Train the trajectory denoiser");
  tdiff->add_option("--dataset", cli.dataset, "Dataset file")->required();
  tdiff->add_option("--cae", cli.cae, "Frozen encoder checkpoint")->required();
  tdiff->add_option("--out", cli.output, "Diffusion checkpoint")->required();
  tdiff->add_option("--steps", cli.steps, "Optimizer steps");
  tdiff->add_option("--seed", cli.seed, "Training seed");
  tdiff->add_option("--batch", cli.batch, "Minibatch size");
  tdiff->add_option("--layers", cli.layers, "Transformer layers");
  tdiff->add_option("--width", cli.width, "Model width");
  tdiff->add_option("--heads", cli.heads, "Attention heads");
  tdiff->add_option("--log-every", cli.log_every, "Print the loss every k steps");
  tdiff->add_option("--robot", cli.robot_path, "Robot description");

  auto* plan = app.add_subcommand("plan", "Plan one task and write the trajectory file");
  plan->add_option("--method", cli.method, "rrt_star, informed, shared_tree or diffusion");
  plan->add_option("--scene", cli.scene, "Scene file")->required();
  plan->add_option("--start", cli.start, "Start config, comma separated")->required();
  plan->add_option("--goal", cli.goal, "Goal config, comma separated");
  plan->add_option("--goal-pose", cli.goal_pose, "Goal pose x,y,z,qw,qx,qy,qz");
  plan->add_option("--seed", cli.seed, "Planner seed");
  plan->add_option("--budget", cli.budget, "Time budget in seconds");
  plan->add_option("--model", cli.model, "Diffusion checkpoint");
  plan->add_option("--cae", cli.cae, "Encoder checkpoint");
  plan->add_option("--out", cli.output, "Trajectory file")->default_val("trajectory.json");
  plan->add_option("--robot", cli.robot_path, "Robot description");

  auto* ev = app.add_subcommand("eval", "Evaluate a trajectory file");
  ev->add_option("--trajectory", cli.trajectory, "Trajectory file")->required();
  ev->add_option("--scene", cli.scene, "Scene file")->required();
  ev->add_option("--goal", cli.goal, "Goal config; defaults to the file's q_goal");
  ev->add_option("--goal-pose", cli.goal_pose, "Target pose x,y,z,qw,qx,qy,qz");
  ev->add_option("--robot", cli.robot_path, "Robot description");

  auto* bench = app.add_subcommand("bench", "Run methods on a task list under a time budget");
  bench->add_option("--tasks", cli.tasks, "Dataset file or JSON task list")->required();
  bench->add_option("--methods", cli.method, "Comma-separated methods");
  bench->add_option("--budget", cli.budget, "Per-task budget in seconds");
  bench->add_option("--seed", cli.seed, "Benchmark seed");
  bench->add_option("--limit", cli.limit, "Use only the first k tasks");
  bench->add_option("--workers", cli.workers, "Parallel tasks");
  bench->add_option("--model", cli.model, "Diffusion checkpoint");
  bench->add_option("--cae", cli.cae, "Encoder checkpoint");
  bench->add_option("--out-dir", cli.output, "Report directory")->default_val("bench_report");
  bench->add_option("--robot", cli.robot_path, "Robot description");

  auto* serve = app.add_subcommand("serve", "Run the HTTP planning service");
  serve->add_option("--port", cli.port, "TCP port (0 picks a free one)");
  serve->add_option("--bind", cli.bind, "Bind address; defaults to $RDIFF_BIND or 127.0.0.1");
  serve->add_option("--workers", cli.workers, "Concurrent jobs");
  serve->add_option("--job-log", cli.job_log, "Persisted job log");
  serve->add_option("--model", cli.model, "Diffusion checkpoint");
  serve->add_option("--cae", cli.cae, "Encoder checkpoint");
  serve->add_option("--robot", cli.robot_path, "Robot description");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    cli.cfg = load_config(cli.config_path.empty() ? fs::path(RDIFF_DEFAULT_CONFIG) : fs::path(cli.config_path));
    if (cli.error_log.empty()) cli.error_log = cli.cfg.value("error_log", std::string());
    if (sub == gen) return cli.gen_dataset(*sub);
    if (sub == tcae) return cli.train_cae_cmd(*sub);
    if (sub == tdiff) return cli.train_diffusion_cmd(*sub);
    if (sub == plan) return cli.plan(*sub);
    if (sub == ev) return cli.eval(*sub);
    if (sub == bench) return cli.bench(*sub);
    return cli.serve(*sub);
  } catch (const std::exception& e) {
    const std::string message = one_line(e.what());
    err << "rdiff " << command << ": error: " << message << std::endl;
    if (!cli.error_log.empty()) {
      std::ofstream log(cli.error_log, std::ios::app);
      log << json{{"time", utc_now()}, {"command", command}, {"type", error_type(e)}, {"message", message}, {"args", args}}
                 .dump()
          << "\n";
    }
    return 1;
  }
}

}  // namespace rdiff
