#include "rdiff/service.hpp"

#include <cstdlib>
#include <filesystem>

#include "httplib.h"

namespace rdiff {

namespace {

using nlohmann::json;

const std::vector<std::pair<JobStatus, const char*>> kStatusNames = {{JobStatus::queued, "queued"},
                                                                     {JobStatus::running, "running"},
                                                                     {JobStatus::done, "done"},
                                                                     {JobStatus::failed, "failed"}};

ApiError bad_request(const std::string& message) { return ApiError(400, "bad_request", message); }

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw bad_request("request body is not valid JSON");
  if (!j.is_object()) throw bad_request("request body must be a JSON object");
  return j;
}

JointConfig vector_field(const json& j, const std::string& name, int dim) {
  if (!j.is_array()) throw bad_request(name + " must be an array of numbers");
  JointConfig v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw bad_request(name + " must be an array of numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    if (!std::isfinite(v(static_cast<Eigen::Index>(i)))) throw bad_request(name + " has a non-finite entry");
  }
  if (dim >= 0 && v.size() != dim) {
    throw bad_request(name + " has " + std::to_string(v.size()) + " entries, expected " + std::to_string(dim));
  }
  return v;
}

bool terminal(JobStatus s) { return s == JobStatus::done || s == JobStatus::failed; }

}  // namespace

std::string job_status_name(JobStatus s) {
  for (const auto& [k, v] : kStatusNames) {
    if (k == s) return v;
  }
  throw Error("unknown job status");
}

JobStatus parse_job_status(const std::string& s) {
  for (const auto& [k, v] : kStatusNames) {
    if (s == v) return k;
  }
  throw Error("unknown job status '" + s + "'");
}

json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

json pose_to_json(const LinkPose& pose) {
  const Eigen::Quaterniond q = to_quaternion(pose.rotation);
  return {{"p", {pose.translation.x(), pose.translation.y(), pose.translation.z()}},
          {"q", {q.w(), q.x(), q.y(), q.z()}}};
}

json link_poses_json(const RobotModel& model, const JointConfig& q) {
  json out = json::array();
  for (const LinkPose& p : forward_kinematics(model, q)) out.push_back(pose_to_json(p));
  return out;
}

json robot_geometry_json(const RobotModel& model) {
  json j = robot_to_json(model);
  j["link_lengths"] = json::array();
  for (const JointSpec& js : model.joints()) j["link_lengths"].push_back(std::hypot(js.a, js.d));
  return j;
}

json trajectory_payload(const RobotModel& model, const Trajectory& traj, const MetricsRecord& m) {
  json frames = json::array();
  json poses = json::array();
  for (Eigen::Index i = 0; i < traj.rows(); ++i) {
    const JointConfig q = traj.row(i).transpose();
    frames.push_back(std::vector<double>(q.data(), q.data() + q.size()));
    poses.push_back(link_poses_json(model, q));
  }
  return {{"frames", std::move(frames)}, {"link_poses", std::move(poses)}, {"metrics", metrics_to_json(m)}};
}

json service_options_to_json(const ServiceOptions& o) {
  return {{"workers", o.workers},
          {"job_log", o.job_log},
          {"methods", method_context_to_json(o.methods)},
          {"thresholds", thresholds_to_json(o.thresholds)}};
}

ServiceOptions service_options_from_json(const json& j, ServiceOptions o) {
  o.workers = j.value("workers", o.workers);
  o.job_log = j.value("job_log", o.job_log);
  if (j.contains("methods")) o.methods = method_context_from_json(j["methods"], o.methods);
  if (j.contains("thresholds")) o.thresholds = thresholds_from_json(j["thresholds"], o.thresholds);
  if (o.workers < 1) throw Error("service workers must be at least 1");
  return o;
}

PlanService::PlanService(std::vector<RobotModel> robots, ServiceOptions options)
    : robots_(std::move(robots)), options_(std::move(options)) {
  if (robots_.empty()) throw Error("service needs at least one robot");
  if (options_.workers < 1) throw Error("service workers must be at least 1");
  if (!options_.job_log.empty()) {
    replay_log();
    log_.open(options_.job_log, std::ios::app);
    if (!log_) throw Error("cannot open job log " + options_.job_log);
  }
  for (int i = 0; i < options_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

PlanService::~PlanService() { stop(); }

void PlanService::stop() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stopping_ = true;
  }
  work_cv_.notify_all();
  for (std::thread& w : workers_) {
    if (w.joinable()) w.join();
  }
  workers_.clear();
}

const RobotModel& PlanService::robot(const std::string& name) const {
  if (name.empty()) return robots_.front();
  for (const RobotModel& r : robots_) {
    if (r.name() == name) return r;
  }
  throw ApiError(409, "unknown_robot", "unknown robot '" + name + "'");
}

ApiResponse PlanService::post_scene(const std::string& body) {
  try {
    const json j = parse_body(body);
    if (j.contains("robot") && !j["robot"].is_string()) throw bad_request("robot must be a string");
    const std::string robot_name = j.value("robot", std::string());
    const RobotModel& model = robot(robot_name);
    const json& scene_json = j.contains("scene") ? j["scene"] : j;
    Scene scene;
    try {
      scene = scene_from_json(scene_json);
      scene.validate();
    } catch (const std::exception& e) {
      throw bad_request(std::string("invalid scene: ") + e.what());
    }
    std::lock_guard<std::mutex> lock(mu_);
    const std::string id = "scene-" + std::to_string(next_scene_++);
    scenes_[id] = {{"robot", model.name()}, {"scene", scene_to_json(scene)}};
    return {201, {{"id", id}, {"robot", model.name()}, {"scene", scene_to_json(scene)}}};
  } catch (const ApiError& e) {
    return {e.status(), error_body(e.code(), e.what())};
  }
}

PlanRequest PlanService::parse_request(const json& j, const RobotModel*& model) const {
  if (j.contains("robot") && !j["robot"].is_string()) throw bad_request("robot must be a string");
  std::string robot_name = j.value("robot", std::string());

  json scene_json;
  if (!j.contains("scene")) throw bad_request("scene is required");
  if (j["scene"].is_string()) {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = scenes_.find(j["scene"].get<std::string>());
    if (it == scenes_.end()) throw ApiError(404, "unknown_scene", "unknown scene '" + j["scene"].get<std::string>() + "'");
    scene_json = it->second["scene"];
    if (robot_name.empty()) robot_name = it->second["robot"].get<std::string>();
  } else {
    scene_json = j["scene"];
  }
  model = &robot(robot_name);

  PlanRequest req;
  try {
    req.scene = scene_from_json(scene_json);
    req.scene.validate();
  } catch (const std::exception& e) {
    throw bad_request(std::string("invalid scene: ") + e.what());
  }
  if (!j.contains("q_init")) throw bad_request("q_init is required");
  req.q_init = vector_field(j["q_init"], "q_init", model->dof());
  if (!model->within_limits(req.q_init)) throw bad_request("q_init is outside the joint limits");

  if (!j.contains("goal") || !j["goal"].is_object()) throw bad_request("goal must be {config} or {pose}");
  const json& goal = j["goal"];
  if (goal.contains("config") == goal.contains("pose")) throw bad_request("goal must have exactly one of config, pose");
  if (goal.contains("config")) {
    req.goal_config = vector_field(goal["config"], "goal.config", model->dof());
    if (!model->within_limits(*req.goal_config)) throw bad_request("goal.config is outside the joint limits");
  } else {
    const json& pose = goal["pose"];
    if (!pose.is_object() || !pose.contains("position") || !pose.contains("quaternion")) {
      throw bad_request("goal.pose needs position and quaternion");
    }
    const JointConfig p = vector_field(pose["position"], "goal.pose.position", 3);
    const JointConfig q = vector_field(pose["quaternion"], "goal.pose.quaternion", 4);
    if (q.norm() < 1e-9) throw bad_request("goal.pose.quaternion must be non-zero");
    LinkPose target;
    target.translation = p;
    target.rotation = Eigen::Quaterniond(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix();
    req.goal_pose = target;
  }

  try {
    req.method = parse_method(j.value("method", std::string("shared_tree")));
  } catch (const Error& e) {
    throw bad_request(e.what());
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw bad_request("seed must be a non-negative integer");
    req.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("budget_s")) {
    if (!j["budget_s"].is_number() || !(j["budget_s"].get<double>() > 0.0)) {
      throw bad_request("budget_s must be a positive number");
    }
    req.budget_s = j["budget_s"].get<double>();
  }
  return req;
}

ApiResponse PlanService::post_plan(const std::string& body) {
  try {
    json j = parse_body(body);
    const RobotModel* model = nullptr;
    parse_request(j, model);
    // Registered scenes are inlined into the stored request.
    if (j["scene"].is_string()) {
      std::lock_guard<std::mutex> lock(mu_);
      const json entry = scenes_.at(j["scene"].get<std::string>());
      j["scene"] = entry["scene"];
    }
    j["robot"] = model->name();
    std::string id;
    {
      std::lock_guard<std::mutex> lock(mu_);
      id = "job-" + std::to_string(next_job_++);
      jobs_[id] = PlanJob{id, j, JobStatus::queued, nullptr};
    }
    append_log({{"event", "submitted"}, {"id", id}, {"request", j}});
    enqueue(id);
    return {202, {{"id", id}, {"status", "queued"}}};
  } catch (const ApiError& e) {
    return {e.status(), error_body(e.code(), e.what())};
  }
}

ApiResponse PlanService::get_plan(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return {404, error_body("unknown_job", "unknown job '" + id + "'")};
  const PlanJob& job = it->second;
  json body = {{"id", job.id}, {"status", job_status_name(job.status)}, {"method", job.request.value("method", "shared_tree")}};
  if (job.status == JobStatus::done) {
    for (const auto& [k, v] : job.result.items()) body[k] = v;
    return {200, body};
  }
  if (job.status == JobStatus::failed) {
    body["error"] = job.result.at("error");
    return {500, body};
  }
  return {200, body};
}

ApiResponse PlanService::get_robot(const std::string& name) const {
  try {
    return {200, robot_geometry_json(robot(name))};
  } catch (const ApiError& e) {
    return {e.status(), error_body(e.code(), e.what())};
  }
}

ApiResponse PlanService::get_fk(const std::string& q, const std::string& robot_name) const {
  try {
    const RobotModel& model = robot(robot_name);
    JointConfig config;
    try {
      config = parse_config(q);
    } catch (const Error& e) {
      throw bad_request(e.what());
    }
    if (config.size() != model.dof()) {
      throw bad_request("q has " + std::to_string(config.size()) + " entries, robot '" + model.name() + "' has dof " +
                        std::to_string(model.dof()));
    }
    return {200,
            {{"robot", model.name()},
             {"q", std::vector<double>(config.data(), config.data() + config.size())},
             {"link_poses", link_poses_json(model, config)}}};
  } catch (const ApiError& e) {
    return {e.status(), error_body(e.code(), e.what())};
  }
}

std::optional<PlanJob> PlanService::job(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> PlanService::job_ids() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> ids;
  for (const auto& [k, v] : jobs_) ids.push_back(k);
  return ids;
}

void PlanService::wait_idle() const {
  std::unique_lock<std::mutex> lock(mu_);
  idle_cv_.wait(lock, [this] { return (queue_.empty() || stopping_) && running_ == 0; });
}

void PlanService::enqueue(const std::string& id) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    queue_.push_back(id);
  }
  work_cv_.notify_one();
}

void PlanService::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock<std::mutex> lock(mu_);
      work_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) {
        idle_cv_.notify_all();
        return;
      }
      id = queue_.front();
      queue_.pop_front();
      jobs_.at(id).status = JobStatus::running;
      ++running_;
    }
    run_job(id);
    {
      std::lock_guard<std::mutex> lock(mu_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

void PlanService::run_job(const std::string& id) {
  json request;
  {
    std::lock_guard<std::mutex> lock(mu_);
    request = jobs_.at(id).request;
  }
  JobStatus status = JobStatus::done;
  json result;
  try {
    const RobotModel* model = nullptr;
    const PlanRequest req = parse_request(request, model);
    const PlanOutcome outcome = run_method(*model, req, options_.methods);
    EvalTask task = make_task(*model, req.scene, req.q_init, outcome.q_goal, id);
    if (req.goal_pose) task.target = *req.goal_pose;
    const MetricsRecord metrics = evaluate(outcome.trajectory, task, *model, options_.thresholds, outcome.wall_time);
    result = trajectory_payload(*model, outcome.trajectory, metrics);
    result["q_goal"] = std::vector<double>(outcome.q_goal.data(), outcome.q_goal.data() + outcome.q_goal.size());
    result["clamped"] = outcome.clamped;
    result["erratic_risk"] = outcome.erratic_risk;
  } catch (const PlanningError& e) {
    status = JobStatus::failed;
    result = error_body("planning_failed", e.what());
    result["error"]["failure_reason"] = failure_reason_name(FailureReason::timeout);
  } catch (const std::exception& e) {
    status = JobStatus::failed;
    result = error_body("planner_error", e.what());
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    PlanJob& job = jobs_.at(id);
    job.status = status;
    job.result = result;
  }
  append_log({{"event", job_status_name(status)}, {"id", id}, {"result", result}});
}

void PlanService::append_log(const json& entry) {
  std::lock_guard<std::mutex> lock(log_mu_);
  if (!log_.is_open()) return;
  log_ << entry.dump() << '\n';
  log_.flush();
}

void PlanService::replay_log() {
  std::ifstream in(options_.job_log);
  if (!in) return;
  std::string line;
  std::vector<std::string> order;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json e = json::parse(line, nullptr, false);
    // A torn final line from a crash is ignored.
    if (e.is_discarded() || !e.is_object() || !e.contains("event") || !e.contains("id")) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw LoadError("job log " + options_.job_log + " line " + std::to_string(line_no) + " is malformed");
    }
    const std::string id = e["id"].get<std::string>();
    const std::string event = e["event"].get<std::string>();
    if (event == "submitted") {
      jobs_[id] = PlanJob{id, e.at("request"), JobStatus::queued, nullptr};
      order.push_back(id);
      const std::uint64_t n = std::strtoull(id.c_str() + id.find('-') + 1, nullptr, 10);
      next_job_ = std::max(next_job_, n + 1);
    } else {
      const auto it = jobs_.find(id);
      if (it == jobs_.end()) throw LoadError("job log " + options_.job_log + " finishes unknown job " + id);
      if (terminal(it->second.status)) continue;
      it->second.status = parse_job_status(event);
      it->second.result = e.at("result");
    }
  }
  for (const std::string& id : order) {
    if (!terminal(jobs_.at(id).status)) queue_.push_back(id);
  }
}

struct HttpServer::Impl {
  explicit Impl(PlanService& s) : service(s) {}
  PlanService& service;
  httplib::Server server;
};

namespace {

void send(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

HttpServer::HttpServer(PlanService& service) : impl_(std::make_unique<Impl>(service)) {
  httplib::Server& s = impl_->server;
  PlanService& svc = impl_->service;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  s.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  s.Post("/api/scenes", [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.post_scene(req.body)); });
  s.Post("/api/plan", [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.post_plan(req.body)); });
  s.Get(R"(/api/plan/([^/]+))",
        [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.get_plan(req.matches[1])); });
  s.Get("/api/robot", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.get_robot(req.get_param_value("name")));
  });
  s.Get("/api/fk", [&svc](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("q")) {
      send(res, {400, error_body("bad_request", "query parameter q is required")});
      return;
    }
    send(res, svc.get_fk(req.get_param_value("q"), req.get_param_value("robot")));
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    send(res, {500, error_body("internal_error", message)});
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

std::string default_bind_address() {
  const char* env = std::getenv("RDIFF_BIND");
  return env && *env ? env : "127.0.0.1";
}

}  // namespace rdiff
