#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "rdiff/evalbench.hpp"
#include "rdiff/methods.hpp"

namespace rdiff {

enum class JobStatus { queued, running, done, failed };

std::string job_status_name(JobStatus s);
JobStatus parse_job_status(const std::string& s);

struct PlanJob {
  std::string id;
  nlohmann::json request;
  JobStatus status = JobStatus::queued;
  /// Trajectory payload when done, structured error when failed.
  nlohmann::json result;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// HTTP status carried by request validation failures.
class ApiError : public Error {
 public:
  ApiError(int status, std::string code, const std::string& message)
      : Error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

nlohmann::json error_body(const std::string& code, const std::string& message);

/// Pose entry {p: [x, y, z], q: [w, x, y, z]}.
nlohmann::json pose_to_json(const LinkPose& pose);
/// Base-to-end-effector frames of q.
nlohmann::json link_poses_json(const RobotModel& model, const JointConfig& q);
/// Robot description plus per-link lengths.
nlohmann::json robot_geometry_json(const RobotModel& model);
/// {frames, link_poses, metrics}.
nlohmann::json trajectory_payload(const RobotModel& model, const Trajectory& traj, const MetricsRecord& m);

struct ServiceOptions {
  int workers = 2;
  /// Append-only JSON-lines log; replayed on construction when non-empty.
  std::string job_log;
  MethodContext methods;
  EvalThresholds thresholds;
};

nlohmann::json service_options_to_json(const ServiceOptions& o);
ServiceOptions service_options_from_json(const nlohmann::json& j, ServiceOptions base = {});

/// Job store, scene registry and request handlers behind the HTTP routes.
class PlanService {
 public:
  /// The first robot is the default for requests without a robot field.
  PlanService(std::vector<RobotModel> robots, ServiceOptions options);
  ~PlanService();
  PlanService(const PlanService&) = delete;
  PlanService& operator=(const PlanService&) = delete;

  ApiResponse post_scene(const std::string& body);
  ApiResponse post_plan(const std::string& body);
  ApiResponse get_plan(const std::string& id) const;
  ApiResponse get_robot(const std::string& name) const;
  /// `q` is a comma-separated config.
  ApiResponse get_fk(const std::string& q, const std::string& robot) const;

  std::optional<PlanJob> job(const std::string& id) const;
  std::vector<std::string> job_ids() const;
  /// Blocks until no job is queued or running.
  void wait_idle() const;
  /// Stops the workers; queued jobs stay queued.
  void stop();

 private:
  const RobotModel& robot(const std::string& name) const;
  PlanRequest parse_request(const nlohmann::json& j, const RobotModel*& model) const;
  void enqueue(const std::string& id);
  void worker_loop();
  void run_job(const std::string& id);
  void append_log(const nlohmann::json& entry);
  void replay_log();

  std::vector<RobotModel> robots_;
  ServiceOptions options_;

  mutable std::mutex mu_;
  mutable std::condition_variable work_cv_;
  mutable std::condition_variable idle_cv_;
  std::map<std::string, PlanJob> jobs_;
  std::map<std::string, nlohmann::json> scenes_;
  std::deque<std::string> queue_;
  int running_ = 0;
  std::uint64_t next_job_ = 1;
  std::uint64_t next_scene_ = 1;
  bool stopping_ = false;

  std::mutex log_mu_;
  std::ofstream log_;
  std::vector<std::thread> workers_;
};

/// cpp-httplib front end for a PlanService.
class HttpServer {
 public:
  explicit HttpServer(PlanService& service);
  ~HttpServer();

  /// Port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Bind address from RDIFF_BIND, else 127.0.0.1.
std::string default_bind_address();

}  // namespace rdiff
