#include "rdiff/dataset.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <mutex>
#include <thread>

namespace rdiff {

namespace {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

constexpr std::uint32_t kDatasetVersion = 1;

// The volatile store keeps GCC 11 at -O3 from folding the float round trip away.
double to_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

JointConfig round_f32(const JointConfig& q) {
  return q.unaryExpr([](double v) { return to_f32(v); });
}

/// Nearest f32 value inside the joint limits.
JointConfig round_f32_within(const RobotModel& model, const JointConfig& q) {
  JointConfig out = round_f32(model.clamp(q));
  for (int i = 0; i < model.dof(); ++i) {
    const auto& j = model.joints()[i];
    float f = static_cast<float>(out(i));
    while (static_cast<double>(f) < j.limit_lo) f = std::nextafter(f, std::numeric_limits<float>::infinity());
    while (static_cast<double>(f) > j.limit_hi) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
    out(i) = static_cast<double>(f);
  }
  return out;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_f32(std::string& out, double v) { put<float>(out, static_cast<float>(v)); }

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > b_.size()) throw LoadError("dataset: truncated file");
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  double f32() { return static_cast<double>(get<float>()); }
  bool done() const { return pos_ == b_.size(); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

JointConfig sample_config(const RobotModel& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const JointConfig lo = model.lower(), hi = model.upper();
  JointConfig q(model.dof());
  for (int i = 0; i < model.dof(); ++i) q(i) = lo(i) + (hi(i) - lo(i)) * unit(rng);
  return round_f32_within(model, q);
}

bool sample_valid(const RobotModel& model, const CollisionChecker& checker, int tries, std::mt19937_64& rng,
                  JointConfig& out) {
  for (int i = 0; i < tries; ++i) {
    out = sample_config(model, rng);
    if (checker.valid(out)) return true;
  }
  return false;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void SceneSpec::validate() const {
  if (min_spheres < 0 || max_spheres < min_spheres) throw Error("scene spec: bad sphere count range");
  if (!(min_radius > 0.0) || max_radius < min_radius) throw Error("scene spec: bad radius range");
  if (min_horizontal < 0.0 || max_horizontal < min_horizontal) throw Error("scene spec: bad horizontal range");
  if (max_z < min_z) throw Error("scene spec: bad height range");
  if (!(bounds.max.array() > bounds.min.array()).all()) throw Error("scene spec: degenerate bounds");
}

nlohmann::json scene_spec_to_json(const SceneSpec& s) {
  return {{"min_spheres", s.min_spheres},
          {"max_spheres", s.max_spheres},
          {"min_radius", s.min_radius},
          {"max_radius", s.max_radius},
          {"min_horizontal", s.min_horizontal},
          {"max_horizontal", s.max_horizontal},
          {"min_z", s.min_z},
          {"max_z", s.max_z},
          {"bounds", {{"min", {s.bounds.min.x(), s.bounds.min.y(), s.bounds.min.z()}},
                      {"max", {s.bounds.max.x(), s.bounds.max.y(), s.bounds.max.z()}}}}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j, SceneSpec s) {
  s.min_spheres = j.value("min_spheres", s.min_spheres);
  s.max_spheres = j.value("max_spheres", s.max_spheres);
  s.min_radius = j.value("min_radius", s.min_radius);
  s.max_radius = j.value("max_radius", s.max_radius);
  s.min_horizontal = j.value("min_horizontal", s.min_horizontal);
  s.max_horizontal = j.value("max_horizontal", s.max_horizontal);
  s.min_z = j.value("min_z", s.min_z);
  s.max_z = j.value("max_z", s.max_z);
  if (j.contains("bounds")) {
    const auto lo = j.at("bounds").at("min").get<std::vector<double>>();
    const auto hi = j.at("bounds").at("max").get<std::vector<double>>();
    if (lo.size() != 3 || hi.size() != 3) throw Error("scene spec: bounds need 3 coordinates");
    s.bounds.min = Vec3(lo[0], lo[1], lo[2]);
    s.bounds.max = Vec3(hi[0], hi[1], hi[2]);
  }
  s.validate();
  return s;
}

Scene random_scene(const SceneSpec& spec, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(spec.min_spheres, spec.max_spheres);
  std::uniform_real_distribution<double> angle(-M_PI, M_PI);
  std::uniform_real_distribution<double> horiz(spec.min_horizontal, spec.max_horizontal);
  std::uniform_real_distribution<double> height(spec.min_z, spec.max_z);
  std::uniform_real_distribution<double> radius(spec.min_radius, spec.max_radius);
  Scene s;
  s.bounds = spec.bounds;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const double a = angle(rng), h = horiz(rng), z = height(rng), r = radius(rng);
    s.spheres.push_back({Vec3(to_f32(h * std::cos(a)), to_f32(h * std::sin(a)), to_f32(z)), to_f32(r)});
  }
  return s;
}

void validate_record(const DatasetRecord& r, const RobotModel& model, double safe_distance, double edge_step) {
  r.scene.validate();
  const int dof = model.dof();
  if (r.q_init.size() != dof || r.q_goal.size() != dof || r.trajectory.cols() != dof) {
    throw Error("record: dimension does not match robot '" + model.name() + "'");
  }
  if (r.trajectory.rows() < 2) throw Error("record: trajectory needs at least 2 frames");
  if (!r.trajectory.allFinite()) throw Error("record: non-finite trajectory");
  if (r.trajectory.row(0).transpose() != r.q_init) throw Error("record: first frame differs from q_init");
  if (r.trajectory.row(r.trajectory.rows() - 1).transpose() != r.q_goal) {
    throw Error("record: last frame differs from q_goal");
  }
  for (Eigen::Index i = 0; i < r.trajectory.rows(); ++i) {
    if (!model.within_limits(r.trajectory.row(i).transpose())) {
      throw Error("record: frame " + std::to_string(i) + " outside joint limits");
    }
  }
  const Trajectory dense = densify(r.trajectory, edge_step);
  for (Eigen::Index i = 0; i < dense.rows(); ++i) {
    if (min_clearance(fk_points(model, dense.row(i).transpose()), r.scene) < safe_distance) {
      throw Error("record: densified trajectory clearance below the safe distance");
    }
  }
}

DatasetConfig::DatasetConfig() {
  planner.max_iters = 4000;
  planner.refine_iters = 300;
  planner.shortcut_passes = 100;
  planner.time_budget = 20.0;
}

void DatasetConfig::validate() const {
  scene.validate();
  planner.validate();
  if (frames < 2) throw Error("dataset config: frames must be >= 2");
  if (ik_solutions < 1) throw Error("dataset config: ik_solutions must be >= 1");
  if (max_attempts < 1 || config_tries < 1) throw Error("dataset config: attempt limits must be >= 1");
  if (workers < 1) throw Error("dataset config: workers must be >= 1");
}

nlohmann::json dataset_config_to_json(const DatasetConfig& c) {
  return {{"scene", scene_spec_to_json(c.scene)},
          {"planner", planner_config_to_json(c.planner)},
          {"frames", c.frames},
          {"ik_solutions", c.ik_solutions},
          {"max_attempts", c.max_attempts},
          {"config_tries", c.config_tries},
          {"workers", c.workers}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j, DatasetConfig c) {
  if (j.contains("scene")) c.scene = scene_spec_from_json(j.at("scene"), c.scene);
  if (j.contains("planner")) c.planner = planner_config_from_json(j.at("planner"), c.planner);
  c.frames = j.value("frames", c.frames);
  c.ik_solutions = j.value("ik_solutions", c.ik_solutions);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.config_tries = j.value("config_tries", c.config_tries);
  c.workers = j.value("workers", c.workers);
  c.validate();
  return c;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  return {{"seed", m.seed},
          {"counts", {{"records", m.records}, {"attempts", m.attempts}}},
          {"rejections", m.rejections},
          {"robot_name", m.robot_name},
          {"safe_distance", m.safe_distance},
          {"frames_per_trajectory", m.frames_per_trajectory}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.records = j.at("counts").at("records").get<std::int64_t>();
    m.attempts = j.at("counts").at("attempts").get<std::int64_t>();
    m.rejections = j.at("rejections").get<std::map<std::string, std::int64_t>>();
    m.robot_name = j.at("robot_name").get<std::string>();
    m.safe_distance = j.at("safe_distance").get<double>();
    m.frames_per_trajectory = j.at("frames_per_trajectory").get<int>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("manifest: ") + e.what());
  }
}

std::uint64_t record_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(splitmix64(seed) ^ index); }

DatasetRecord generate_record(const RobotModel& model, const DatasetConfig& cfg, std::uint64_t seed,
                              std::map<std::string, std::int64_t>& rejections, std::int64_t& attempts) {
  std::mt19937_64 rng(seed);
  const double safe = cfg.planner.clearance;
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    ++attempts;
    DatasetRecord rec;
    rec.scene = random_scene(cfg.scene, rng);
    const CollisionChecker checker(model, rec.scene, safe, cfg.planner.edge_step);
    JointConfig q_target;
    if (!sample_valid(model, checker, cfg.config_tries, rng, rec.q_init) ||
        !sample_valid(model, checker, cfg.config_tries, rng, q_target)) {
      ++rejections["scene_infeasible"];
      continue;
    }
    GoalSet goals;
    try {
      goals = ik_solve(model, end_effector_pose(model, q_target), cfg.ik_solutions, rng(), rec.scene, safe);
    } catch (const PlanningError&) {
      ++rejections["ik_failure"];
      continue;
    }
    for (auto& g : goals.configs) g = round_f32_within(model, g);
    SharedTreeResult plan;
    PlannerConfig pc = cfg.planner;
    pc.seed = rng();
    try {
      plan = plan_shared_tree(model, rec.scene, rec.q_init, goals, pc);
    } catch (const PlanningError&) {
      ++rejections["plan_failure"];
      continue;
    }
    const Path& best = plan.paths.at(plan.best_goal);
    rec.q_goal = goals.configs[plan.best_goal];
    rec.trajectory = resample_path(best, cfg.frames).unaryExpr([](double v) { return to_f32(v); });
    rec.trajectory.row(0) = rec.q_init.transpose();
    rec.trajectory.row(cfg.frames - 1) = rec.q_goal.transpose();
    try {
      validate_record(rec, model, safe, cfg.planner.edge_step);
    } catch (const Error&) {
      ++rejections["validation"];
      continue;
    }
    return rec;
  }
  throw Error("generate_dataset: no valid record after " + std::to_string(cfg.max_attempts) + " attempts");
}

Dataset generate_dataset(const RobotModel& model, int n_records, const DatasetConfig& cfg, std::uint64_t seed,
                         const ProgressFn& progress) {
  cfg.validate();
  if (n_records < 0) throw Error("generate_dataset: n_records must be >= 0");
  Dataset out;
  out.records.resize(static_cast<std::size_t>(n_records));
  std::vector<std::map<std::string, std::int64_t>> rejections(static_cast<std::size_t>(n_records));
  std::vector<std::int64_t> attempts(static_cast<std::size_t>(n_records), 0);
  std::atomic<int> next{0}, done{0};
  std::mutex progress_mutex;
  std::exception_ptr failure;
  auto work = [&] {
    for (int i = next++; i < n_records; i = next++) {
      try {
        out.records[i] = generate_record(model, cfg, record_seed(seed, static_cast<std::uint64_t>(i)), rejections[i],
                                         attempts[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        if (!failure) failure = std::current_exception();
        next = n_records;
        return;
      }
      const int d = ++done;
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        progress(d, n_records);
      }
    }
  };
  const int workers = std::min(cfg.workers, std::max(1, n_records));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  DatasetManifest& m = out.manifest;
  m.seed = seed;
  m.records = n_records;
  m.robot_name = model.name();
  m.safe_distance = cfg.planner.clearance;
  m.frames_per_trajectory = cfg.frames;
  for (const char* k : {"scene_infeasible", "ik_failure", "plan_failure", "validation"}) m.rejections[k] = 0;
  for (int i = 0; i < n_records; ++i) {
    m.attempts += attempts[i];
    for (const auto& [k, v] : rejections[i]) m.rejections[k] += v;
  }
  return out;
}

std::string encode_dataset(const std::vector<DatasetRecord>& records) {
  std::string out = "ROPD";
  put<std::uint32_t>(out, kDatasetVersion);
  put<std::uint64_t>(out, records.size());
  for (const auto& r : records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.scene.spheres.size()));
    for (const auto& s : r.scene.spheres) {
      put_f32(out, s.center.x());
      put_f32(out, s.center.y());
      put_f32(out, s.center.z());
      put_f32(out, s.radius);
    }
    const auto dof = static_cast<std::uint32_t>(r.q_init.size());
    if (r.q_goal.size() != dof || r.trajectory.cols() != dof) throw DimensionError("encode_dataset: ragged record");
    put<std::uint32_t>(out, dof);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.trajectory.rows()));
    for (std::uint32_t i = 0; i < dof; ++i) put_f32(out, r.q_init(i));
    for (std::uint32_t i = 0; i < dof; ++i) put_f32(out, r.q_goal(i));
    for (Eigen::Index f = 0; f < r.trajectory.rows(); ++f) {
      for (std::uint32_t i = 0; i < dof; ++i) put_f32(out, r.trajectory(f, i));
    }
  }
  return out;
}

std::vector<DatasetRecord> decode_dataset(const std::string& bytes) {
  Reader rd(bytes);
  char magic[4];
  for (char& c : magic) c = rd.get<char>();
  if (std::string(magic, 4) != "ROPD") throw LoadError("dataset: bad magic");
  const auto version = rd.get<std::uint32_t>();
  if (version != kDatasetVersion) throw LoadError("dataset: unsupported version " + std::to_string(version));
  const auto count = rd.get<std::uint64_t>();
  if (count > rd.remaining()) throw LoadError("dataset: record count exceeds file size");
  std::vector<DatasetRecord> records;
  records.reserve(count);
  const Bounds bounds = SceneSpec{}.bounds;
  for (std::uint64_t k = 0; k < count; ++k) {
    DatasetRecord r;
    r.scene.bounds = bounds;
    const auto ns = rd.get<std::uint32_t>();
    if (ns > rd.remaining()) throw LoadError("dataset: truncated file");
    for (std::uint32_t i = 0; i < ns; ++i) {
      SphereObstacle s;
      s.center.x() = rd.f32();
      s.center.y() = rd.f32();
      s.center.z() = rd.f32();
      s.radius = rd.f32();
      r.scene.spheres.push_back(s);
    }
    const auto dof = rd.get<std::uint32_t>();
    const auto n = rd.get<std::uint32_t>();
    if (static_cast<std::uint64_t>(dof) * (n + 2) * 4 > rd.remaining()) throw LoadError("dataset: truncated file");
    r.q_init.resize(dof);
    r.q_goal.resize(dof);
    r.trajectory.resize(n, dof);
    for (std::uint32_t i = 0; i < dof; ++i) r.q_init(i) = rd.f32();
    for (std::uint32_t i = 0; i < dof; ++i) r.q_goal(i) = rd.f32();
    for (std::uint32_t f = 0; f < n; ++f) {
      for (std::uint32_t i = 0; i < dof; ++i) r.trajectory(f, i) = rd.f32();
    }
    records.push_back(std::move(r));
  }
  if (!rd.done()) throw LoadError("dataset: trailing bytes");
  return records;
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path) {
  return std::filesystem::path(dataset_path.string() + ".manifest.json");
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  const std::string bytes = encode_dataset(dataset.records);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("dataset: cannot open '" + path.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("dataset: write failed for '" + path.string() + "'");
  }
  std::ofstream m(manifest_path(path), std::ios::trunc);
  if (!m) throw Error("dataset: cannot write manifest for '" + path.string() + "'");
  m << manifest_to_json(dataset.manifest).dump(2) << "\n";
}

Dataset read_dataset(const std::filesystem::path& path, const RobotModel* model) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("dataset: cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Dataset d;
  d.records = decode_dataset(bytes);
  const auto mp = manifest_path(path);
  if (std::filesystem::exists(mp)) {
    std::ifstream mf(mp);
    try {
      d.manifest = manifest_from_json(nlohmann::json::parse(mf));
    } catch (const nlohmann::json::parse_error& e) {
      throw LoadError(std::string("manifest: ") + e.what());
    }
    if (d.manifest.records != static_cast<std::int64_t>(d.records.size())) {
      throw LoadError("dataset: manifest record count does not match the file");
    }
  } else {
    d.manifest.records = static_cast<std::int64_t>(d.records.size());
  }
  if (model) {
    if (!d.manifest.robot_name.empty() && d.manifest.robot_name != model->name()) {
      throw LoadError("dataset: generated for robot '" + d.manifest.robot_name + "', not '" + model->name() + "'");
    }
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      try {
        validate_record(d.records[i], *model, d.manifest.safe_distance);
      } catch (const Error& e) {
        throw LoadError("dataset: record " + std::to_string(i) + ": " + e.what());
      }
    }
  }
  return d;
}

}  // namespace rdiff
