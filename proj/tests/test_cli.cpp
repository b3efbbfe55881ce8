#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "rdiff/cli.hpp"
#include "rdiff/dataset.hpp"

using namespace rdiff;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string csv(const JointConfig& q) {
  std::string s;
  for (int i = 0; i < q.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", q(i));
    s += (i ? "," : "") + std::string(buf);
  }
  return s;
}

/// Scratch directory with a config overlay that keeps planners short.
struct Workspace {
  fs::path dir;
  fs::path config;

  explicit Workspace(const std::string& name) {
    dir = fs::temp_directory_path() / ("rdiff_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    config = dir / "config.json";
    const json overlay = {
        {"robot", std::string(RDIFF_DATA_DIR) + "/robots/panda_like.json"},
        {"methods", {{"planner", {{"max_iters", 20000}, {"refine_iters", 200}, {"shortcut_passes", 100}}}}},
        {"error_log", (dir / "errors.jsonl").string()}};
    std::ofstream(config) << overlay.dump(2);
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string path(const std::string& rel) const { return (dir / rel).string(); }
  std::vector<std::string> args(std::vector<std::string> rest) const {
    rest.insert(rest.begin(), {"--config", config.string()});
    return rest;
  }
};

}  // namespace

TEST_CASE("default config file lists every default") {
  const fs::path file = fs::path(RDIFF_CONFIG_DIR) / "default.json";
  std::ifstream in(file);
  REQUIRE(in);
  const json on_disk = json::parse(in);
  CHECK(on_disk == default_config_json());
  const json loaded = load_config(file);
  CHECK(fs::path(loaded["robot"].get<std::string>()) == fs::path(RDIFF_DATA_DIR) / "robots/panda_like.json");
}

TEST_CASE("config overlay and validation") {
  Workspace ws("config");
  {
    std::ofstream(ws.path("rel.json")) << R"({"robot": "robots/x.json", "eval": {"pos_tol": 0.02}})";
  }
  const json cfg = load_config(ws.path("rel.json"));
  CHECK(cfg["robot"] == ws.path("robots/x.json"));
  CHECK(cfg["eval"]["pos_tol"] == 0.02);
  CHECK(cfg["eval"]["ori_tol_deg"] == 15.0);

  std::ofstream(ws.path("bad.json")) << R"({"diffusion": {"train": {"batch": 0}}})";
  CHECK_THROWS_AS(load_config(ws.path("bad.json")), LoadError);
  std::ofstream(ws.path("junk.json")) << "not json";
  CHECK_THROWS_AS(load_config(ws.path("junk.json")), LoadError);
  CHECK_THROWS_AS(load_config(ws.path("missing.json")), LoadError);

  const Run r = cli({"--config", ws.path("bad.json"), "--error-log", ws.path("e.jsonl"), "eval", "--trajectory", "t",
                     "--scene", "s"});
  CHECK(r.code != 0);
}

TEST_CASE("usage errors exit nonzero") {
  CHECK(cli({}).code != 0);
  CHECK(cli({"fly"}).code != 0);
  CHECK(cli({"plan", "--start", "0"}).code != 0);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("gen-dataset is byte-identical across runs") {
  Workspace ws("gen");
  const Run a = cli(ws.args({"gen-dataset", "--n", "100", "--seed", "7", "--out", ws.path("a.ropd")}));
  REQUIRE(a.code == 0);
  const Run b = cli(ws.args({"gen-dataset", "--n", "100", "--seed", "7", "--out", ws.path("b.ropd")}));
  REQUIRE(b.code == 0);
  CHECK(read_bytes(ws.path("a.ropd")) == read_bytes(ws.path("b.ropd")));
  CHECK(read_bytes(manifest_path(ws.path("a.ropd"))) == read_bytes(manifest_path(ws.path("b.ropd"))));
  CHECK(json::parse(a.out)["counts"]["records"] == 100);
  const Dataset ds = read_dataset(ws.path("a.ropd"), &test::panda());
  CHECK(ds.records.size() == 100);
}

TEST_CASE("bench on an empty task list fails with a diagnostic") {
  Workspace ws("bench_empty");
  std::ofstream(ws.path("tasks.json")) << R"({"tasks": []})";
  const Run r = cli(ws.args({"bench", "--tasks", ws.path("tasks.json"), "--methods", "shared_tree"}));
  CHECK(r.code != 0);
  CHECK(r.err.find("empty") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  std::ifstream log(ws.path("errors.jsonl"));
  std::string line;
  REQUIRE(std::getline(log, line));
  const json entry = json::parse(line);
  CHECK(entry["command"] == "bench");
  CHECK(entry["type"] == "error");
  CHECK(entry["message"].get<std::string>().find("empty") != std::string::npos);
}

TEST_CASE("bench writes reports") {
  Workspace ws("bench");
  const JointConfig a = test::two_sphere_start();
  const JointConfig b = a + JointConfig::Constant(7, 0.05);
  const json tasks = {{"tasks",
                       {{{"name", "near"}, {"scene", scene_to_json(test::two_sphere_scene())}, {"q_init", std::vector<double>(a.data(), a.data() + 7)}, {"q_goal", std::vector<double>(b.data(), b.data() + 7)}},
                        {{"scene", scene_to_json(test::two_sphere_scene())}, {"q_init", std::vector<double>(a.data(), a.data() + 7)}, {"q_goal", std::vector<double>(a.data(), a.data() + 7)}}}}};
  std::ofstream(ws.path("tasks.json")) << tasks.dump();
  const Run r = cli(ws.args({"bench", "--tasks", ws.path("tasks.json"), "--methods", "shared_tree,rrt_star", "--budget",
                             "5", "--out-dir", ws.path("report")}));
  REQUIRE(r.code == 0);
  const json report = json::parse(read_bytes(ws.path("report/report.json")));
  CHECK(report["tasks"] == 2);
  REQUIRE(report["planners"].size() == 2);
  CHECK(report["planners"][0]["successes"] == 2);
  CHECK(read_bytes(ws.path("report/curves.csv")).rfind("planner,time_s,success_rate", 0) == 0);
  CHECK(!read_bytes(ws.path("report/table.txt")).empty());
  CHECK(cli(ws.args({"bench", "--tasks", ws.path("tasks.json"), "--methods", "diffusion"})).code != 0);
}

TEST_CASE("plan prints metrics and writes the trajectory file") {
  Workspace ws("plan");
  const std::string start = csv(test::two_sphere_start()), goal = csv(test::two_sphere_goal());
  const std::string scene = test::data_path("scenes/two_spheres.json");
  const Run r = cli(ws.args({"plan", "--method", "shared_tree", "--scene", scene, "--start", start, "--goal", goal,
                             "--seed", "1", "--out", ws.path("traj.json")}));
  REQUIRE(r.code == 0);
  const json metrics = json::parse(r.out);
  CHECK(metrics["success"] == true);
  CHECK(metrics["min_clearance"].get<double>() >= 0.05);
  const TrajectoryFile t = read_trajectory_file(ws.path("traj.json"));
  CHECK(t.method == "shared_tree");
  CHECK(t.frames.row(0).transpose() == test::two_sphere_start());
  CHECK(t.frames.row(t.frames.rows() - 1).transpose() == test::two_sphere_goal());

  const Run e = cli(ws.args({"eval", "--trajectory", ws.path("traj.json"), "--scene", scene}));
  REQUIRE(e.code == 0);
  const json again = json::parse(e.out);
  CHECK(again["min_clearance"] == metrics["min_clearance"]);
  CHECK(again["path_length"] == metrics["path_length"]);

  const Run trivial = cli(ws.args({"plan", "--scene", scene, "--start", start, "--goal", start, "--out", ws.path("t.json")}));
  REQUIRE(trivial.code == 0);
  CHECK(read_trajectory_file(ws.path("t.json")).frames.rows() == 2);

  const Run bad = cli(ws.args({"plan", "--scene", scene, "--start", "1,2", "--goal", goal}));
  CHECK(bad.code != 0);
  CHECK(bad.err.find("dof") != std::string::npos);
  const Run both = cli(ws.args({"plan", "--scene", scene, "--start", start}));
  CHECK(both.code != 0);
  const Run no_model = cli(ws.args({"plan", "--method", "diffusion", "--scene", scene, "--start", start, "--goal", goal}));
  CHECK(no_model.code != 0);
}

TEST_CASE("train and plan with diffusion through the tool") {
  Workspace ws("diffusion");
  REQUIRE(cli(ws.args({"gen-dataset", "--n", "8", "--seed", "3", "--out", ws.path("d.ropd")})).code == 0);
  const Run c = cli(ws.args({"train-cae", "--dataset", ws.path("d.ropd"), "--out", ws.path("cae.ckpt"), "--steps", "5",
                              "--batch", "4"}));
  REQUIRE(c.code == 0);
  const Run d = cli(ws.args({"train-diffusion", "--dataset", ws.path("d.ropd"), "--cae", ws.path("cae.ckpt"), "--out",
                              ws.path("diff.ckpt"), "--steps", "5", "--batch", "4", "--layers", "1", "--width", "32",
                              "--heads", "2"}));
  REQUIRE(d.code == 0);
  CHECK(fs::exists(DiffusionModel::sidecar_path(ws.path("diff.ckpt"))));

  const std::string start = "1.57,1.23,1.68,1.38,1.31,2.85,1.68";
  const std::string goal = "0.21,1.21,1.78,2.45,1.73,2.62,1.52";
  const Run p = cli(ws.args({"plan", "--method", "diffusion", "--scene", test::data_path("scenes/two_spheres.json"),
                              "--start", start, "--goal", goal, "--model", ws.path("diff.ckpt"), "--cae",
                              ws.path("cae.ckpt"), "--out", ws.path("traj.json")}));
  REQUIRE(p.code == 0);
  const TrajectoryFile t = read_trajectory_file(ws.path("traj.json"));
  CHECK(t.frames.rows() == 50);
  CHECK(t.frames.row(0).transpose() == parse_config(start));
  CHECK(t.frames.row(49).transpose() == parse_config(goal));

  // An encoder other than the one used in training is refused.
  REQUIRE(cli(ws.args({"train-cae", "--dataset", ws.path("d.ropd"), "--out", ws.path("other.ckpt"), "--steps", "5",
                       "--batch", "4", "--seed", "9"}))
              .code == 0);
  const Run mismatch = cli(ws.args({"plan", "--method", "diffusion", "--scene", test::data_path("scenes/two_spheres.json"),
                                     "--start", start, "--goal", goal, "--model", ws.path("diff.ckpt"), "--cae",
                                     ws.path("other.ckpt")}));
  CHECK(mismatch.code != 0);
}

TEST_CASE("trajectory file round trip") {
  TrajectoryFile t{"panda_like", "rrt_star", 5, test::two_sphere_start(), test::two_sphere_goal(), Trajectory::Random(4, 7)};
  const TrajectoryFile back = trajectory_file_from_json(trajectory_file_to_json(t));
  CHECK(back.frames == t.frames);
  CHECK(back.q_goal == t.q_goal);
  CHECK(back.seed == 5);
  json broken = trajectory_file_to_json(t);
  broken["frames"][1] = {1.0};
  CHECK_THROWS_AS(trajectory_file_from_json(broken), LoadError);
  CHECK_THROWS_AS(trajectory_file_from_json(json{{"robot", "x"}}), LoadError);
}

TEST_CASE("task lists load from datasets and json") {
  Workspace ws("tasks");
  std::ofstream(ws.path("bad.json")) << R"({"tasks": [{"scene": {}, "q_init": [0], "q_goal": [0]}]})";
  CHECK_THROWS(load_tasks(ws.path("bad.json"), test::panda()));
  std::ofstream(ws.path("flat.json")) << R"([1, 2])";
  CHECK_THROWS_AS(load_tasks(ws.path("flat.json"), test::panda()), LoadError);
}
