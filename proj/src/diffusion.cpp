#include "rdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rdiff/nn/adam.hpp"
#include "rdiff/nn/checkpoint.hpp"

namespace rdiff {

namespace {

const char* kPrefix = "diff/";
const char* kZMean = "diff/_z_mean";
const char* kZStd = "diff/_z_std";

Trajectory gaussian_like(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Trajectory out(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = n(rng);
  }
  return out;
}

void require_finite(const Trajectory& x, const char* what, int t) {
  if (!x.allFinite()) {
    throw Error(std::string("sample: non-finite values in ") + what + " at step " + std::to_string(t));
  }
}

/// Frames of x that are overwritten by the task endpoints, with the matching endpoint row.
template <typename F>
void for_each_inpaint_row(const GuidanceConfig& g, Eigen::Index frames, F&& f) {
  for (int i = 0; i < g.inpaint_prefix; ++i) f(i, true, i);
  for (int i = 0; i < g.inpaint_suffix; ++i) f(frames - 1 - i, false, g.inpaint_prefix + i);
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int T, double beta_1, double beta_T) {
  if (T < 1) throw Error("NoiseSchedule: T must be >= 1");
  std::vector<double> betas(T);
  for (int t = 0; t < T; ++t) betas[t] = T == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * t / (T - 1);
  NoiseSchedule s = from_betas(betas);
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::from_betas(const std::vector<double>& betas) {
  if (betas.empty()) throw Error("NoiseSchedule: at least one step required");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.betas.assign(1, 0.0);
  s.betas.insert(s.betas.end(), betas.begin(), betas.end());
  s.alphas.resize(s.T + 1);
  s.alpha_bars.resize(s.T + 1);
  s.alphas[0] = 1.0;
  s.alpha_bars[0] = 1.0;
  for (int t = 1; t <= s.T; ++t) {
    s.alphas[t] = 1.0 - s.betas[t];
    s.alpha_bars[t] = s.alpha_bars[t - 1] * s.alphas[t];
  }
  return s;
}

void NoiseSchedule::validate() const {
  if (T < 1 || betas.size() != static_cast<std::size_t>(T + 1) || alphas.size() != betas.size() ||
      alpha_bars.size() != betas.size()) {
    throw Error("NoiseSchedule: inconsistent sizes");
  }
  for (int t = 1; t <= T; ++t) {
    if (!(betas[t] > 0.0 && betas[t] < 1.0)) throw Error("NoiseSchedule: beta_t must lie in (0, 1)");
    if (t > 1 && betas[t] < betas[t - 1]) throw Error("NoiseSchedule: betas must be non-decreasing");
    if (!(alpha_bars[t] < alpha_bars[t - 1])) throw Error("NoiseSchedule: alpha_bar must strictly decrease");
  }
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > T) throw Error("NoiseSchedule: step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

double NoiseSchedule::posterior_variance(int t) const {
  check_step(t);
  const double denom = 1.0 - alpha_bars[t];
  if (denom <= 0.0) return 0.0;
  return (1.0 - alpha_bars[t - 1]) / denom * betas[t];
}

nlohmann::json schedule_to_json(const NoiseSchedule& s) {
  return {{"T", s.T}, {"betas", std::vector<double>(s.betas.begin() + 1, s.betas.end())}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  NoiseSchedule s = NoiseSchedule::from_betas(j.at("betas").get<std::vector<double>>());
  if (j.value("T", s.T) != s.T) throw LoadError("NoiseSchedule: T does not match the beta count");
  s.validate();
  return s;
}

Trajectory q_sample(const NoiseSchedule& s, const Trajectory& x0, int t, const Trajectory& eps) {
  s.check_step(t);
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) throw DimensionError("q_sample: eps shape differs from x0");
  return std::sqrt(s.alpha_bars[t]) * x0 + std::sqrt(1.0 - s.alpha_bars[t]) * eps;
}

Trajectory posterior_mean(const NoiseSchedule& s, const Trajectory& x_t, const Trajectory& x0_hat, int t) {
  s.check_step(t);
  if (x_t.rows() != x0_hat.rows() || x_t.cols() != x0_hat.cols()) {
    throw DimensionError("posterior_mean: x_t and x0_hat differ in shape");
  }
  const double denom = 1.0 - s.alpha_bars[t];
  if (denom <= 0.0) return x_t;
  const double c0 = std::sqrt(s.alpha_bars[t - 1]) * s.betas[t] / denom;
  const double ct = std::sqrt(s.alphas[t]) * (1.0 - s.alpha_bars[t - 1]) / denom;
  return c0 * x0_hat + ct * x_t;
}

Trajectory posterior_step(const NoiseSchedule& s, const Trajectory& x_t, const Trajectory& x0_hat, int t,
                          std::mt19937_64& rng) {
  Trajectory mean = posterior_mean(s, x_t, x0_hat, t);
  if (t == 1) return mean;
  const double sigma = std::sqrt(s.posterior_variance(t));
  return mean + sigma * gaussian_like(mean.rows(), mean.cols(), rng);
}

void DenoiserConfig::validate() const {
  if (layers < 0) throw Error("DenoiserConfig: layers must be >= 0");
  if (width < 2 || width % 2 != 0) throw Error("DenoiserConfig: width must be even and >= 2");
  if (heads < 1 || width % heads != 0) throw Error("DenoiserConfig: width must be divisible by heads");
  if (frames < 2) throw Error("DenoiserConfig: frames must be >= 2");
  if (dof < 1 || latent_dim < 1 || ffn_mult < 1) throw Error("DenoiserConfig: dof, latent_dim and ffn_mult must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("DenoiserConfig: dropout must lie in [0, 1)");
}

nlohmann::json denoiser_config_to_json(const DenoiserConfig& c) {
  return {{"layers", c.layers},   {"width", c.width},           {"heads", c.heads},
          {"frames", c.frames},   {"dof", c.dof},               {"dropout", c.dropout},
          {"latent_dim", c.latent_dim}, {"ffn_mult", c.ffn_mult}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j, DenoiserConfig c) {
  c.layers = j.value("layers", c.layers);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.frames = j.value("frames", c.frames);
  c.dof = j.value("dof", c.dof);
  c.dropout = j.value("dropout", c.dropout);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.validate();
  return c;
}

void LossWeights::validate() const {
  if (joint < 0.0 || point < 0.0 || collision < 0.0) throw Error("LossWeights: weights must be non-negative");
  if (joint == 0.0 && point == 0.0 && collision == 0.0) throw Error("LossWeights: all weights are zero");
}

void GuidanceConfig::validate(int frames) const {
  if (!(cfg_scale >= 0.0)) throw Error("GuidanceConfig: cfg_scale must be >= 0");
  if (!(collision_step >= 0.0)) throw Error("GuidanceConfig: collision_step must be >= 0");
  if (!(decay_fraction >= 0.0 && decay_fraction <= 1.0)) throw Error("GuidanceConfig: decay_fraction must lie in [0, 1]");
  if (!(safe_distance >= 0.0)) throw Error("GuidanceConfig: safe_distance must be >= 0");
  if (inpaint_prefix < 0 || inpaint_suffix < 0 || inpaint_prefix + inpaint_suffix >= frames) {
    throw Error("GuidanceConfig: inpaint_prefix + inpaint_suffix must be < frames");
  }
}

double GuidanceConfig::step_scale(int t, int T) const {
  const double window = decay_fraction * T;
  if (window <= 0.0 || t >= window) return collision_step;
  return collision_step * t / window;
}

nlohmann::json guidance_to_json(const GuidanceConfig& g) {
  return {{"cfg_scale", g.cfg_scale},         {"collision_step", g.collision_step},
          {"decay_fraction", g.decay_fraction}, {"safe_distance", g.safe_distance},
          {"inpaint_prefix", g.inpaint_prefix}, {"inpaint_suffix", g.inpaint_suffix}};
}

GuidanceConfig guidance_from_json(const nlohmann::json& j, GuidanceConfig g) {
  g.cfg_scale = j.value("cfg_scale", g.cfg_scale);
  g.collision_step = j.value("collision_step", g.collision_step);
  g.decay_fraction = j.value("decay_fraction", g.decay_fraction);
  g.safe_distance = j.value("safe_distance", g.safe_distance);
  g.inpaint_prefix = j.value("inpaint_prefix", g.inpaint_prefix);
  g.inpaint_suffix = j.value("inpaint_suffix", g.inpaint_suffix);
  return g;
}

Trajectory cfg_combine(const Trajectory& null_pred, const Trajectory& cond_pred, double w) {
  if (null_pred.rows() != cond_pred.rows() || null_pred.cols() != cond_pred.cols()) {
    throw DimensionError("cfg_combine: prediction shapes differ");
  }
  return w * cond_pred + (1.0 - w) * null_pred;
}

Trajectory collision_guidance_gradient(const RobotModel& model, const Scene& scene, const Trajectory& x,
                                       double safe_distance, double* value) {
  if (x.cols() != model.dof()) throw DimensionError("collision_guidance_gradient: trajectory has wrong dof");
  Trajectory grad = Trajectory::Zero(x.rows(), x.cols());
  double total = 0.0;
  PointSet points;
  Eigen::MatrixXd jac;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    fk_points_with_jacobian(model, x.row(r).transpose(), points, jac);
    const CollisionLoss cl = collision_loss(points, scene, safe_distance);
    total += cl.value;
    if (cl.value == 0.0) continue;
    const Eigen::Map<const Eigen::VectorXd> g(cl.gradient.data(), cl.gradient.size());
    grad.row(r) = (jac.transpose() * g).transpose();
  }
  if (value) *value = total;
  return grad;
}

DiffusionModel::DiffusionModel(const DenoiserConfig& c, const NoiseSchedule& s, std::uint64_t seed)
    : config(c),
      schedule(s),
      params(init_denoiser<float>(c, seed)),
      z_mean(Eigen::VectorXd::Zero(c.latent_dim)),
      z_std(Eigen::VectorXd::Ones(c.latent_dim)) {
  schedule.validate();
}

nn::Matrix<float> DiffusionModel::condition_row(const Condition& c) const {
  if (c.z.size() != config.latent_dim || c.q_init.size() != config.dof || c.q_goal.size() != config.dof) {
    throw DimensionError("DiffusionModel: condition does not match the denoiser config");
  }
  nn::Matrix<float> row(1, config.condition_dim());
  row.leftCols(config.latent_dim) = ((c.z - z_mean).cwiseQuotient(z_std)).transpose().cast<float>();
  row.middleCols(config.latent_dim, config.dof) = c.q_init.transpose().cast<float>();
  row.rightCols(config.dof) = c.q_goal.transpose().cast<float>();
  return row;
}

std::vector<Trajectory> DiffusionModel::predict_x0_batch(const std::vector<Trajectory>& x_t, const std::vector<int>& t,
                                                         const std::vector<Condition>& cond) const {
  if (x_t.size() != t.size() || x_t.size() != cond.size() || x_t.empty()) {
    throw DimensionError("predict_x0_batch: inputs must be non-empty and equally sized");
  }
  const int n = config.frames, d = config.dof;
  const Eigen::Index batch = static_cast<Eigen::Index>(x_t.size());
  DenoiserInput<float> in;
  in.x_t.resize(batch * n, d);
  in.condition.resize(batch, config.condition_dim());
  in.t = t;
  in.null_mask.resize(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (x_t[b].rows() != n || x_t[b].cols() != d) {
      throw DimensionError("predict_x0: x_t must be " + std::to_string(n) + "x" + std::to_string(d));
    }
    schedule.check_step(t[b]);
    in.x_t.middleRows(b * n, n) = x_t[b].cast<float>();
    in.condition.row(b) = condition_row(cond[b]);
    in.null_mask[b] = cond[b].null_flag;
  }
  // The tape only reads parameter values here; nothing is written without backward().
  auto& store = const_cast<nn::ParamStore<float>&>(params);
  nn::Tape<float> tape;
  const auto out = denoiser_forward(tape, store, config, in);
  std::vector<Trajectory> result(batch);
  for (Eigen::Index b = 0; b < batch; ++b) result[b] = out.value().middleRows(b * n, n).cast<double>();
  return result;
}

Trajectory DiffusionModel::predict_x0(const Trajectory& x_t, int t, const Condition& cond) const {
  return predict_x0_batch({x_t}, {t}, {cond}).front();
}

std::string DiffusionModel::sidecar_path(const std::string& path) { return path + ".json"; }

void DiffusionModel::save(const std::string& path) const {
  nn::ParamStore<float> out;
  nn::merge_prefixed(out, params, kPrefix);
  out.add(kZMean, {config.latent_dim}, z_mean.transpose().cast<float>());
  out.add(kZStd, {config.latent_dim}, z_std.transpose().cast<float>());
  nn::save_checkpoint(out, path);
  const nlohmann::json side = {{"schedule", schedule_to_json(schedule)},
                               {"denoiser", denoiser_config_to_json(config)},
                               {"loss_weights", {{"joint", weights.joint}, {"point", weights.point},
                                                 {"collision", weights.collision}}},
                               {"p_mask", p_mask},
                               {"robot_name", robot_name},
                               {"cae_checksum", cae_checksum}};
  std::ofstream f(sidecar_path(path));
  if (!f) throw Error("DiffusionModel: cannot write '" + sidecar_path(path) + "'");
  f << side.dump(2) << "\n";
}

DiffusionModel DiffusionModel::load(const std::string& path) {
  std::ifstream f(sidecar_path(path));
  if (!f) throw LoadError("DiffusionModel: missing sidecar '" + sidecar_path(path) + "'");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("DiffusionModel: bad sidecar: ") + e.what());
  }
  const nn::ParamStore<float> all = nn::load_checkpoint(path);
  DiffusionModel m;
  try {
    m.config = denoiser_config_from_json(side.at("denoiser"));
    m.schedule = schedule_from_json(side.at("schedule"));
    const auto& w = side.at("loss_weights");
    m.weights = {w.at("joint").get<double>(), w.at("point").get<double>(), w.at("collision").get<double>()};
    m.p_mask = side.at("p_mask").get<double>();
    m.robot_name = side.at("robot_name").get<std::string>();
    m.cae_checksum = side.at("cae_checksum").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("DiffusionModel: bad sidecar: ") + e.what());
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw LoadError(std::string("DiffusionModel: bad sidecar: ") + e.what());
  }
  if (!all.contains(kZMean) || !all.contains(kZStd)) throw LoadError("DiffusionModel: missing latent statistics");
  m.z_mean = all.at(kZMean).value.row(0).transpose().cast<double>();
  m.z_std = all.at(kZStd).value.row(0).transpose().cast<double>();
  if (m.z_mean.size() != m.config.latent_dim || m.z_std.size() != m.config.latent_dim) {
    throw LoadError("DiffusionModel: latent statistics do not match latent_dim");
  }
  nn::ParamStore<float> stored = nn::extract_prefix(all, kPrefix);
  const nn::ParamStore<float> expected = init_denoiser<float>(m.config, 0);
  for (const auto& p : expected.params()) {
    if (!stored.contains(p.name)) throw LoadError("DiffusionModel: missing parameter '" + p.name + "'");
    const auto& s = stored.at(p.name);
    if (s.shape != p.shape) throw LoadError("DiffusionModel: parameter '" + p.name + "' has the wrong shape");
    m.params.add(p.name, p.shape, s.value);
  }
  if (stored.size() != expected.size() + 2) throw LoadError("DiffusionModel: unexpected extra parameters");
  return m;
}

Condition make_condition(const CaeModel& cae, const Scene& scene, const JointConfig& q_init,
                         const JointConfig& q_goal) {
  Condition c;
  c.z = cae.encode_scene(scene).cast<double>();
  c.q_init = q_init;
  c.q_goal = q_goal;
  return c;
}

std::vector<SampleResult> sample_batch(const DiffusionModel& model, const RobotModel& robot,
                                       const std::vector<SampleTask>& tasks, const GuidanceConfig& guidance,
                                       const std::vector<std::uint64_t>& seeds, const std::vector<int>& trace_steps) {
  const DenoiserConfig& c = model.config;
  guidance.validate(c.frames);
  if (tasks.size() != seeds.size()) throw DimensionError("sample_batch: one seed per task required");
  if (robot.dof() != c.dof) throw DimensionError("sample_batch: robot dof does not match the model");
  const NoiseSchedule& s = model.schedule;
  const std::size_t B = tasks.size();
  const Eigen::Index n = c.frames;
  const int n_inpaint = guidance.inpaint_prefix + guidance.inpaint_suffix;

  std::vector<std::mt19937_64> rngs;
  std::vector<Trajectory> x(B), endpoints(B);
  std::vector<SampleResult> results(B);
  for (std::size_t b = 0; b < B; ++b) {
    const Condition& cond = tasks[b].cond;
    if (cond.q_init.size() != c.dof || cond.q_goal.size() != c.dof) {
      throw DimensionError("sample_batch: condition endpoints have the wrong dof");
    }
    rngs.emplace_back(seeds[b]);
    x[b] = gaussian_like(n, c.dof, rngs[b]);
    endpoints[b].resize(std::max(n_inpaint, 1), c.dof);
    for_each_inpaint_row(guidance, n, [&](Eigen::Index, bool start, int k) {
      endpoints[b].row(k) = (start ? cond.q_init : cond.q_goal).transpose();
    });
  }

  std::vector<Trajectory> inputs(2 * B);
  std::vector<int> steps(2 * B);
  std::vector<Condition> conds(2 * B);
  for (std::size_t b = 0; b < B; ++b) {
    conds[2 * b] = tasks[b].cond;
    conds[2 * b].null_flag = false;
    conds[2 * b + 1] = tasks[b].cond;
    conds[2 * b + 1].null_flag = true;
  }

  for (int t = s.T; t >= 1; --t) {
    const bool traced = std::find(trace_steps.begin(), trace_steps.end(), t) != trace_steps.end();
    const double eta = guidance.step_scale(t, s.T);
    for (std::size_t b = 0; b < B; ++b) {
      if (n_inpaint > 0) {
        const Trajectory eps = gaussian_like(n_inpaint, c.dof, rngs[b]);
        const Trajectory noisy = q_sample(s, endpoints[b].topRows(n_inpaint), t, eps);
        for_each_inpaint_row(guidance, n, [&](Eigen::Index row, bool, int k) { x[b].row(row) = noisy.row(k); });
        if (traced) {
          SampleTraceStep st;
          st.t = t;
          st.x_t = x[b];
          st.inpaint_noise = eps;
          results[b].trace.push_back(std::move(st));
        }
      } else if (traced) {
        results[b].trace.push_back({t, x[b], Trajectory(0, c.dof), Trajectory()});
      }
      inputs[2 * b] = x[b];
      inputs[2 * b + 1] = x[b];
      steps[2 * b] = steps[2 * b + 1] = t;
    }
    const std::vector<Trajectory> pred = model.predict_x0_batch(inputs, steps, conds);
    for (std::size_t b = 0; b < B; ++b) {
      Trajectory x0 = cfg_combine(pred[2 * b + 1], pred[2 * b], guidance.cfg_scale);
      require_finite(x0, "the denoiser prediction", t);
      if (eta > 0.0) {
        x0 -= eta * collision_guidance_gradient(robot, tasks[b].scene, x0, guidance.safe_distance);
        require_finite(x0, "the guided prediction", t);
      }
      for_each_inpaint_row(guidance, n, [&](Eigen::Index row, bool, int k) { x0.row(row) = endpoints[b].row(k); });
      if (traced) results[b].trace.back().x0_hat = x0;
      x[b] = posterior_step(s, x[b], x0, t, rngs[b]);
      require_finite(x[b], "the running sample", t);
    }
  }

  for (std::size_t b = 0; b < B; ++b) {
    for_each_inpaint_row(guidance, n, [&](Eigen::Index row, bool, int k) { x[b].row(row) = endpoints[b].row(k); });
    SampleResult& r = results[b];
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < c.dof; ++j) {
        const JointSpec& js = robot.joints()[j];
        const double v = x[b](i, j);
        const double clamped = std::clamp(v, js.limit_lo, js.limit_hi);
        if (clamped != v) {
          ++r.clamped;
          r.max_clamp = std::max(r.max_clamp, std::abs(v - clamped));
          x[b](i, j) = clamped;
        }
      }
    }
    r.erratic_risk = r.max_clamp > 1e-3;
    r.trajectory = std::move(x[b]);
  }
  return results;
}

SampleResult sample(const DiffusionModel& model, const RobotModel& robot, const SampleTask& task,
                    const GuidanceConfig& guidance, std::uint64_t seed, const std::vector<int>& trace_steps) {
  return sample_batch(model, robot, {task}, guidance, {seed}, trace_steps).front();
}

void DiffusionTrainConfig::validate() const {
  if (steps < 0 || batch < 1) throw Error("DiffusionTrainConfig: steps >= 0 and batch >= 1 required");
  if (!(lr > 0.0)) throw Error("DiffusionTrainConfig: lr must be positive");
  if (!(p_mask >= 0.0 && p_mask <= 1.0)) throw Error("DiffusionTrainConfig: p_mask must lie in [0, 1]");
  if (!(safe_distance >= 0.0)) throw Error("DiffusionTrainConfig: safe_distance must be >= 0");
  weights.validate();
}

nlohmann::json train_config_to_json(const DiffusionTrainConfig& c) {
  return {{"steps", c.steps},
          {"batch", c.batch},
          {"lr", c.lr},
          {"p_mask", c.p_mask},
          {"loss_weights", {{"joint", c.weights.joint}, {"point", c.weights.point}, {"collision", c.weights.collision}}},
          {"safe_distance", c.safe_distance},
          {"seed", c.seed}};
}

DiffusionTrainConfig train_config_from_json(const nlohmann::json& j, DiffusionTrainConfig c) {
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.p_mask = j.value("p_mask", c.p_mask);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    c.weights.joint = w.value("joint", c.weights.joint);
    c.weights.point = w.value("point", c.weights.point);
    c.weights.collision = w.value("collision", c.weights.collision);
  }
  c.safe_distance = j.value("safe_distance", c.safe_distance);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

DiffusionModel train_diffusion(const DiffusionTrainConfig& cfg, const DenoiserConfig& denoiser,
                               const NoiseSchedule& schedule, const std::vector<DatasetRecord>& records,
                               const CaeModel& cae, const RobotModel& robot, DiffusionTrainLog* log,
                               const TrainProgressFn& progress) {
  cfg.validate();
  if (!cae.frozen()) throw Error("train_diffusion: the encoder must be frozen before diffusion training");
  cae.verify_frozen();
  if (records.empty()) throw Error("train_diffusion: empty dataset");
  if (denoiser.dof != robot.dof()) throw DimensionError("train_diffusion: denoiser dof does not match the robot");
  if (denoiser.latent_dim != cae.config().latent_dim) {
    throw DimensionError("train_diffusion: denoiser latent_dim does not match the encoder");
  }
  const int n = denoiser.frames, d = denoiser.dof;
  for (const auto& r : records) {
    if (r.trajectory.rows() != n || r.trajectory.cols() != d) {
      throw DimensionError("train_diffusion: records must have " + std::to_string(n) + "x" + std::to_string(d) +
                           " trajectories");
    }
  }

  DiffusionModel model(denoiser, schedule, cfg.seed);
  model.weights = cfg.weights;
  model.p_mask = cfg.p_mask;
  model.robot_name = robot.name();
  model.cae_checksum = cae.frozen_checksum();

  const std::size_t R = records.size();
  std::vector<Condition> conds(R);
  Eigen::MatrixXd zs(static_cast<Eigen::Index>(R), denoiser.latent_dim);
  for (std::size_t i = 0; i < R; ++i) {
    conds[i] = make_condition(cae, records[i].scene, records[i].q_init, records[i].q_goal);
    zs.row(static_cast<Eigen::Index>(i)) = conds[i].z.transpose();
  }
  model.z_mean = zs.colwise().mean().transpose();
  model.z_std = ((zs.rowwise() - model.z_mean.transpose()).array().square().colwise().mean().sqrt()).transpose();
  for (Eigen::Index k = 0; k < model.z_std.size(); ++k) {
    if (!(model.z_std(k) > 1e-6)) model.z_std(k) = 1.0;
  }

  nn::AdamState<float> adam;
  adam.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
  std::uniform_int_distribution<std::size_t> pick(0, R - 1);
  std::uniform_int_distribution<int> step_dist(1, schedule.T);
  std::bernoulli_distribution mask(cfg.p_mask);
  std::normal_distribution<double> normal(0.0, 1.0);

  const Eigen::Index B = cfg.batch;
  DenoiserInput<float> in;
  in.x_t.resize(B * n, d);
  in.condition.resize(B, denoiser.condition_dim());
  in.t.resize(B);
  in.null_mask.resize(B);
  nn::Matrix<float> x0(B * n, d);
  std::vector<const Scene*> scenes(B);

  for (int step = 0; step < cfg.steps; ++step) {
    for (Eigen::Index b = 0; b < B; ++b) {
      const std::size_t idx = pick(rng);
      const int t = step_dist(rng);
      const double a = std::sqrt(schedule.alpha_bars[t]), sg = std::sqrt(1.0 - schedule.alpha_bars[t]);
      const Trajectory& traj = records[idx].trajectory;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
          in.x_t(b * n + i, j) = static_cast<float>(a * traj(i, j) + sg * normal(rng));
          x0(b * n + i, j) = static_cast<float>(traj(i, j));
        }
      }
      in.t[b] = t;
      in.condition.row(b) = model.condition_row(conds[idx]);
      in.null_mask[b] = mask(rng);
      scenes[b] = &records[idx].scene;
      if (log) {
        log->null_conditions += in.null_mask[b] ? 1 : 0;
        ++log->total_conditions;
      }
    }
    model.params.zero_grad();
    nn::Tape<float> tape;
    const auto pred = denoiser_forward(tape, model.params, denoiser, in, denoiser.dropout, &rng);
    const auto terms = composite_loss(pred, x0, robot, scenes, n, cfg.weights, cfg.safe_distance);
    tape.backward(terms.total);
    nn::adam_step(model.params, adam);
    const double loss = terms.total.value()(0, 0);
    if (log) {
      log->loss.push_back(loss);
      log->joint.push_back(terms.joint.value()(0, 0));
      log->point.push_back(terms.kinematic.value()(0, 0));
      log->collision.push_back(terms.kinematic.value()(0, 1));
    }
    if (progress) progress(step, loss);
  }
  cae.verify_frozen();
  if (cae.frozen_checksum() != model.cae_checksum) throw Error("train_diffusion: encoder changed during training");
  return model;
}

}  // namespace rdiff
