#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rdiff/dataset.hpp"
#include "rdiff/encoder.hpp"
#include "rdiff/nn/ops.hpp"

namespace rdiff {

/// DDPM schedule; vectors are indexed by step 0..T with beta_0 = 0 and alpha_bar_0 = 1.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  static NoiseSchedule linear(int T = 200, double beta_1 = 1e-4, double beta_T = 0.02);
  /// betas for steps 1..T; no range checks so degenerate schedules can be built.
  static NoiseSchedule from_betas(const std::vector<double>& betas);

  void validate() const;
  void check_step(int t) const;
  /// (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t.
  double posterior_variance(int t) const;
};

nlohmann::json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Trajectory q_sample(const NoiseSchedule& s, const Trajectory& x0, int t, const Trajectory& eps);

/// Closed-form mean of q(x_{t-1} | x_t, x0).
Trajectory posterior_mean(const NoiseSchedule& s, const Trajectory& x_t, const Trajectory& x0_hat, int t);

/// Draw from q(x_{t-1} | x_t, x0_hat); t == 1 returns the mean.
Trajectory posterior_step(const NoiseSchedule& s, const Trajectory& x_t, const Trajectory& x0_hat, int t,
                          std::mt19937_64& rng);

struct DenoiserConfig {
  int layers = 8;
  int width = 512;
  int heads = 8;
  int frames = 50;
  int dof = 7;
  double dropout = 0.1;
  int latent_dim = 60;
  int ffn_mult = 4;

  void validate() const;
  /// Condition vector: latent, then q_init, then q_goal.
  int condition_dim() const { return latent_dim + 2 * dof; }
};

nlohmann::json denoiser_config_to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j, DenoiserConfig base = {});

struct LossWeights {
  double joint = 1.0;
  double point = 1.0;
  double collision = 0.5;

  void validate() const;
};

struct Condition {
  Eigen::VectorXd z;
  JointConfig q_init;
  JointConfig q_goal;
  bool null_flag = false;
};

template <typename Scalar>
nn::ParamStore<Scalar> init_denoiser(const DenoiserConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  nn::ParamStore<Scalar> s;
  const int w = c.width;
  nn::add_linear(s, "in", c.dof, w, rng);
  nn::add_linear(s, "time1", w, w, rng);
  nn::add_linear(s, "time2", w, w, rng);
  nn::add_linear(s, "cond1", c.condition_dim(), w, rng);
  nn::add_linear(s, "cond2", w, w, rng);
  s.add("null", {w}, nn::Matrix<Scalar>::Zero(1, w));
  nn::add_linear(s, "tok", w, w, rng);
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    nn::add_layer_norm(s, p + ".ln1", w);
    nn::add_attention(s, p + ".att", w, rng);
    nn::add_layer_norm(s, p + ".ln2", w);
    nn::add_linear(s, p + ".ff1", w, c.ffn_mult * w, rng);
    nn::add_linear(s, p + ".ff2", c.ffn_mult * w, w, rng);
  }
  nn::add_layer_norm(s, "ln_out", w);
  nn::add_linear(s, "out", w, c.dof, rng);
  return s;
}

/// Inputs for one denoiser pass over a batch of B trajectories.
template <typename Scalar>
struct DenoiserInput {
  nn::Matrix<Scalar> x_t;         ///< (B*N) x D, frame-major per element.
  std::vector<int> t;             ///< B diffusion steps.
  nn::Matrix<Scalar> condition;   ///< B x condition_dim.
  std::vector<bool> null_mask;    ///< B flags; true uses the learned null embedding.
};

/// x0-prediction: [z_tk] ++ per-frame projections, plus positional codes, through a pre-LN encoder.
template <typename Scalar>
nn::Var<Scalar> denoiser_forward(nn::Tape<Scalar>& tape, nn::ParamStore<Scalar>& store, const DenoiserConfig& c,
                                 const DenoiserInput<Scalar>& in, double dropout = 0.0,
                                 std::mt19937_64* rng = nullptr) {
  using nn::Matrix;
  const Eigen::Index batch = static_cast<Eigen::Index>(in.t.size());
  const int n = c.frames, w = c.width;
  if (batch == 0 || in.x_t.rows() != batch * n || in.x_t.cols() != c.dof) {
    throw DimensionError("denoiser: x_t must be (batch*" + std::to_string(n) + ") x " + std::to_string(c.dof));
  }
  if (in.condition.rows() != batch || in.condition.cols() != c.condition_dim() ||
      static_cast<Eigen::Index>(in.null_mask.size()) != batch) {
    throw DimensionError("denoiser: condition must be batch x " + std::to_string(c.condition_dim()));
  }
  if (dropout > 0.0 && !rng) throw Error("denoiser: dropout needs an rng");
  auto P = [&](const std::string& name) { return tape.param(store, name); };
  auto lin = [&](const std::string& name, const nn::Var<Scalar>& x) {
    return nn::linear(x, P(name + ".w"), P(name + ".b"));
  };
  auto drop = [&](const nn::Var<Scalar>& x) { return dropout > 0.0 ? nn::dropout(x, dropout, *rng) : x; };

  Matrix<Scalar> temb(batch, w);
  for (Eigen::Index b = 0; b < batch; ++b) temb.row(b) = nn::sinusoidal_embedding<Scalar>(in.t[b], w);
  const auto time_emb = lin("time2", nn::gelu(lin("time1", tape.constant(std::move(temb)))));
  auto cond_emb = lin("cond2", nn::gelu(lin("cond1", tape.constant(in.condition))));
  cond_emb = nn::mask_rows(cond_emb, P("null"), in.null_mask);
  const auto token = lin("tok", nn::add(time_emb, cond_emb));

  const auto frames = lin("in", tape.constant(in.x_t));
  auto h = nn::prepend_token(token, frames, batch);
  Matrix<Scalar> pos(batch * (n + 1), w);
  for (int i = 0; i <= n; ++i) {
    const auto e = nn::sinusoidal_embedding<Scalar>(i, w);
    for (Eigen::Index b = 0; b < batch; ++b) pos.row(b * (n + 1) + i) = e;
  }
  h = nn::add(h, tape.constant(std::move(pos)));

  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    const auto a = nn::layer_norm(h, P(p + ".ln1.g"), P(p + ".ln1.b"));
    h = nn::add(h, drop(nn::multi_head_self_attention(tape, store, p + ".att", a, batch, c.heads)));
    const auto f = nn::layer_norm(h, P(p + ".ln2.g"), P(p + ".ln2.b"));
    h = nn::add(h, drop(lin(p + ".ff2", nn::gelu(lin(p + ".ff1", f)))));
  }
  h = nn::layer_norm(h, P("ln_out.g"), P("ln_out.b"));
  return lin("out", nn::drop_first_token(h, batch));
}

/// 1 x 2 [point, collision] terms for x0_hat rows grouped in `frames`-row elements, element b paired with
/// scenes[b]. point = mean over frames of |FK(x0_hat) - FK(x0)|^2, collision = mean over frames of the
/// mean hinge penalty of FK(x0_hat); both averaged over the batch.
template <typename Scalar>
nn::Var<Scalar> kinematic_losses(const nn::Var<Scalar>& x0_hat, const nn::Matrix<Scalar>& x0,
                                 const RobotModel& model, const std::vector<const Scene*>& scenes, int frames,
                                 double safe_distance) {
  const Eigen::Index rows = x0_hat.rows();
  if (x0.rows() != rows || x0.cols() != x0_hat.cols() || x0_hat.cols() != model.dof() || frames < 1 ||
      rows != static_cast<Eigen::Index>(scenes.size()) * frames) {
    throw DimensionError("kinematic_losses: shape mismatch");
  }
  auto dloss = std::make_shared<nn::Matrix<Scalar>>(rows, model.dof());
  auto dcoll = std::make_shared<nn::Matrix<Scalar>>(rows, model.dof());
  double point = 0.0, coll = 0.0;
  PointSet p_hat;
  Eigen::MatrixXd jac;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const JointConfig q_hat = x0_hat.value().row(r).transpose().template cast<double>();
    const JointConfig q = x0.row(r).transpose().template cast<double>();
    fk_points_with_jacobian(model, q_hat, p_hat, jac);
    const PointSet diff = p_hat - fk_points(model, q);
    point += diff.squaredNorm();
    const Eigen::Map<const Eigen::VectorXd> dflat(diff.data(), diff.size());
    dloss->row(r) = (2.0 * jac.transpose() * dflat).transpose().template cast<Scalar>();
    const CollisionLoss cl = collision_loss(p_hat, *scenes[r / frames], safe_distance);
    coll += cl.value;
    const Eigen::Map<const Eigen::VectorXd> gflat(cl.gradient.data(), cl.gradient.size());
    dcoll->row(r) = (jac.transpose() * gflat).transpose().template cast<Scalar>();
  }
  const double inv = 1.0 / static_cast<double>(rows);
  nn::Matrix<Scalar> out(1, 2);
  out << Scalar(point * inv), Scalar(coll * inv);
  auto& t = x0_hat.tape();
  return t.push(std::move(out), t.requires_grad(x0_hat),
                [x0_hat, dloss, dcoll, inv](nn::Tape<Scalar>& t, const nn::Matrix<Scalar>& g) {
                  t.accumulate(x0_hat, (*dloss * (g(0, 0) * Scalar(inv)) + *dcoll * (g(0, 1) * Scalar(inv))));
                });
}

template <typename Scalar>
struct LossTerms {
  nn::Var<Scalar> total;
  nn::Var<Scalar> joint;
  nn::Var<Scalar> kinematic;  ///< 1 x 2 [point, collision]
};

/// Composite loss for a prediction against clean trajectories x0 ((B*N) x D).
template <typename Scalar>
LossTerms<Scalar> composite_loss(const nn::Var<Scalar>& x0_hat, const nn::Matrix<Scalar>& x0, const RobotModel& model,
                                 const std::vector<const Scene*>& scenes, int frames, const LossWeights& w,
                                 double safe_distance) {
  auto& t = x0_hat.tape();
  LossTerms<Scalar> out;
  out.joint = nn::scale(nn::sum_squares(nn::sub(x0_hat, t.constant(x0))), Scalar(1.0 / x0.rows()));
  nn::Matrix<Scalar> kw(1, 2);
  kw << Scalar(w.point), Scalar(w.collision);
  if (w.point == 0.0 && w.collision == 0.0) {
    out.kinematic = t.constant(nn::Matrix<Scalar>::Zero(1, 2));
    out.total = nn::scale(out.joint, Scalar(w.joint));
    return out;
  }
  out.kinematic = kinematic_losses(x0_hat, x0, model, scenes, frames, safe_distance);
  out.total = nn::weighted_sum<Scalar>({out.joint, nn::sum(nn::mul(out.kinematic, t.constant(kw)))},
                                      {Scalar(w.joint), Scalar(1)});
  return out;
}

struct GuidanceConfig {
  double cfg_scale = 2.0;
  double collision_step = 0.1;
  /// Fraction of the final steps over which collision_step decays linearly to 0.
  double decay_fraction = 0.2;
  double safe_distance = kDefaultSafeDistance;
  int inpaint_prefix = 1;
  int inpaint_suffix = 1;

  void validate(int frames) const;
  double step_scale(int t, int T) const;
};

nlohmann::json guidance_to_json(const GuidanceConfig& g);
GuidanceConfig guidance_from_json(const nlohmann::json& j, GuidanceConfig base = {});

/// w * cond + (1 - w) * null, exact at w = 0 and w = 1.
Trajectory cfg_combine(const Trajectory& null_pred, const Trajectory& cond_pred, double w);

/// Gradient of sum over frames of the mean hinge penalty with respect to the frames.
Trajectory collision_guidance_gradient(const RobotModel& model, const Scene& scene, const Trajectory& x,
                                       double safe_distance, double* value = nullptr);

class DiffusionModel {
 public:
  DenoiserConfig config;
  NoiseSchedule schedule;
  nn::ParamStore<float> params;
  /// Latent standardization fitted on the training scenes.
  Eigen::VectorXd z_mean;
  Eigen::VectorXd z_std;
  LossWeights weights;
  double p_mask = 0.1;
  std::string robot_name;
  std::uint64_t cae_checksum = 0;

  DiffusionModel() = default;
  DiffusionModel(const DenoiserConfig& config, const NoiseSchedule& schedule, std::uint64_t seed);

  nn::Matrix<float> condition_row(const Condition& c) const;
  /// Predictions for several (x_t, t, condition) triples in one pass.
  std::vector<Trajectory> predict_x0_batch(const std::vector<Trajectory>& x_t, const std::vector<int>& t,
                                           const std::vector<Condition>& cond) const;
  Trajectory predict_x0(const Trajectory& x_t, int t, const Condition& cond) const;

  /// Writes the checkpoint and a JSON sidecar next to it.
  void save(const std::string& path) const;
  static DiffusionModel load(const std::string& path);
  static std::string sidecar_path(const std::string& path);
};

Condition make_condition(const CaeModel& cae, const Scene& scene, const JointConfig& q_init,
                         const JointConfig& q_goal);

struct SampleTask {
  Scene scene;
  Condition cond;
};

/// Debug view of one sampling loop step.
struct SampleTraceStep {
  int t = 0;
  Trajectory x_t;            ///< Running sample after inpainting, before prediction.
  Trajectory inpaint_noise;  ///< Noise used for the inpainted frames (rows prefix then suffix).
  Trajectory x0_hat;         ///< Guided prediction.
};

struct SampleResult {
  Trajectory trajectory;
  /// Joint entries moved by the final clamp and the largest correction.
  int clamped = 0;
  double max_clamp = 0.0;
  bool erratic_risk = false;
  std::vector<SampleTraceStep> trace;
};

/// Seeds are per task, so results do not depend on how tasks are batched.
std::vector<SampleResult> sample_batch(const DiffusionModel& model, const RobotModel& robot,
                                       const std::vector<SampleTask>& tasks, const GuidanceConfig& guidance,
                                       const std::vector<std::uint64_t>& seeds, const std::vector<int>& trace_steps = {});

SampleResult sample(const DiffusionModel& model, const RobotModel& robot, const SampleTask& task,
                    const GuidanceConfig& guidance, std::uint64_t seed, const std::vector<int>& trace_steps = {});

struct DiffusionTrainConfig {
  int steps = 5000;
  int batch = 64;
  double lr = 3e-4;
  double p_mask = 0.1;
  LossWeights weights;
  double safe_distance = kDefaultSafeDistance;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json train_config_to_json(const DiffusionTrainConfig& c);
DiffusionTrainConfig train_config_from_json(const nlohmann::json& j, DiffusionTrainConfig base = {});

struct DiffusionTrainLog {
  std::vector<double> loss;
  std::vector<double> joint;
  std::vector<double> point;
  std::vector<double> collision;
  std::int64_t null_conditions = 0;
  std::int64_t total_conditions = 0;
};

using TrainProgressFn = std::function<void(int step, double loss)>;

/// Throws Error when the encoder is not frozen or changes during training.
DiffusionModel train_diffusion(const DiffusionTrainConfig& cfg, const DenoiserConfig& denoiser,
                               const NoiseSchedule& schedule, const std::vector<DatasetRecord>& records,
                               const CaeModel& cae, const RobotModel& robot, DiffusionTrainLog* log = nullptr,
                               const TrainProgressFn& progress = {});

}  // namespace rdiff
