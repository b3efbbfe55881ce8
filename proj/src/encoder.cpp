#include "rdiff/encoder.hpp"

#include "rdiff/nn/adam.hpp"
#include "rdiff/nn/checkpoint.hpp"

namespace rdiff {

namespace {

const char* kPrefix = "cae/";
const char* kChecksumEntry = "cae/_checksum";

nn::Matrix<float> mlp(const nn::ParamStore<float>& store, const char* side, nn::Matrix<float> h) {
  int layers = 0;
  while (store.contains(side + std::to_string(layers) + ".w")) ++layers;
  for (int i = 0; i < layers; ++i) {
    const std::string n = side + std::to_string(i);
    nn::Matrix<float> next(h.rows(), store.at(n + ".w").value.cols());
    next.noalias() = h * store.at(n + ".w").value;
    next.rowwise() += store.at(n + ".b").value.row(0);
    if (i + 1 < layers) next = next.cwiseMax(0.0f);
    h = std::move(next);
  }
  return h;
}

}  // namespace

void CaeConfig::validate() const {
  if (input_dim < 3 || input_dim % 3 != 0) throw Error("CaeConfig: input_dim must be a positive multiple of 3");
  if (latent_dim < 1) throw Error("CaeConfig: latent_dim must be >= 1");
  for (int h : hidden) {
    if (h < 1) throw Error("CaeConfig: hidden sizes must be >= 1");
  }
  if (lambda_reg < 0.0) throw Error("CaeConfig: lambda_reg must be >= 0");
  if (steps < 0 || batch < 1) throw Error("CaeConfig: steps >= 0 and batch >= 1 required");
  if (!(lr > 0.0)) throw Error("CaeConfig: lr must be positive");
}

nlohmann::json cae_config_to_json(const CaeConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden", c.hidden}, {"latent_dim", c.latent_dim},
          {"lambda_reg", c.lambda_reg}, {"steps", c.steps},   {"batch", c.batch},
          {"lr", c.lr},               {"seed", c.seed}};
}

CaeConfig cae_config_from_json(const nlohmann::json& j) {
  CaeConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

CaeModel::CaeModel(const CaeConfig& config, std::uint64_t seed)
    : config_(config), params_(init_cae_params<float>(config, seed)) {}

CaeModel::CaeModel(const CaeConfig& config, nn::ParamStore<float> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const auto expect = init_cae_params<float>(config_, 0);
  if (expect.size() != params_.size()) throw LoadError("CaeModel: parameter set does not match the configuration");
  for (std::size_t i = 0; i < expect.size(); ++i) {
    if (expect.at(i).name != params_.at(i).name || expect.at(i).shape != params_.at(i).shape) {
      throw LoadError("CaeModel: unexpected parameter '" + params_.at(i).name + "'");
    }
  }
}

nn::ParamStore<float>& CaeModel::mutable_params() {
  if (frozen_) throw Error("CaeModel: parameters are frozen");
  return params_;
}

void CaeModel::freeze() {
  frozen_ = true;
  frozen_checksum_ = params_.checksum();
}

void CaeModel::verify_frozen() const {
  if (!frozen_) throw Error("CaeModel: encoder is not frozen");
  if (params_.checksum() != frozen_checksum_) throw Error("CaeModel: frozen parameters were modified");
}

nn::Matrix<float> CaeModel::encode_batch(const nn::Matrix<float>& clouds) const {
  if (clouds.cols() != config_.input_dim) {
    throw DimensionError("encode: expected " + std::to_string(config_.input_dim) + " inputs, got " +
                         std::to_string(clouds.cols()));
  }
  return mlp(params_, "enc", clouds);
}

Eigen::VectorXf CaeModel::encode(const ObstaclePointCloud& cloud) const {
  const Eigen::VectorXf flat = cloud.flattened();
  const nn::Matrix<float> z = encode_batch(flat.transpose());
  return z.row(0).transpose();
}

Eigen::VectorXf CaeModel::encode_scene(const Scene& scene) const {
  return encode(sample_point_cloud(scene, config_.num_points(), kEncodeCloudSeed));
}

nn::Matrix<float> CaeModel::reconstruct(const nn::Matrix<float>& clouds) const {
  return mlp(params_, "dec", encode_batch(clouds));
}

double CaeModel::reconstruction_error(const nn::Matrix<float>& clouds) const {
  const nn::Matrix<float> r = reconstruct(clouds);
  return (r - clouds).cast<double>().squaredNorm() / (config_.num_points() * static_cast<double>(clouds.rows()));
}

void CaeModel::save(const std::string& path) const {
  nn::ParamStore<float> out;
  nn::merge_prefixed(out, params_, kPrefix);
  if (frozen_) {
    nn::Matrix<float> chunks(1, 4);
    for (int i = 0; i < 4; ++i) chunks(0, i) = static_cast<float>((frozen_checksum_ >> (16 * i)) & 0xFFFF);
    out.add(kChecksumEntry, {4}, chunks);
  }
  nn::save_checkpoint(out, path);
}

CaeModel CaeModel::load(const std::string& path) {
  const nn::ParamStore<float> all = nn::load_checkpoint(path);
  nn::ParamStore<float> params;
  for (const auto& p : all.params()) {
    if (p.name != kChecksumEntry && p.name.rfind(kPrefix, 0) == 0) params.add(p.name.substr(4), p.shape, p.value);
  }
  const int layers = cae_layers(params);
  if (layers < 1) throw LoadError("CaeModel: no encoder layers in '" + path + "'");
  CaeConfig c;
  c.input_dim = static_cast<int>(params.at("enc0.w").shape[0]);
  c.hidden.clear();
  for (int i = 0; i + 1 < layers; ++i) c.hidden.push_back(static_cast<int>(params.at("enc" + std::to_string(i) + ".w").shape[1]));
  c.latent_dim = static_cast<int>(params.at("enc" + std::to_string(layers - 1) + ".w").shape[1]);
  CaeModel model(c, std::move(params));
  if (all.contains(kChecksumEntry)) {
    const auto& chunks = all.at(kChecksumEntry).value;
    if (chunks.size() != 4) throw LoadError("CaeModel: malformed checksum entry");
    std::uint64_t recorded = 0;
    for (int i = 0; i < 4; ++i) recorded |= static_cast<std::uint64_t>(chunks(0, i)) << (16 * i);
    model.freeze();
    if (model.frozen_checksum_ != recorded) throw LoadError("CaeModel: checksum mismatch in '" + path + "'");
  }
  return model;
}

nn::Matrix<float> stack_clouds(const std::vector<ObstaclePointCloud>& clouds) {
  if (clouds.empty()) return {};
  nn::Matrix<float> out(static_cast<Eigen::Index>(clouds.size()), 3 * clouds.front().size());
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    if (clouds[i].size() != clouds.front().size()) throw DimensionError("stack_clouds: clouds differ in size");
    out.row(static_cast<Eigen::Index>(i)) = clouds[i].flattened().transpose();
  }
  return out;
}

CaeModel train_cae(const CaeConfig& config, const std::vector<ObstaclePointCloud>& clouds, CaeTrainLog* log) {
  config.validate();
  if (clouds.empty()) throw Error("train_cae: empty dataset");
  const nn::Matrix<float> data = stack_clouds(clouds);
  if (data.cols() != config.input_dim) {
    throw DimensionError("train_cae: clouds have " + std::to_string(data.cols()) + " coordinates, config expects " +
                         std::to_string(config.input_dim));
  }
  CaeModel model(config, config.seed);
  nn::ParamStore<float>& store = model.mutable_params();
  store.at("dec" + std::to_string(cae_layers(store) - 1) + ".b").value = data.colwise().mean();
  nn::AdamState<float> adam;
  adam.lr = config.lr;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
  const Eigen::Index b = std::min<Eigen::Index>(config.batch, data.rows());
  nn::Matrix<float> batch(b, data.cols());
  for (int step = 0; step < config.steps; ++step) {
    for (Eigen::Index r = 0; r < b; ++r) batch.row(r) = data.row(b == data.rows() ? r : pick(rng));
    store.zero_grad();
    nn::Tape<float> tape;
    const auto loss = cae_loss(tape, store, batch, config.lambda_reg);
    tape.backward(loss);
    nn::adam_step(store, adam);
    if (log) log->losses.push_back(loss.value()(0, 0));
  }
  model.freeze();
  return model;
}

}  // namespace rdiff
