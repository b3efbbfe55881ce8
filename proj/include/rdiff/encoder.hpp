#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdiff/nn/ops.hpp"
#include "rdiff/world.hpp"

namespace rdiff {

/// Seed of the cloud observed when a scene is embedded.
inline constexpr std::uint64_t kEncodeCloudSeed = 0;

struct CaeConfig {
  int input_dim = 3 * kDefaultCloudPoints;
  std::vector<int> hidden = {786, 512, 256};
  int latent_dim = 60;
  double lambda_reg = 1e-3;
  int steps = 2000;
  int batch = 32;
  double lr = 3e-4;
  std::uint64_t seed = 0;

  void validate() const;
  int num_points() const { return input_dim / 3; }
};

nlohmann::json cae_config_to_json(const CaeConfig& c);
CaeConfig cae_config_from_json(const nlohmann::json& j);

/// Encoder layers "enc0".."encL" then the mirrored decoder "dec0".."decL".
template <typename Scalar>
nn::ParamStore<Scalar> init_cae_params(const CaeConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  nn::ParamStore<Scalar> store;
  std::vector<int> dims = {c.input_dim};
  dims.insert(dims.end(), c.hidden.begin(), c.hidden.end());
  dims.push_back(c.latent_dim);
  const int layers = static_cast<int>(dims.size()) - 1;
  for (int i = 0; i < layers; ++i) nn::add_linear(store, "enc" + std::to_string(i), dims[i], dims[i + 1], rng);
  for (int i = 0; i < layers; ++i) {
    nn::add_linear(store, "dec" + std::to_string(i), dims[layers - i], dims[layers - i - 1], rng);
  }
  return store;
}

template <typename Scalar>
int cae_layers(const nn::ParamStore<Scalar>& store) {
  int n = 0;
  while (store.contains("enc" + std::to_string(n) + ".w")) ++n;
  return n;
}

template <typename Scalar>
nn::Var<Scalar> cae_encode(nn::Tape<Scalar>& t, nn::ParamStore<Scalar>& store, const nn::Var<Scalar>& x) {
  const int layers = cae_layers(store);
  nn::Var<Scalar> h = x;
  for (int i = 0; i < layers; ++i) {
    const std::string n = "enc" + std::to_string(i);
    h = nn::linear(h, t.param(store, n + ".w"), t.param(store, n + ".b"));
    if (i + 1 < layers) h = nn::relu(h);
  }
  return h;
}

template <typename Scalar>
nn::Var<Scalar> cae_decode(nn::Tape<Scalar>& t, nn::ParamStore<Scalar>& store, const nn::Var<Scalar>& z) {
  const int layers = cae_layers(store);
  nn::Var<Scalar> h = z;
  for (int i = 0; i < layers; ++i) {
    const std::string n = "dec" + std::to_string(i);
    h = nn::linear(h, t.param(store, n + ".w"), t.param(store, n + ".b"));
    if (i + 1 < layers) h = nn::relu(h);
  }
  return h;
}

/// Ordered reconstruction term (1/K) sum_k |p_k - p̂_k|^2 averaged over the batch rows.
template <typename Scalar>
nn::Var<Scalar> cae_reconstruction(const nn::Var<Scalar>& input, const nn::Var<Scalar>& recon) {
  const Scalar k = Scalar(input.cols() / 3);
  return nn::scale(nn::sum_squares(nn::sub(recon, input)), Scalar(1) / (k * Scalar(input.rows())));
}

/// Reconstruction plus lambda_reg times the sum of squared encoder parameters.
template <typename Scalar>
nn::Var<Scalar> cae_loss(nn::Tape<Scalar>& t, nn::ParamStore<Scalar>& store, const nn::Matrix<Scalar>& batch,
                         double lambda_reg) {
  if (batch.rows() == 0) throw Error("cae_loss: empty batch");
  const nn::Var<Scalar> x = t.constant(batch);
  nn::Var<Scalar> loss = cae_reconstruction(x, cae_decode(t, store, cae_encode(t, store, x)));
  if (lambda_reg == 0.0) return loss;
  std::vector<nn::Var<Scalar>> terms = {loss};
  std::vector<Scalar> weights = {Scalar(1)};
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.at(i).name.rfind("enc", 0) != 0) continue;
    terms.push_back(nn::sum_squares(t.param(store, store.at(i).name)));
    weights.push_back(static_cast<Scalar>(lambda_reg));
  }
  return nn::weighted_sum(terms, weights);
}

class CaeModel {
 public:
  CaeModel() = default;
  CaeModel(const CaeConfig& config, std::uint64_t seed);
  CaeModel(const CaeConfig& config, nn::ParamStore<float> params);

  const CaeConfig& config() const { return config_; }
  const nn::ParamStore<float>& params() const { return params_; }
  /// Throws Error once frozen.
  nn::ParamStore<float>& mutable_params();

  bool frozen() const { return frozen_; }
  void freeze();
  std::uint64_t checksum() const { return params_.checksum(); }
  std::uint64_t frozen_checksum() const { return frozen_checksum_; }
  /// Throws Error when frozen parameters no longer match the recorded checksum.
  void verify_frozen() const;

  Eigen::VectorXf encode(const ObstaclePointCloud& cloud) const;
  Eigen::VectorXf encode_scene(const Scene& scene) const;
  /// One flattened cloud per row in, one latent per row out.
  nn::Matrix<float> encode_batch(const nn::Matrix<float>& clouds) const;
  nn::Matrix<float> reconstruct(const nn::Matrix<float>& clouds) const;
  /// Mean ordered reconstruction error over the rows.
  double reconstruction_error(const nn::Matrix<float>& clouds) const;

  void save(const std::string& path) const;
  static CaeModel load(const std::string& path);

 private:
  CaeConfig config_;
  nn::ParamStore<float> params_;
  bool frozen_ = false;
  std::uint64_t frozen_checksum_ = 0;
};

struct CaeTrainLog {
  std::vector<double> losses;
};

nn::Matrix<float> stack_clouds(const std::vector<ObstaclePointCloud>& clouds);

/// Adam on random minibatches of `clouds`; returns the frozen model.
CaeModel train_cae(const CaeConfig& config, const std::vector<ObstaclePointCloud>& clouds,
                   CaeTrainLog* log = nullptr);

}  // namespace rdiff
