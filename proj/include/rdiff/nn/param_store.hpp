#pragma once

#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdiff/error.hpp"

namespace rdiff::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<std::int64_t>;

/// Rows of the 2-D storage for a logical shape; the last extent is the column count.
inline std::pair<Eigen::Index, Eigen::Index> storage_dims(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  Eigen::Index cols = shape.back();
  Eigen::Index rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {rows, cols};
}

template <typename Scalar>
struct Param {
  std::string name;
  Shape shape;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
};

/// Ordered named parameters with gradient slots.
template <typename Scalar>
class ParamStore {
 public:
  Param<Scalar>& add(const std::string& name, const Shape& shape, Matrix<Scalar> value) {
    if (index_.count(name)) throw Error("ParamStore: duplicate parameter '" + name + "'");
    const auto [rows, cols] = storage_dims(shape);
    if (value.rows() != rows || value.cols() != cols) {
      throw DimensionError("ParamStore: '" + name + "' value does not match its shape");
    }
    index_[name] = params_.size();
    Param<Scalar> p{name, shape, std::move(value), Matrix<Scalar>::Zero(rows, cols)};
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }
  Param<Scalar>& at(const std::string& name) { return params_[index_of(name)]; }
  const Param<Scalar>& at(const std::string& name) const { return params_[index_of(name)]; }
  Param<Scalar>& at(std::size_t i) { return params_[i]; }
  const Param<Scalar>& at(std::size_t i) const { return params_[i]; }

  std::size_t size() const { return params_.size(); }
  std::vector<Param<Scalar>>& params() { return params_; }
  const std::vector<Param<Scalar>>& params() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  template <typename To>
  ParamStore<To> cast() const {
    ParamStore<To> out;
    for (const auto& p : params_) out.add(p.name, p.shape, p.value.template cast<To>());
    return out;
  }

  /// FNV-1a over names, shapes and raw values.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* bytes = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& p : params_) {
      mix(p.name.data(), p.name.size());
      for (auto d : p.shape) mix(&d, sizeof(d));
      mix(p.value.data(), sizeof(Scalar) * static_cast<std::size_t>(p.value.size()));
    }
    return h;
  }

 private:
  std::vector<Param<Scalar>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
template <typename Scalar>
void add_linear(ParamStore<Scalar>& store, const std::string& name, int in, int out,
                std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix<Scalar> w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(u(rng));
  store.add(name + ".w", {in, out}, std::move(w));
  store.add(name + ".b", {out}, Matrix<Scalar>::Zero(1, out));
}

template <typename Scalar>
void add_layer_norm(ParamStore<Scalar>& store, const std::string& name, int width) {
  store.add(name + ".g", {width}, Matrix<Scalar>::Ones(1, width));
  store.add(name + ".b", {width}, Matrix<Scalar>::Zero(1, width));
}

}  // namespace rdiff::nn
