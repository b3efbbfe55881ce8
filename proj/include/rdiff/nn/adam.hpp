#pragma once

#include <cmath>
#include <vector>

#include "rdiff/nn/param_store.hpp"

namespace rdiff::nn {

template <typename Scalar>
struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
};

/// One bias-corrected Adam update of every parameter from its grad slot.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& store, AdamState<Scalar>& state) {
  if (state.m.empty()) {
    for (const auto& p : store.params()) {
      state.m.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
      state.v.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (state.m.size() != store.size()) throw DimensionError("adam_step: state does not match the store");
  ++state.step;
  const Scalar b1 = Scalar(state.beta1), b2 = Scalar(state.beta2);
  const Scalar c1 = Scalar(1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  const Scalar c2 = Scalar(1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
  const Scalar lr = Scalar(state.lr), eps = Scalar(state.eps);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.at(i);
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (Scalar(1) - b1) * p.grad;
    v = b2 * v + (Scalar(1) - b2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

}  // namespace rdiff::nn
