#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rdiff/nn/param_store.hpp"

namespace rdiff::nn {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  const Matrix<Scalar>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode recording of a computation. Values are row-major 2-D
/// matrices; gradients are allocated lazily during backward().
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat& grad_out)>;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient is kept for inspection after backward().
  Var<Scalar> input(Mat value) { return push(std::move(value), true, {}); }

  /// Leaf reading a parameter in place; its gradient is accumulated into the
  /// store's grad slot, so the parameter must outlive the tape unchanged.
  Var<Scalar> param(ParamStore<Scalar>& store, const std::string& name) {
    Param<Scalar>& p = store.at(store.index_of(name));
    Node node;
    node.requires_grad = true;
    node.external = &p;
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  /// Records an op result. `backward` receives the output gradient and calls
  /// accumulate() on its inputs; it only runs when the node needs a gradient.
  Var<Scalar> push(Mat value, bool requires_grad, Backward backward) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? n.external->value : n.value;
  }
  const Mat& grad(int id) const {
    const Node& n = nodes_[id];
    return n.external ? n.external->grad : n.grad;
  }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var<Scalar>& v) const { return requires_grad(v.id()); }
  std::size_t size() const { return nodes_.size(); }

  /// Adds g into the gradient of v (no-op for constants).
  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.external) {
      n.external->grad += g;
    } else if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Mutable gradient buffer for in-place accumulation (zeroed on first use).
  Mat& grad_buffer(const Var<Scalar>& v) {
    Node& n = nodes_[v.id()];
    if (n.external) return n.external->grad;
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(const Var<Scalar>& loss) {
    if (loss.value().size() != 1) {
      throw DimensionError("backward: loss must be a scalar, got " + std::to_string(loss.rows()) +
                           "x" + std::to_string(loss.cols()));
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (nodes_[loss.id()].external) {
      nodes_[loss.id()].external->grad.array() += Scalar(1);
      return;
    }
    nodes_[loss.id()].grad = Mat::Ones(1, 1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
    Param<Scalar>* external = nullptr;
  };

  std::vector<Node> nodes_;
};

template <typename Scalar>
bool any_requires_grad(std::initializer_list<Var<Scalar>> vars) {
  for (const auto& v : vars) {
    if (v.tape().requires_grad(v)) return true;
  }
  return false;
}

}  // namespace rdiff::nn
