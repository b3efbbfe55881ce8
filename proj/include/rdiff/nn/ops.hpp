#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "rdiff/nn/tape.hpp"

namespace rdiff::nn {

namespace detail {

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

template <typename Scalar>
bool needs(const Var<Scalar>& v) {
  return v.tape().requires_grad(v);
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Matrix<Scalar> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  auto& t = a.tape();
  return t.push(std::move(out), any_requires_grad({a, b}), [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (detail::needs(a)) t.grad_buffer(a).noalias() += g * t.value(b.id()).transpose();
    if (detail::needs(b)) t.grad_buffer(b).noalias() += t.value(a.id()).transpose() * g;
  });
}

/// x (m x in) * w (in x out) + b (1 x out).
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear: expected x(m x " + std::to_string(w.rows()) + "), got x(" +
                         std::to_string(x.rows()) + " x " + std::to_string(x.cols()) + ")");
  }
  Matrix<Scalar> out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  auto& t = x.tape();
  return t.push(std::move(out), any_requires_grad({x, w, b}),
                [x, w, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                  if (detail::needs(x)) t.grad_buffer(x).noalias() += g * t.value(w.id()).transpose();
                  if (detail::needs(w)) t.grad_buffer(w).noalias() += t.value(x.id()).transpose() * g;
                  if (detail::needs(b)) t.grad_buffer(b) += g.colwise().sum();
                });
}

/// a + b; b may also be a 1 x cols row broadcast over the rows of a.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  if (!broadcast) detail::require_same_shape(a, b, "add");
  Matrix<Scalar> out = a.value();
  if (broadcast) {
    out.rowwise() += b.value().row(0);
  } else {
    out += b.value();
  }
  auto& t = a.tape();
  return t.push(std::move(out), any_requires_grad({a, b}),
                [a, b, broadcast](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                  t.accumulate(a, g);
                  if (!detail::needs(b)) return;
                  if (broadcast) {
                    t.grad_buffer(b) += g.colwise().sum();
                  } else {
                    t.accumulate(b, g);
                  }
                });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Matrix<Scalar> out = a.value() - b.value();
  auto& t = a.tape();
  return t.push(std::move(out), any_requires_grad({a, b}), [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    if (detail::needs(b)) t.grad_buffer(b) -= g;
  });
}

/// Element-wise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  auto& t = a.tape();
  return t.push(std::move(out), any_requires_grad({a, b}), [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (detail::needs(a)) t.accumulate(a, g.cwiseProduct(t.value(b.id())));
    if (detail::needs(b)) t.accumulate(b, g.cwiseProduct(t.value(a.id())));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  auto& t = a.tape();
  return t.push(std::move(out), detail::needs(a),
                [a, s](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.accumulate(a, g * s); });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Matrix<Scalar> out = x.value().cwiseMax(Scalar(0));
  auto& t = x.tape();
  return t.push(std::move(out), detail::needs(x), [x](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& v = t.value(x.id());
    t.accumulate(x, (v.array() > Scalar(0)).select(g.array(), Scalar(0)).matrix());
  });
}

/// Exact GELU, x * Phi(x).
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  const Scalar inv_sqrt2 = Scalar(0.70710678118654752440);
  Matrix<Scalar> out = x.value().unaryExpr([inv_sqrt2](Scalar v) {
    return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2));
  });
  auto& t = x.tape();
  return t.push(std::move(out), detail::needs(x), [x, inv_sqrt2](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const Scalar inv_sqrt_2pi = Scalar(0.39894228040143267794);
    const Matrix<Scalar> d = t.value(x.id()).unaryExpr([&](Scalar v) {
      return Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
    });
    t.accumulate(x, g.cwiseProduct(d));
  });
}

/// Normalizes each row, then applies gain g and bias b (both 1 x cols).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       Scalar eps = Scalar(1e-5)) {
  if (gain.cols() != x.cols() || bias.cols() != x.cols() || gain.rows() != 1 || bias.rows() != 1) {
    throw DimensionError("layer_norm: gain/bias must be 1 x " + std::to_string(x.cols()));
  }
  const Eigen::Index n = x.cols();
  auto xhat = std::make_shared<Matrix<Scalar>>(x.rows(), n);
  auto inv_std = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(x.rows());
  const auto& xv = x.value();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mean).square().mean();
    (*inv_std)(r) = Scalar(1) / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mean) * (*inv_std)(r);
  }
  Matrix<Scalar> out = xhat->array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  auto& t = x.tape();
  return t.push(std::move(out), any_requires_grad({x, gain, bias}),
                [x, gain, bias, xhat, inv_std, n](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                  if (detail::needs(gain)) t.grad_buffer(gain) += g.cwiseProduct(*xhat).colwise().sum();
                  if (detail::needs(bias)) t.grad_buffer(bias) += g.colwise().sum();
                  if (!detail::needs(x)) return;
                  const Matrix<Scalar> gh = g.array().rowwise() * t.value(gain.id()).row(0).array();
                  Matrix<Scalar> dx(g.rows(), n);
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const Scalar m1 = gh.row(r).mean();
                    const Scalar m2 = gh.row(r).dot(xhat->row(r)) / Scalar(n);
                    dx.row(r) = (gh.row(r).array() - m1 - xhat->row(r).array() * m2) * (*inv_std)(r);
                  }
                  t.accumulate(x, dx);
                });
}

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename Scalar>
Var<Scalar> softmax_lastdim(const Var<Scalar>& x) {
  Matrix<Scalar> out = softmax_rows(x.value());
  auto& t = x.tape();
  const int self = static_cast<int>(t.size());
  return t.push(std::move(out), detail::needs(x), [x, self](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& y = t.value(self);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(x, (y.array() * (g.array().colwise() - dot.array())).matrix());
  });
}

/// Inverted dropout; identity when p == 0.
template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  auto mask = std::make_shared<Matrix<Scalar>>(x.rows(), x.cols());
  const Scalar s = Scalar(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = keep(rng) ? s : Scalar(0);
  Matrix<Scalar> out = x.value().cwiseProduct(*mask);
  auto& t = x.tape();
  return t.push(std::move(out), detail::needs(x), [x, mask](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(x, g.cwiseProduct(*mask));
  });
}

/// 1x1 sum of all entries.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  auto& t = x.tape();
  return t.push(std::move(out), detail::needs(x), [x](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(x, Matrix<Scalar>::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

/// 1x1 sum of squared entries.
template <typename Scalar>
Var<Scalar> sum_squares(const Var<Scalar>& x) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().squaredNorm();
  auto& t = x.tape();
  return t.push(std::move(out), detail::needs(x), [x](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(x, t.value(x.id()) * (Scalar(2) * g(0, 0)));
  });
}

/// sum_i w_i * terms_i for 1x1 terms.
template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& terms, const std::vector<Scalar>& weights) {
  if (terms.empty() || terms.size() != weights.size()) throw DimensionError("weighted_sum: bad arguments");
  Matrix<Scalar> out = Matrix<Scalar>::Zero(1, 1);
  bool rg = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw DimensionError("weighted_sum: terms must be scalars");
    out(0, 0) += weights[i] * terms[i].value()(0, 0);
    rg = rg || detail::needs(terms[i]);
  }
  auto& t = terms.front().tape();
  return t.push(std::move(out), rg, [terms, weights](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    for (std::size_t i = 0; i < terms.size(); ++i) {
      t.accumulate(terms[i], Matrix<Scalar>::Constant(1, 1, weights[i] * g(0, 0)));
    }
  });
}

/// Prepends one row of `prefix` (batch x W) to each length-n block of `body` (batch*n x W).
template <typename Scalar>
Var<Scalar> prepend_token(const Var<Scalar>& prefix, const Var<Scalar>& body, Eigen::Index batch) {
  if (prefix.rows() != batch || body.rows() % batch != 0 || prefix.cols() != body.cols()) {
    throw DimensionError("prepend_token: shape mismatch");
  }
  const Eigen::Index n = body.rows() / batch, w = body.cols();
  Matrix<Scalar> out(batch * (n + 1), w);
  for (Eigen::Index b = 0; b < batch; ++b) {
    out.row(b * (n + 1)) = prefix.value().row(b);
    out.block(b * (n + 1) + 1, 0, n, w) = body.value().block(b * n, 0, n, w);
  }
  auto& t = body.tape();
  return t.push(std::move(out), any_requires_grad({prefix, body}),
                [prefix, body, batch, n, w](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                  if (detail::needs(prefix)) {
                    auto& gp = t.grad_buffer(prefix);
                    for (Eigen::Index b = 0; b < batch; ++b) gp.row(b) += g.row(b * (n + 1));
                  }
                  if (detail::needs(body)) {
                    auto& gb = t.grad_buffer(body);
                    for (Eigen::Index b = 0; b < batch; ++b) gb.block(b * n, 0, n, w) += g.block(b * (n + 1) + 1, 0, n, w);
                  }
                });
}

/// Inverse of prepend_token: drops the first row of every length-(n+1) block.
template <typename Scalar>
Var<Scalar> drop_first_token(const Var<Scalar>& x, Eigen::Index batch) {
  if (x.rows() % batch != 0) throw DimensionError("drop_first_token: rows not divisible by batch");
  const Eigen::Index s = x.rows() / batch, w = x.cols();
  Matrix<Scalar> out(batch * (s - 1), w);
  for (Eigen::Index b = 0; b < batch; ++b) out.block(b * (s - 1), 0, s - 1, w) = x.value().block(b * s + 1, 0, s - 1, w);
  auto& t = x.tape();
  return t.push(std::move(out), detail::needs(x), [x, batch, s, w](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    auto& gx = t.grad_buffer(x);
    for (Eigen::Index b = 0; b < batch; ++b) gx.block(b * s + 1, 0, s - 1, w) += g.block(b * (s - 1), 0, s - 1, w);
  });
}

/// Row b of the result is `replacement` (1 x W) where mask[b], else a.row(b).
template <typename Scalar>
Var<Scalar> mask_rows(const Var<Scalar>& a, const Var<Scalar>& replacement, const std::vector<bool>& mask) {
  if (replacement.rows() != 1 || replacement.cols() != a.cols() ||
      static_cast<Eigen::Index>(mask.size()) != a.rows()) {
    throw DimensionError("mask_rows: shape mismatch");
  }
  Matrix<Scalar> out = a.value();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    if (mask[r]) out.row(r) = replacement.value().row(0);
  }
  auto& t = a.tape();
  return t.push(std::move(out), any_requires_grad({a, replacement}),
                [a, replacement, mask](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    if (mask[r]) {
                      if (detail::needs(replacement)) t.grad_buffer(replacement).row(0) += g.row(r);
                    } else if (detail::needs(a)) {
                      t.grad_buffer(a).row(r) += g.row(r);
                    }
                  }
                });
}

/// Scaled dot-product attention over `batch` sequences of equal length, with
/// q, k, v shaped (batch*seq) x width and `heads` column groups.
template <typename Scalar>
Var<Scalar> attention_core(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                           Eigen::Index batch, int heads) {
  detail::require_same_shape(q, k, "attention_core");
  detail::require_same_shape(q, v, "attention_core");
  const Eigen::Index width = q.cols();
  if (heads <= 0 || width % heads != 0) throw DimensionError("attention: width must be divisible by heads");
  if (batch <= 0 || q.rows() % batch != 0) throw DimensionError("attention: rows not divisible by batch");
  const Eigen::Index seq = q.rows() / batch, dh = width / heads;
  const Scalar s = Scalar(1) / std::sqrt(Scalar(dh));
  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>(static_cast<std::size_t>(batch * heads));
  Matrix<Scalar> out(q.rows(), width);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = qv.block(b * seq, h * dh, seq, dh);
      const auto kb = kv.block(b * seq, h * dh, seq, dh);
      Matrix<Scalar> scores(seq, seq);
      scores.noalias() = qb * kb.transpose();
      scores *= s;
      Matrix<Scalar>& p = (*probs)[b * heads + h];
      p = softmax_rows(scores);
      out.block(b * seq, h * dh, seq, dh).noalias() = p * vv.block(b * seq, h * dh, seq, dh);
    }
  }
  auto& t = q.tape();
  return t.push(std::move(out), any_requires_grad({q, k, v}),
                [q, k, v, batch, heads, seq, dh, s, probs](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                  const auto& qv = t.value(q.id());
                  const auto& kv = t.value(k.id());
                  const auto& vv = t.value(v.id());
                  Matrix<Scalar> dq = Matrix<Scalar>::Zero(qv.rows(), qv.cols());
                  Matrix<Scalar> dk = dq, dv = dq;
                  for (Eigen::Index b = 0; b < batch; ++b) {
                    for (int h = 0; h < heads; ++h) {
                      const Matrix<Scalar>& p = (*probs)[b * heads + h];
                      const auto gb = g.block(b * seq, h * dh, seq, dh);
                      dv.block(b * seq, h * dh, seq, dh).noalias() = p.transpose() * gb;
                      Matrix<Scalar> dp(seq, seq);
                      dp.noalias() = gb * vv.block(b * seq, h * dh, seq, dh).transpose();
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rs = dp.cwiseProduct(p).rowwise().sum();
                      Matrix<Scalar> ds = (p.array() * (dp.array().colwise() - rs.array())).matrix() * s;
                      dq.block(b * seq, h * dh, seq, dh).noalias() = ds * kv.block(b * seq, h * dh, seq, dh);
                      dk.block(b * seq, h * dh, seq, dh).noalias() = ds.transpose() * qv.block(b * seq, h * dh, seq, dh);
                    }
                  }
                  t.accumulate(q, dq);
                  t.accumulate(k, dk);
                  t.accumulate(v, dv);
                });
}

/// Bidirectional multi-head self-attention with projections `prefix`.{q,k,v,o}.
template <typename Scalar>
Var<Scalar> multi_head_self_attention(Tape<Scalar>& tape, ParamStore<Scalar>& store, const std::string& prefix,
                                      const Var<Scalar>& x, Eigen::Index batch, int heads) {
  auto proj = [&](const char* n, const Var<Scalar>& in) {
    return linear(in, tape.param(store, prefix + "." + n + ".w"), tape.param(store, prefix + "." + n + ".b"));
  };
  const Var<Scalar> q = proj("q", x);
  const Var<Scalar> k = proj("k", x);
  const Var<Scalar> v = proj("v", x);
  return proj("o", attention_core(q, k, v, batch, heads));
}

template <typename Scalar>
void add_attention(ParamStore<Scalar>& store, const std::string& prefix, int width, std::mt19937_64& rng) {
  for (const char* n : {"q", "k", "v", "o"}) add_linear(store, prefix + "." + n, width, width, rng);
}

/// Sinusoidal embedding: entries [0, width/2) are sin(t * f_i), the rest cos(t * f_i).
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sinusoidal_embedding(double t, int width) {
  if (width <= 0 || width % 2 != 0) throw DimensionError("sinusoidal_embedding: width must be even and positive");
  if (t < 0.0) throw Error("sinusoidal_embedding: t must be non-negative");
  const int half = width / 2;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> out(width);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out(i) = static_cast<Scalar>(std::sin(t * freq));
    out(half + i) = static_cast<Scalar>(std::cos(t * freq));
  }
  return out;
}

}  // namespace rdiff::nn
