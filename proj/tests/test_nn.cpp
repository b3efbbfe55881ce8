#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "gradcheck.hpp"
#include "rdiff/nn/adam.hpp"
#include "rdiff/nn/checkpoint.hpp"
#include "rdiff/nn/ops.hpp"

using namespace rdiff;
using namespace rdiff::nn;
using rdiff::test::Builder;
using rdiff::test::contracted;
using rdiff::test::gradient_error;
using rdiff::test::random_matrix;

namespace {

template <typename Scalar>
struct Tol;
template <>
struct Tol<float> {
  static constexpr double h = 1e-3;
  static constexpr double max_err = 1e-2;
};
template <>
struct Tol<double> {
  static constexpr double h = 1e-5;
  static constexpr double max_err = 1e-4;
};

template <typename Scalar>
double check(Builder<Scalar> op, const std::vector<Matrix<Scalar>>& inputs, std::uint64_t seed = 99) {
  return gradient_error<Scalar>(contracted<Scalar>(op, seed), inputs, Tol<Scalar>::h);
}

template <typename Scalar>
Matrix<Scalar> away_from_zero(Matrix<Scalar> m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    Scalar& v = m.data()[i];
    if (std::abs(v) < Scalar(0.05)) v = v < 0 ? Scalar(-0.05) - v : Scalar(0.05) + v;
  }
  return m;
}

}  // namespace

TEST_CASE_TEMPLATE("elementwise and matrix op gradients", Scalar, float, double) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int trial = 0; trial < 5; ++trial) {
    const int m = dim(rng), n = dim(rng), p = dim(rng);
    auto A = random_matrix<Scalar>(m, n, rng);
    auto B = random_matrix<Scalar>(n, p, rng);
    auto C = random_matrix<Scalar>(m, n, rng);
    auto row = random_matrix<Scalar>(1, n, rng);
    using V = std::vector<Var<Scalar>>;
    using T = Tape<Scalar>;
    const double tol = Tol<Scalar>::max_err;
    CHECK(check<Scalar>([](T&, const V& v) { return matmul(v[0], v[1]); }, {A, B}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return linear(v[0], v[1], v[2]); },
                        {A, B, random_matrix<Scalar>(1, p, rng)}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return add(v[0], v[1]); }, {A, C}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return add(v[0], v[1]); }, {A, row}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return sub(v[0], v[1]); }, {A, C}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return mul(v[0], v[1]); }, {A, C}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return scale(v[0], Scalar(-1.7)); }, {A}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return relu(v[0]); }, {away_from_zero(A)}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return gelu(v[0]); }, {A}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return softmax_lastdim(v[0]); }, {A}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return sum(v[0]); }, {A}) < tol);
    CHECK(check<Scalar>([](T&, const V& v) { return sum_squares(v[0]); }, {A}) < tol);
    CHECK(check<Scalar>(
              [](T&, const V& v) {
                return weighted_sum<Scalar>({sum_squares(v[0]), sum(v[1])}, {Scalar(0.3), Scalar(-2)});
              },
              {A, C}) < tol);
    if (n >= 2) {
      CHECK(check<Scalar>(
                [](T&, const V& v) { return layer_norm(v[0], v[1], v[2]); },
                {A, random_matrix<Scalar>(1, n, rng), random_matrix<Scalar>(1, n, rng)}) < tol);
    }
    CHECK(check<Scalar>(
              [](T&, const V& v) {
                std::mt19937_64 r(5);
                return dropout(v[0], 0.3, r);
              },
              {A}) < tol);
  }
}

TEST_CASE_TEMPLATE("token op and attention gradients", Scalar, float, double) {
  std::mt19937_64 rng(23);
  using V = std::vector<Var<Scalar>>;
  using T = Tape<Scalar>;
  const double tol = Tol<Scalar>::max_err;
  const int batch = 2, seq = 3, width = 4;
  auto prefix = random_matrix<Scalar>(batch, width, rng);
  auto body = random_matrix<Scalar>(batch * seq, width, rng);
  CHECK(check<Scalar>([](T&, const V& v) { return prepend_token(v[0], v[1], batch); }, {prefix, body}) < tol);
  CHECK(check<Scalar>([](T&, const V& v) { return drop_first_token(v[0], batch); }, {body}) < tol);
  CHECK(check<Scalar>([](T&, const V& v) { return mask_rows(v[0], v[1], {true, false}); },
                      {prefix, random_matrix<Scalar>(1, width, rng)}) < tol);
  for (int heads : {1, 2}) {
    CHECK(check<Scalar>([heads](T&, const V& v) { return attention_core(v[0], v[1], v[2], batch, heads); },
                        {body, random_matrix<Scalar>(batch * seq, width, rng),
                         random_matrix<Scalar>(batch * seq, width, rng)}) < tol);
  }
}

TEST_CASE_TEMPLATE("self-attention gradients through the parameter store", Scalar, float, double) {
  std::mt19937_64 rng(3);
  ParamStore<Scalar> store;
  add_attention(store, "att", 4, rng);
  const Matrix<Scalar> x = random_matrix<Scalar>(6, 4, rng);
  auto build = [&](Tape<Scalar>& t, const std::vector<Var<Scalar>>& v) {
    return multi_head_self_attention(t, store, "att", v[0], 2, 2);
  };
  CHECK(check<Scalar>(build, {x}) < Tol<Scalar>::max_err);

  store.zero_grad();
  auto loss = contracted<Scalar>(build, 99);
  {
    Tape<Scalar> t;
    t.backward(loss(t, {t.constant(x)}));
  }
  for (const char* name : {"att.q.w", "att.k.w", "att.v.b", "att.o.w"}) {
    Param<Scalar>& p = store.at(name);
    double max_diff = 0.0, max_num = 0.0;
    for (Eigen::Index e = 0; e < p.value.size(); ++e) {
      const Scalar orig = p.value.data()[e];
      const Scalar xp = orig + Scalar(Tol<Scalar>::h), xm = orig - Scalar(Tol<Scalar>::h);
      auto eval = [&](Scalar value) {
        p.value.data()[e] = value;
        Tape<Scalar> t;
        return static_cast<double>(loss(t, {t.constant(x)}).value()(0, 0));
      };
      const double numeric = (eval(xp) - eval(xm)) / static_cast<double>(xp - xm);
      p.value.data()[e] = orig;
      max_diff = std::max(max_diff, std::abs(numeric - static_cast<double>(p.grad.data()[e])));
      max_num = std::max(max_num, std::abs(numeric));
    }
    CHECK(max_diff / std::max(max_num, 1e-3) < Tol<Scalar>::max_err);
  }
}

TEST_CASE("linear with identity weights is the identity") {
  Tape<float> t;
  std::mt19937_64 rng(1);
  const Matrix<float> x = random_matrix<float>(3, 4, rng);
  auto y = linear(t.constant(x), t.constant(Matrix<float>::Identity(4, 4)), t.constant(Matrix<float>::Zero(1, 4)));
  CHECK(y.value() == x);
  CHECK_THROWS_AS(linear(t.constant(x), t.constant(Matrix<float>::Identity(3, 3)), t.constant(Matrix<float>::Zero(1, 3))),
                  DimensionError);
}

TEST_CASE("softmax rows sum to one") {
  Tape<float> t;
  std::mt19937_64 rng(2);
  auto y = softmax_lastdim(t.constant(random_matrix<float>(5, 7, rng, 10.0)));
  for (Eigen::Index r = 0; r < 5; ++r) CHECK(std::abs(y.value().row(r).sum() - 1.0f) < 1e-6f);
}

TEST_CASE("single-token attention passes the value projection through") {
  std::mt19937_64 rng(4);
  ParamStore<double> store;
  add_attention(store, "a", 4, rng);
  for (auto& p : store.params()) {
    if (p.name.back() == 'b') p.value = random_matrix<double>(1, 4, rng);
  }
  Tape<double> t;
  const Matrix<double> x = random_matrix<double>(1, 4, rng);
  auto y = multi_head_self_attention(t, store, "a", t.constant(x), 1, 2);
  const Matrix<double> v = (x * store.at("a.v.w").value).rowwise() + store.at("a.v.b").value.row(0);
  const Matrix<double> expect = (v * store.at("a.o.w").value).rowwise() + store.at("a.o.b").value.row(0);
  CHECK((y.value() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("self-attention is permutation equivariant") {
  std::mt19937_64 rng(6);
  ParamStore<double> store;
  add_attention(store, "a", 8, rng);
  const Matrix<double> x = random_matrix<double>(5, 8, rng);
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  Matrix<double> xp(5, 8);
  for (int i = 0; i < 5; ++i) xp.row(i) = x.row(perm[i]);
  Tape<double> t;
  auto y = multi_head_self_attention(t, store, "a", t.constant(x), 1, 4);
  auto yp = multi_head_self_attention(t, store, "a", t.constant(xp), 1, 4);
  for (int i = 0; i < 5; ++i) CHECK((yp.value().row(i) - y.value().row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(multi_head_self_attention(t, store, "a", t.constant(x), 1, 3), DimensionError);
}

TEST_CASE("sinusoidal embedding") {
  const auto e0 = sinusoidal_embedding<double>(0.0, 16);
  for (int i = 0; i < 8; ++i) {
    CHECK(e0(i) == 0.0);
    CHECK(e0(8 + i) == 1.0);
  }
  std::vector<Eigen::RowVectorXd> seen;
  for (int t = 0; t < 200; ++t) {
    const auto e = sinusoidal_embedding<double>(t, 16);
    for (const auto& s : seen) CHECK((s - e).norm() > 1e-6);
    seen.push_back(e);
  }
  CHECK_THROWS_AS(sinusoidal_embedding<double>(1.0, 7), DimensionError);
}

TEST_CASE("adam converges on a quadratic bowl") {
  std::mt19937_64 rng(8);
  ParamStore<double> store;
  store.add("w", {5}, Matrix<double>::Zero(1, 5));
  const Matrix<double> target = random_matrix<double>(1, 5, rng, 0.1);
  AdamState<double> adam;
  adam.lr = 1e-2;
  for (int step = 0; step < 2000; ++step) {
    store.zero_grad();
    Tape<double> t;
    t.backward(sum_squares(sub(t.param(store, "w"), t.constant(target))));
    adam_step(store, adam);
  }
  CHECK((store.at("w").value - target).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(adam.step == 2000);
}

TEST_CASE("adam defaults") {
  AdamState<float> a;
  CHECK(a.lr == doctest::Approx(3e-4));
  CHECK(a.beta1 == doctest::Approx(0.9));
  CHECK(a.beta2 == doctest::Approx(0.999));
  CHECK(a.eps == doctest::Approx(1e-8));
}

TEST_CASE("backward semantics") {
  std::mt19937_64 rng(9);
  ParamStore<double> store;
  add_linear(store, "l", 3, 2, rng);
  const Matrix<double> x = random_matrix<double>(4, 3, rng);

  SUBCASE("zero loss gives zero gradients") {
    Tape<double> t;
    auto y = linear(t.constant(x), t.param(store, "l.w"), t.param(store, "l.b"));
    t.backward(scale(sum(y), 0.0));
    CHECK(store.at("l.w").grad.cwiseAbs().maxCoeff() == 0.0);
    CHECK(store.at("l.b").grad.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("two backward passes double the gradients") {
    Tape<double> t;
    auto loss = sum_squares(linear(t.constant(x), t.param(store, "l.w"), t.param(store, "l.b")));
    t.backward(loss);
    const Matrix<double> once = store.at("l.w").grad;
    CHECK(once.cwiseAbs().maxCoeff() > 0.0);
    t.backward(loss);
    CHECK(store.at("l.w").grad == 2.0 * once);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape<double> t;
    auto y = linear(t.constant(x), t.param(store, "l.w"), t.param(store, "l.b"));
    CHECK_THROWS_AS(t.backward(y), DimensionError);
  }
}

TEST_CASE("parameter store contracts") {
  ParamStore<float> s;
  s.add("a", {2, 3}, Matrix<float>::Zero(2, 3));
  CHECK_THROWS_AS(s.add("a", {2, 3}, Matrix<float>::Zero(2, 3)), Error);
  CHECK_THROWS_AS(s.add("b", {2, 3}, Matrix<float>::Zero(3, 2)), DimensionError);
  CHECK_THROWS_AS(s.at("missing"), Error);
  CHECK(s.parameter_count() == 6);
  const auto c = s.checksum();
  s.at("a").value(0, 0) = 1.0f;
  CHECK(s.checksum() != c);
}

TEST_CASE("checkpoint round trip is bitwise") {
  std::mt19937_64 rng(10);
  ParamStore<float> store;
  add_linear(store, "diff/in", 7, 16, rng);
  add_layer_norm(store, "diff/ln", 16);
  store.add("diff/t3", {2, 3, 4}, random_matrix<float>(6, 4, rng));
  store.add("diff/scalar", {}, Matrix<float>::Constant(1, 1, 2.5f));
  const auto path = (std::filesystem::temp_directory_path() / "rdiff_ckpt_test.bin").string();
  save_checkpoint(store, path);
  const ParamStore<float> loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(loaded.at(i).name == store.at(i).name);
    CHECK(loaded.at(i).shape == store.at(i).shape);
    CHECK(std::memcmp(loaded.at(i).value.data(), store.at(i).value.data(),
                      sizeof(float) * store.at(i).value.size()) == 0);
  }
  CHECK(loaded.checksum() == store.checksum());
  CHECK(encode_checkpoint(loaded) == encode_checkpoint(store));

  const std::string bytes = encode_checkpoint(store);
  CHECK(bytes.substr(0, 4) == "RDCK");
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), LoadError);
  CHECK_THROWS_AS(decode_checkpoint("XXXX" + bytes.substr(4)), LoadError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), LoadError);

  const auto sub = extract_prefix(store, "diff/");
  CHECK(sub.contains("in.w"));
  std::remove(path.c_str());
}
