#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mindhouse/ndnet/grad_check.hpp"
#include "mindhouse/ndnet/optim.hpp"
#include "mindhouse/ndnet/params.hpp"
#include "mindhouse/ndnet/tape.hpp"
#include "mindhouse/util/rng.hpp"

using namespace mindhouse;
using namespace mindhouse::ndnet;

TEST_CASE("elu1p: 1 at zero, strictly positive everywhere") {
  Tape t;
  Var x = t.constant(Tensor::vector({0.f}));
  CHECK(t.value(t.elu1p(x)).item() == doctest::Approx(1.0).epsilon(1e-7));

  Var extremes = t.constant(Tensor::vector({-1e30f, -1e5f, -88.f, 0.f, 50.f}));
  const auto& y = t.value(t.elu1p(extremes));
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) > 0.f);
  CHECK(y.at(4) == doctest::Approx(51.f));
}

TEST_CASE("log_sum_exp: closed form and overflow safety") {
  Tape t;
  Var v = t.constant(Tensor::vector({0.f, 0.f}));
  CHECK(t.value(t.log_sum_exp(v)).item() ==
        doctest::Approx(0.6931471805599453).epsilon(1e-6));

  // exp(1000) overflows; the subtract-max form must stay finite and exact.
  TapeT<double> td;
  Var big = td.constant(TensorT<double>::vector({1000.0, 1000.0}));
  const double lse = td.value(td.log_sum_exp(big)).item();
  CHECK(std::isfinite(lse));
  CHECK(std::abs(lse - (1000.0 + 0.6931471805599453)) < 1e-9);
}

TEST_CASE("softmax: symmetry and simplex") {
  Tape t;
  Var v = t.constant(Tensor::vector({2.5f, 2.5f, 2.5f}));
  const auto& y = t.value(t.softmax(v));
  for (int i = 0; i < 3; ++i)
    CHECK(y.at(i) == doctest::Approx(1.f / 3.f).epsilon(1e-6));

  Var w = t.constant(Tensor::vector({-3.f, 0.f, 7.f, 2.f}));
  const auto& z = t.value(t.softmax(w));
  float sum = 0.f;
  for (int i = 0; i < 4; ++i) {
    CHECK(z.at(i) >= 0.f);
    sum += z.at(i);
  }
  CHECK(sum == doctest::Approx(1.f).epsilon(1e-6));
}

TEST_CASE("conv2d: all-ones 5x5 input, 3x3 kernel, valid padding") {
  Tape t;
  Var x = t.constant(Tensor::full(Shape{1, 5, 5}, 1.f));
  Var k = t.constant(Tensor::full(Shape{1, 1, 3, 3}, 1.f));
  Var b = t.constant(Tensor::zeros(Shape{1}));
  const auto& y = t.value(t.conv2d(x, k, b, 1));
  CHECK(y.shape == Shape{1, 3, 3});
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.at(i) == doctest::Approx(9.f));
}

TEST_CASE("backward: d(x*x)/dx = 2x") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.f));
  Var loss = t.mul(x, x);
  auto grads = t.backward(loss, {x});
  CHECK(grads[0].item() == doctest::Approx(6.f));
}

TEST_CASE("backward: sum of softmax has zero gradient") {
  Tape t;
  Var z = t.leaf(Tensor::vector({0.3f, -1.2f, 2.0f}));
  Var loss = t.reduce_sum(t.softmax(z));
  auto grads = t.backward(loss, {z});
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(grads[0].at(i)) < 1e-6f);
}

TEST_CASE("backward: unused leaves get zero gradients") {
  Tape t;
  Var a = t.leaf(Tensor::scalar(2.f));
  Var b = t.leaf(Tensor::vector({1.f, 2.f}));
  Var loss = t.mul(a, a);
  auto grads = t.backward(loss, {a, b});
  CHECK(grads[0].item() == doctest::Approx(4.f));
  CHECK(grads[1].shape == Shape{2});
  CHECK(grads[1].at(0) == 0.f);
  CHECK(grads[1].at(1) == 0.f);
}

TEST_CASE("backward: loss must be scalar and on the tape") {
  Tape t;
  Var v = t.leaf(Tensor::vector({1.f, 2.f}));
  CHECK_THROWS_AS((void)t.backward(v, {v}), ContractError);
  CHECK_THROWS_AS((void)t.backward(Var(999), {v}), ContractError);
}

TEST_CASE("grad_check: quadratic has near-exact gradient") {
  ParamSetT<double> ps;
  ps.add("x", TensorT<double>::scalar(1.0));
  auto rep = grad_check(
      ps, {ps.id("x")},
      [](TapeT<double>& t, std::vector<Var>& vars) {
        return t.mul(vars[0], vars[0]);
      },
      1e-4);
  CHECK(rep.max_rel_error < 1e-6);
  CHECK(rep.passed);
}

TEST_CASE("grad_check: random two-layer perceptron") {
  Rng rng(42);
  ParamSetT<double> ps;
  Linear l1(ps, "l1", 4, 6, rng);
  Linear l2(ps, "l2", 6, 3, rng);
  TensorT<double> input = TensorT<double>::zeros(Shape{4});
  for (auto& v : input.data) v = rng.normal();
  auto loss_fn = [&](TapeT<double>& t, std::vector<Var>& vars) {
    Var x = t.constant(input);
    Var h = t.tanh_op(t.add(t.matmul(vars[l1.w], x), vars[l1.b]));
    Var y = t.add(t.matmul(vars[l2.w], h), vars[l2.b]);
    return t.reduce_sum(t.mul(y, y));
  };
  auto rep = grad_check(ps, ps.all_ids(), loss_fn, 1e-5);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("grad_check: mixed primitive chain (conv, slice, concat, lse)") {
  Rng rng(7);
  ParamSetT<double> ps;
  Conv conv(ps, "conv", 1, 2, 2, 1, rng);
  Linear head(ps, "head", 8, 3, rng);
  TensorT<double> img = TensorT<double>::zeros(Shape{1, 3, 3});
  for (auto& v : img.data) v = rng.uniform();
  auto loss_fn = [&](TapeT<double>& t, std::vector<Var>& vars) {
    Var x = t.constant(img);
    Var c = t.relu(t.conv2d(x, vars[conv.w], vars[conv.b], 1));  // [2,2,2]
    Var flat = t.reshape(c, Shape{8});
    Var y = t.add(t.matmul(vars[head.w], flat), vars[head.b]);
    Var parts = t.concat({t.slice(y, 0, 2), t.slice(y, 1, 2)});
    Var picked = t.pick(y, 1);
    return t.add(t.log_sum_exp(parts), t.mul(picked, picked));
  };
  auto rep = grad_check(ps, ps.all_ids(), loss_fn, 1e-5);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("grad_check: transposed convolution and sigmoid/exp/log/div") {
  Rng rng(11);
  ParamSetT<double> ps;
  Deconv dc(ps, "dc", 2, 1, 2, 2, rng);
  TensorT<double> z = TensorT<double>::zeros(Shape{2, 2, 2});
  for (auto& v : z.data) v = rng.normal() * 0.5;
  auto loss_fn = [&](TapeT<double>& t, std::vector<Var>& vars) {
    Var x = t.constant(z);
    Var up = t.conv2d_transpose(x, vars[dc.w], vars[dc.b], 2);  // [1,4,4]
    Var s = t.sigmoid(up);
    Var e = t.exp_op(t.scale(s, 0.1));
    Var l = t.log_op(t.add_scalar(s, 1.0));
    return t.reduce_mean(t.div(e, t.add_scalar(l, 0.5)));
  };
  auto rep = grad_check(ps, ps.all_ids(), loss_fn, 1e-5);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("clip_global_norm") {
  SUBCASE("below max-norm is identity") {
    std::vector<Tensor> g{Tensor::vector({3.f, 4.f})};
    const double norm = clip_global_norm(g, 10.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(g[0].at(0) == doctest::Approx(3.f));
    CHECK(g[0].at(1) == doctest::Approx(4.f));
  }
  SUBCASE("above max-norm scales to the boundary") {
    std::vector<Tensor> g{Tensor::vector({3.f, 4.f})};
    clip_global_norm(g, 1.0);
    CHECK(g[0].at(0) == doctest::Approx(0.6f));
    CHECK(g[0].at(1) == doctest::Approx(0.8f));
  }
  SUBCASE("all zeros stay zero") {
    std::vector<Tensor> g{Tensor::zeros(Shape{3})};
    clip_global_norm(g, 1.0);
    for (int i = 0; i < 3; ++i) CHECK(g[0].at(i) == 0.f);
  }
  SUBCASE("re-clipping only perturbs by rounding noise") {
    Rng rng(3);
    std::vector<Tensor> g{Tensor::zeros(Shape{5}), Tensor::zeros(Shape{4})};
    for (auto& t : g)
      for (auto& v : t.data) v = static_cast<float>(rng.normal() * 4.0);
    auto once = g;
    clip_global_norm(once, 2.0);
    auto twice = once;
    clip_global_norm(twice, 2.0);
    for (size_t i = 0; i < g.size(); ++i)
      for (int64_t j = 0; j < g[i].numel(); ++j)
        CHECK(twice[i].at(j) ==
              doctest::Approx(once[i].at(j)).epsilon(1e-6));
    double sq = 0;
    for (const auto& t : once)
      for (float v : t.data) sq += double(v) * v;
    CHECK(std::sqrt(sq) <= 2.0 + 1e-6);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamSet ps;
    ps.add("w", Tensor::vector({1.f, -2.f}));
    AdamState st(ps, ps.all_ids());
    adam_step(ps, st, {Tensor::zeros(Shape{2})}, 1e-2);
    CHECK(ps.value(ps.id("w")).at(0) == doctest::Approx(1.f));
    CHECK(ps.value(ps.id("w")).at(1) == doctest::Approx(-2.f));
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves by about lr in the gradient's direction") {
    // With bias correction, m_hat/sqrt(v_hat) = g/|g| at t=1, so the update
    // magnitude is lr up to eps rounding.
    ParamSet ps;
    ps.add("w", Tensor::scalar(0.5f));
    AdamState st(ps, ps.all_ids());
    adam_step(ps, st, {Tensor::scalar(0.3f)}, 1e-3);
    const float delta = ps.value(ps.id("w")).item() - 0.5f;
    CHECK(delta < 0.f);
    CHECK(std::abs(std::abs(delta) - 1e-3f) < 1e-6f);
  }
  SUBCASE("identical gradients produce identical updates") {
    ParamSet ps;
    ps.add("a", Tensor::scalar(1.f));
    ps.add("b", Tensor::scalar(1.f));
    AdamState st(ps, ps.all_ids());
    adam_step(ps, st, {Tensor::scalar(0.7f), Tensor::scalar(0.7f)}, 1e-2);
    CHECK(ps.value(ps.id("a")).item() == ps.value(ps.id("b")).item());
  }
  SUBCASE("gradient shape mismatch is rejected") {
    ParamSet ps;
    ps.add("w", Tensor::vector({1.f, 2.f}));
    AdamState st(ps, ps.all_ids());
    CHECK_THROWS_AS(adam_step(ps, st, {Tensor::zeros(Shape{3})}, 1e-2),
                    ContractError);
  }
}

TEST_CASE("lstm cell") {
  SUBCASE("all-zero parameters and state give zero output") {
    ParamSet ps;
    Rng rng(1);
    LstmCell cell(ps, "cell", 3, 4, rng);
    for (auto id : ps.all_ids())
      for (auto& v : ps.value(id).data) v = 0.f;
    Tape t;
    auto vars = emit_params(t, ps, {});
    Var x = t.constant(Tensor::vector({1.f, -1.f, 2.f}));
    Var h = t.constant(Tensor::zeros(Shape{4}));
    Var c = t.constant(Tensor::zeros(Shape{4}));
    auto [h2, c2] = lstm_step(t, cell, vars[cell.w_ih], vars[cell.w_hh],
                              vars[cell.b], x, h, c);
    for (int i = 0; i < 4; ++i) CHECK(t.value(h2).at(i) == 0.f);
  }
  SUBCASE("outputs stay inside (-1, 1)") {
    ParamSet ps;
    Rng rng(5);
    LstmCell cell(ps, "cell", 6, 8, rng);
    Tape t;
    auto vars = emit_params(t, ps, {});
    Var h = t.constant(Tensor::zeros(Shape{8}));
    Var c = t.constant(Tensor::zeros(Shape{8}));
    for (int s = 0; s < 20; ++s) {
      Tensor x = Tensor::zeros(Shape{6});
      for (auto& v : x.data) v = static_cast<float>(rng.normal() * 3.0);
      auto [h2, c2] = lstm_step(t, cell, vars[cell.w_ih], vars[cell.w_hh],
                                vars[cell.b], t.constant(x), h, c);
      h = h2;
      c = c2;
      for (int i = 0; i < 8; ++i) CHECK(std::abs(t.value(h).at(i)) < 1.f);
    }
  }
  SUBCASE("gradient through three unrolled steps matches finite differences") {
    ParamSetT<double> ps;
    Rng rng(9);
    LstmCell cell(ps, "cell", 2, 3, rng);
    std::vector<TensorT<double>> xs;
    for (int s = 0; s < 3; ++s) {
      auto x = TensorT<double>::zeros(Shape{2});
      for (auto& v : x.data) v = rng.normal();
      xs.push_back(x);
    }
    auto loss_fn = [&](TapeT<double>& t, std::vector<Var>& vars) {
      Var h = t.constant(TensorT<double>::zeros(Shape{3}));
      Var c = t.constant(TensorT<double>::zeros(Shape{3}));
      for (int s = 0; s < 3; ++s) {
        auto [h2, c2] = lstm_step(t, cell, vars[cell.w_ih], vars[cell.w_hh],
                                  vars[cell.b], t.constant(xs[size_t(s)]), h, c);
        h = h2;
        c = c2;
      }
      return t.reduce_sum(t.mul(h, h));
    };
    auto rep = grad_check(ps, ps.all_ids(), loss_fn, 1e-5);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(77);
  ParamSet ps;
  Linear l(ps, "l", 5, 5, rng);
  Tensor x = Tensor::zeros(Shape{5});
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  auto run = [&]() {
    Tape t;
    auto vars = emit_params(t, ps, {});
    Var y = t.tanh_op(t.add(t.matmul(vars[l.w], t.constant(x)), vars[l.b]));
    return t.value(t.softmax(y)).data;
  };
  auto a = run(), b = run();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("shape mismatch errors name both shapes") {
  Tape t;
  Var a = t.constant(Tensor::zeros(Shape{2}));
  Var b = t.constant(Tensor::zeros(Shape{3}));
  try {
    (void)t.add(a, b);
    CHECK(false);
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("non-finite inputs and results are rejected") {
  Tape t;
  Tensor bad = Tensor::vector({1.f, std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS((void)t.constant(bad), ContractError);
  Var x = t.constant(Tensor::vector({90.f}));
  // exp(90) overflows float; the op must flag it rather than propagate inf.
  CHECK_THROWS_AS((void)t.exp_op(x), ContractError);
}

TEST_CASE("rng: determinism, derivation, and normal moments") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(123);
  Rng d1 = c.derive(1), d2 = c.derive(2);
  CHECK(d1.next_u64() != d2.next_u64());

  Rng n(2024);
  double sum = 0, sq = 0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double v = n.normal();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / N;
  const double var = sq / N - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("parameter sets: prefixes, casting, stable ids") {
  Rng rng(4);
  ParamSet ps;
  Linear enc(ps, "enc.fc", 3, 2, rng);
  Linear plan(ps, "plan.fc", 2, 2, rng);
  auto ids = ps.ids_with_prefix({"plan."});
  REQUIRE(ids.size() == 2);
  CHECK(ps.name(ids[0]) == "plan.fc.w");
  CHECK(ps.name(ids[1]) == "plan.fc.b");

  auto pd = ps.cast<double>();
  CHECK(pd.size() == ps.size());
  CHECK(pd.name(enc.w) == ps.name(enc.w));  // ids survive the cast
  CHECK(pd.value(enc.w).at(0) == doctest::Approx(ps.value(enc.w).at(0)));

  CHECK_THROWS_AS(ps.add("enc.fc.w", Tensor::scalar(0.f)), ContractError);
}
