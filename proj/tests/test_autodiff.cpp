#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "hanerf/autodiff.hpp"
#include "hanerf/errors.hpp"
#include "hanerf/gradcheck.hpp"
#include "hanerf/optim.hpp"
#include "hanerf/rng.hpp"

using namespace hanerf;

TEST_SUITE("autodiff") {

TEST_CASE("square gradient matches 2x at x = 3") {
  Tape<double> t;
  Tensor<double> x({1}, 3.0);
  Var xs = t.param("x", &x);
  Var y = t.sum(t.square(xs));
  t.backward(y);
  CHECK(t.value(y)[0] == doctest::Approx(9.0));
  CHECK(t.grad(xs)[0] == doctest::Approx(6.0));
}

TEST_CASE("sigmoid value and gradient at zero") {
  Tape<double> t;
  Tensor<double> x({1}, 0.0);
  Var xs = t.param("x", &x);
  Var y = t.sum(t.sigmoid(xs));
  t.backward(y);
  CHECK(t.value(y)[0] == doctest::Approx(0.5));
  CHECK(t.grad(xs)[0] == doctest::Approx(0.25));
}

TEST_CASE("elementwise forward values") {
  Tape<double> t;
  Var a = t.constant(Tensor<double>::from({3}, {-1.0, 0.0, 2.0}));
  CHECK(t.value(t.relu(a))[0] == 0.0);
  CHECK(t.value(t.relu(a))[2] == 2.0);
  CHECK(t.value(t.abs_op(a))[0] == 1.0);
  CHECK(t.value(t.softplus(a))[1] == doctest::Approx(std::log(2.0)));
  CHECK(t.value(t.exp_op(a))[2] == doctest::Approx(std::exp(2.0)));
  CHECK(t.value(t.axpb(a, 2.0, 1.0))[2] == doctest::Approx(5.0));
}

TEST_CASE("affine matches a hand-computed product") {
  Tape<double> t;
  Var x = t.constant(Tensor<double>::from({1, 2}, {1.0, 2.0}));
  Var w = t.constant(Tensor<double>::from({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var b = t.constant(Tensor<double>::from({2}, {0.5, -0.5}));
  const Tensor<double>& y = t.value(t.affine(x, w, b));
  CHECK(y[0] == doctest::Approx(1 * 1 + 2 * 3 + 0.5));
  CHECK(y[1] == doctest::Approx(1 * 2 + 2 * 4 - 0.5));
}

TEST_CASE("adam first step has magnitude lr for a fresh parameter") {
  ParameterSet<double> ps;
  Tensor<double>* w = ps.add("w", Tensor<double>({2}, 1.0));
  Tape<double> t;
  Var wv = t.param("w", w);
  // loss = 0.2 * (w0 + w1): constant gradient 0.2 on both elements.
  Var loss = t.axpb(t.sum(wv), 0.2, 0.0);
  t.backward(loss);
  ps.adam_step(t.param_grads(), 1e-3);
  // First step: m_hat = g, v_hat = g^2, update = -lr * g / (|g| + eps).
  double expect = 1.0 - 1e-3 * (0.2 / (0.2 + 1e-8));
  CHECK((*w)[0] == doctest::Approx(expect).epsilon(1e-9));
  CHECK((*w)[1] == doctest::Approx(expect).epsilon(1e-9));
  CHECK(ps.step_count() == 1);
}

TEST_CASE("adam leaves parameters without gradients untouched") {
  ParameterSet<double> ps;
  Tensor<double>* used = ps.add("used", Tensor<double>({1}, 1.0));
  Tensor<double>* unused = ps.add("unused", Tensor<double>({1}, 5.0));
  Tape<double> t;
  Var loss = t.sum(t.square(t.param("used", used)));
  t.backward(loss);
  ps.adam_step(t.param_grads(), 1e-2);
  CHECK((*unused)[0] == 5.0);
  CHECK((*used)[0] != 1.0);
}

TEST_CASE("adam with zero learning rate still advances moments") {
  ParameterSet<double> ps;
  Tensor<double>* w = ps.add("w", Tensor<double>({1}, 2.0));
  Tape<double> t;
  Var loss = t.sum(t.square(t.param("w", w)));
  t.backward(loss);
  ps.adam_step(t.param_grads(), 0.0);
  CHECK((*w)[0] == 2.0);
  CHECK(ps.step_count() == 1);
  CHECK(ps.record("w").m[0] != 0.0);
  CHECK(ps.record("w").v[0] != 0.0);
}

TEST_CASE("duplicate parameter names are rejected") {
  ParameterSet<double> ps;
  ps.add("w", Tensor<double>({1}, 0.0));
  CHECK_THROWS_AS(ps.add("w", Tensor<double>({1}, 0.0)), ConfigError);
}

TEST_CASE("gradient check validates a linear map to near machine precision") {
  ParameterSet<double> ps;
  Rng init(3);
  Tensor<double>* w = ps.add("w", Tensor<double>::uniform({4}, init, -1, 1));
  Tensor<double> c = Tensor<double>::uniform({4}, init, -1, 1);
  auto build = [&](Tape<double>& t) {
    return t.sum(t.mul(t.param("w", w), t.constant(c)));
  };
  Rng rng(4);
  GradCheckReport rep = gradient_check(ps, build, 4, rng);
  CHECK(rep.max_rel_err < 1e-9);
  CHECK(rep.checked == 4);
}

TEST_CASE("gradient check validates sin composed with square") {
  ParameterSet<double> ps;
  Rng init(5);
  Tensor<double>* w = ps.add("w", Tensor<double>::uniform({6}, init, -1, 1));
  auto build = [&](Tape<double>& t) {
    return t.sum(t.sin_op(t.square(t.param("w", w))));
  };
  Rng rng(6);
  GradCheckReport rep = gradient_check(ps, build, 6, rng);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradient check flags a corrupted gradient") {
  // The build lambda returns x^2 on the first call (used for backward) and
  // x^2 + 0.1 x on later calls (used for the finite-difference probes), so
  // the analytic gradient is wrong by exactly 0.1 from the probes' view.
  ParameterSet<double> ps;
  Tensor<double>* w = ps.add("w", Tensor<double>({1}, 0.7));
  int calls = 0;
  auto build = [&](Tape<double>& t) {
    ++calls;
    Var x = t.param("w", w);
    Var sq = t.square(x);
    if (calls == 1) return t.sum(sq);
    return t.sum(t.add(sq, t.axpb(x, 0.1, 0.0)));
  };
  Rng rng(7);
  GradCheckReport rep = gradient_check(ps, build, 1, rng);
  CHECK(rep.max_rel_err > 1e-2);
}

TEST_CASE("primitive gradients survive a multi-seed fuzz") {
  // Composite chains of smooth primitives over 40 random seeds; relu/abs
  // inputs are nudged off their kinks.
  for (uint64_t seed = 1; seed <= 40; ++seed) {
    ParameterSet<double> ps;
    Rng init(seed);
    Tensor<double> w0 = Tensor<double>::uniform({5}, init, -2, 2);
    for (int64_t i = 0; i < 5; ++i)
      if (std::abs(w0[i]) < 0.05) w0[i] = 0.1;
    Tensor<double>* w = ps.add("w", std::move(w0));
    auto build = [&](Tape<double>& t) {
      Var x = t.param("w", w);
      Var a = t.sigmoid(t.sin_op(x));
      Var b = t.softplus(t.cos_op(x));
      Var c = t.relu(x);
      Var d = t.abs_op(x);
      Var e = t.exp_op(t.axpb(t.square(x), -0.1, 0.0));
      return t.sum(t.add(t.mul(a, b), t.add(c, t.mul(d, e))));
    };
    Rng rng(seed + 1000);
    GradCheckReport rep = gradient_check(ps, build, 5, rng);
    CAPTURE(seed);
    CHECK(rep.max_rel_err < 1e-5);
  }
}

TEST_CASE("reductions and concat propagate gradients correctly") {
  ParameterSet<double> ps;
  Rng init(11);
  Tensor<double>* a = ps.add("a", Tensor<double>::uniform({3, 2}, init, -1, 1));
  Tensor<double>* b = ps.add("b", Tensor<double>::uniform({3, 4}, init, -1, 1));
  Tensor<double>* g = ps.add("g", Tensor<double>::uniform({4, 2}, init, -1, 1));
  auto build = [&](Tape<double>& t) {
    Var cat = t.concat_cols({t.param("a", a), t.param("b", b)});
    Var rows = t.concat_rows({cat, cat});
    Var picked = t.gather_rows(t.param("g", g), {3, 0, 0, 2});
    return t.add(t.mean(t.sum_axis1(rows)), t.sum(picked));
  };
  Rng rng(12);
  GradCheckReport rep = gradient_check(ps, build, 30, rng);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("forward and backward are bit-reproducible") {
  auto run = [](std::vector<double>* grads) {
    ParameterSet<float> ps;
    Rng init(13);
    Tensor<float>* w =
        ps.add("w", Tensor<float>::uniform({8, 8}, init, -1, 1));
    Tensor<float> x = Tensor<float>::uniform({4, 8}, init, -1, 1);
    Tape<float> t;
    Var y = t.sum(t.sigmoid(t.affine(t.constant(x), t.param("w", w), Var{})));
    t.backward(y);
    double out = t.value(y)[0];
    for (auto& pg : t.param_grads())
      for (int64_t i = 0; i < pg.grad->numel(); ++i)
        grads->push_back((*pg.grad)[i]);
    return out;
  };
  std::vector<double> g1, g2;
  double v1 = run(&g1);
  double v2 = run(&g2);
  CHECK(std::memcmp(&v1, &v2, sizeof v1) == 0);
  REQUIRE(g1.size() == g2.size());
  CHECK(g1 == g2);
}

TEST_CASE("adam updates are deterministic across identical runs") {
  auto run = [] {
    ParameterSet<float> ps;
    Rng init(14);
    Tensor<float>* w = ps.add("w", Tensor<float>::uniform({16}, init, -1, 1));
    for (int step = 0; step < 5; ++step) {
      Tape<float> t;
      Var loss = t.sum(t.square(t.param("w", w)));
      t.backward(loss);
      ps.adam_step(t.param_grads(), 1e-2);
    }
    return w->data;
  };
  CHECK(run() == run());
}

TEST_CASE("backward can only run once per tape") {
  Tape<double> t;
  Var x = t.constant(Tensor<double>({1}, 1.0));
  Var y = t.sum(t.square(x));
  t.backward(y);
  CHECK_THROWS_AS(t.backward(y), Error);
}

TEST_CASE("shape mismatches in binary ops are rejected") {
  Tape<double> t;
  Var a = t.constant(Tensor<double>({2}, 1.0));
  Var b = t.constant(Tensor<double>({3}, 1.0));
  CHECK_THROWS_AS(t.add(a, b), ConfigError);
}

}  // TEST_SUITE
