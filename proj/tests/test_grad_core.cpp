#include <cmath>
#include <random>

#include "b3s/gradcheck.hpp"
#include "b3s/optim.hpp"
#include "b3s/tape.hpp"
#include "doctest.h"

using namespace b3s;

namespace {

Parameter make_param(const std::string& name, Shape dims, std::mt19937_64& rng, float scale = 0.5f) {
  Parameter p(name, std::move(dims));
  init_uniform(p, rng, scale);
  return p;
}

Tensor row(std::vector<float> v) { return Tensor::row(std::move(v)); }

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape t;
  auto y = t.softmax(t.input(row({0, 0, 0})));
  for (double v : t.value(y).data()) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("elementwise-min picks the smaller entry") {
  Tape t;
  auto y = t.minimum(t.input(row({0.2f, 0.9f})), t.input(row({0.5f, 0.1f})));
  CHECK(t.value(y)[0] == doctest::Approx(0.2));
  CHECK(t.value(y)[1] == doctest::Approx(0.1));
}

TEST_CASE("matmul with a zero operand is zero") {
  Tape t;
  Tensor b({3, 1}, {1.5f, -2.0f, 7.0f});
  auto y = t.matmul(t.input(Tensor({2, 3})), t.input(b));
  CHECK(t.value(y).dims() == Shape{2, 1});
  for (double v : t.value(y).data()) CHECK(v == 0.0);
}

TEST_CASE("matmul handles every transpose combination") {
  // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
  Tensor a({2, 2}, {1, 2, 3, 4}), b({2, 2}, {5, 6, 7, 8});
  Tape t;
  auto na = t.input(a), nb = t.input(b);
  CHECK(t.value(t.matmul(na, nb)).data()[0] == 19.0);                // row0 . col0
  CHECK(t.value(t.matmul(na, nb, false, true)).data()[1] == 23.0);   // [1,2].[7,8]
  CHECK(t.value(t.matmul(na, nb, true, false)).data()[0] == 26.0);   // [1,3].[5,7]
  CHECK(t.value(t.matmul(na, nb, true, true)).data()[3] == 46.0);    // [2,4].[7,8]
}

TEST_CASE("dimension mismatch names the kernel and the dims") {
  Tape t;
  auto a = t.input(Tensor({2, 3}));
  auto b = t.input(Tensor({2, 1}));
  try {
    t.matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x1]") != std::string::npos);
  }
  CHECK_THROWS_AS(t.add(t.input(Tensor({1, 3})), t.input(Tensor({1, 2}))), DimensionError);
  CHECK_THROWS_AS(t.minimum(t.input(Tensor({1, 3})), t.input(Tensor({1, 1}))), DimensionError);
}

TEST_CASE("generic eval dispatches to the same kernels") {
  Tape t;
  const NodeId in[] = {t.input(row({1, 2})), t.input(row({3, 4}))};
  auto y = t.eval(Kernel::Mul, in);
  CHECK(t.value(y)[1] == 8.0);
  KernelArgs args;
  args.factor = -2.0;
  const NodeId one[] = {y};
  CHECK(t.value(t.eval(Kernel::Scale, one, args))[0] == -6.0);
  CHECK_THROWS(t.eval(Kernel::Tanh, in));
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Parameter x("x", {1, 2});
  x.value[0] = 1;
  x.value[1] = 2;
  Tape t;
  auto px = t.param(x);
  t.backward(t.reduce_sum(t.mul(px, px)));
  CHECK(x.grad[0] == doctest::Approx(2.0));
  CHECK(x.grad[1] == doctest::Approx(4.0));
}

TEST_CASE("backward of sum(tanh(x)) at 0 is 1") {
  Parameter x("x", {1, 1});
  Tape t;
  t.backward(t.reduce_sum(t.tanh(t.param(x))));
  CHECK(x.grad[0] == doctest::Approx(1.0));
}

TEST_CASE("backward rejects a non-scalar loss and leaves unreachable params at zero") {
  Parameter used("used", {1, 2}), unused("unused", {1, 2});
  used.value.fill(1.0f);
  Tape t;
  auto u = t.param(used);
  t.param(unused);
  CHECK_THROWS_AS(t.backward(u), DimensionError);
  t.backward(t.reduce_sum(u));
  CHECK(unused.grad[0] == 0.0f);
  CHECK(unused.grad[1] == 0.0f);
  CHECK(used.grad[0] == 1.0f);
}

TEST_CASE("every kernel passes a central-difference check") {
  std::mt19937_64 rng(11);
  auto a = make_param("a", {2, 3}, rng);
  auto b = make_param("b", {3, 4}, rng);
  auto c = make_param("c", {2, 3}, rng);
  auto r = make_param("r", {1, 3}, rng);
  auto v = make_param("v", {1, 6}, rng);
  auto table = make_param("table", {5, 3}, rng);
  for (auto& x : v.value.data()) x = std::abs(x) + 0.2f;  // log domain
  std::vector<Parameter*> ps = {&a, &b, &c, &r, &v, &table};

  const std::vector<std::pair<const char*, std::function<NodeId(Tape&)>>> cases = {
      {"matmul", [&](Tape& t) { return t.reduce_sum(t.tanh(t.matmul(t.param(a), t.param(b)))); }},
      {"matmul^T", [&](Tape& t) { return t.reduce_sum(t.tanh(t.matmul(t.param(a), t.param(c), false, true))); }},
      {"T^matmul", [&](Tape& t) { return t.reduce_sum(t.tanh(t.matmul(t.param(a), t.param(c), true, false))); }},
      {"self matmul", [&](Tape& t) { return t.reduce_sum(t.matmul(t.param(a), t.param(a), false, true)); }},
      {"add row", [&](Tape& t) { return t.reduce_sum(t.tanh(t.add(t.param(a), t.param(r)))); }},
      {"sub", [&](Tape& t) { return t.reduce_sum(t.tanh(t.sub(t.param(a), t.param(c)))); }},
      {"mul", [&](Tape& t) { return t.reduce_sum(t.mul(t.param(a), t.param(c))); }},
      {"mul scalar",
       [&](Tape& t) { return t.reduce_sum(t.mul(t.param(a), t.slice_cols(t.param(r), 1, 1))); }},
      {"concat", [&](Tape& t) { return t.reduce_sum(t.tanh(t.concat({t.param(a), t.param(c)}))); }},
      {"concat rows",
       [&](Tape& t) {
         const NodeId parts[] = {t.param(a), t.param(c)};
         return t.reduce_mean(t.sigmoid(t.concat_rows(parts)));
       }},
      {"softmax",
       [&](Tape& t) { return t.neg_log_pick(t.softmax(t.slice_cols(t.param(v), 0, 6)), 2); }},
      {"softmax rows", [&](Tape& t) { return t.reduce_sum(t.mul(t.softmax(t.param(a)), t.param(c))); }},
      {"log", [&](Tape& t) { return t.reduce_sum(t.log(t.param(v))); }},
      {"min", [&](Tape& t) { return t.reduce_sum(t.minimum(t.param(a), t.param(c))); }},
      {"scale", [&](Tape& t) { return t.reduce_sum(t.tanh(t.scale(t.param(a), -1.7))); }},
      {"gather",
       [&](Tape& t) {
         const std::size_t ids[] = {4, 0, 4};
         return t.reduce_sum(t.tanh(t.gather_rows(t.param(table), ids)));
       }},
      {"scatter",
       [&](Tape& t) {
         const std::size_t ids[] = {1, 3, 1};
         return t.neg_log_pick(t.add(t.scatter_add(t.param(r), ids, 4), t.scalar(2.0)), 1);
       }},
  };
  for (const auto& [name, build] : cases) {
    CAPTURE(name);
    auto report = check_tape_gradients(build, ps);
    CHECK(report.finite);
    CHECK(report.max_rel_err <= 1e-3);
  }
}

TEST_CASE("finite_diff_check on x^2 and on a constant") {
  Parameter x("x", {1, 1});
  x.value[0] = 3.0f;
  std::vector<Parameter*> ps = {&x};
  auto rep = finite_diff_check([&] { return double(x.value[0]) * x.value[0]; },
                               [&] { x.grad[0] = 2.0f * x.value[0]; }, ps, 1e-4);
  CHECK(rep.worst_analytic == doctest::Approx(6.0));
  CHECK(rep.max_rel_err < 1e-8);

  auto flat = finite_diff_check([] { return 4.0; }, [] {}, ps, 1e-3);
  CHECK(flat.max_rel_err == 0.0);
  CHECK(flat.passed(1e-3));

  // a tiny analytic gradient against a flat objective
  auto tiny = [&](double floor) {
    return finite_diff_check([] { return 4.0; }, [&] { x.grad[0] = 1e-9f; }, ps, 1e-3, floor);
  };
  CHECK(tiny(1e-9).max_rel_err == doctest::Approx(1.0));
  CHECK(tiny(1e-6).max_rel_err == doctest::Approx(1e-3));
}

TEST_CASE("finite_diff_check reports non-finite objectives by parameter name") {
  Parameter x("weights.x", {1, 1});
  std::vector<Parameter*> ps = {&x};
  auto rep = finite_diff_check([] { return std::nan(""); }, [] {}, ps);
  CHECK_FALSE(rep.finite);
  CHECK(rep.failure.find("weights.x") != std::string::npos);
}

TEST_CASE("clip_global_norm") {
  Parameter p("p", {1, 2});
  std::vector<Parameter*> ps = {&p};
  p.grad[0] = 3;
  p.grad[1] = 4;
  CHECK(clip_global_norm(ps, 2.0) == doctest::Approx(0.4));
  CHECK(p.grad[0] == doctest::Approx(1.2));
  CHECK(p.grad[1] == doctest::Approx(1.6));
  // idempotent
  const float g0 = p.grad[0], g1 = p.grad[1];
  CHECK(clip_global_norm(ps, 2.0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(p.grad[0] == doctest::Approx(g0));
  CHECK(p.grad[1] == doctest::Approx(g1));

  Parameter q("q", {1, 1});
  std::vector<Parameter*> qs = {&q};
  q.grad[0] = 0.1f;
  CHECK(clip_global_norm(qs, 2.0) == 1.0);
  CHECK(q.grad[0] == 0.1f);
  q.grad[0] = 0.0f;
  CHECK(clip_global_norm(qs, 2.0) == 1.0);
  CHECK_THROWS(clip_global_norm(qs, 0.0));
}

TEST_CASE("adagrad_step") {
  Parameter p("p", {1, 1});
  std::vector<Parameter*> ps = {&p};
  p.grad[0] = 3.0f;
  adagrad_step(ps, 0.1);
  CHECK(p.adagrad_acc[0] == doctest::Approx(9.1));
  CHECK(p.value[0] == doctest::Approx(-0.099449).epsilon(1e-5));
  CHECK(p.grad[0] == 0.0f);

  SUBCASE("zero gradient leaves state alone") {
    const float v = p.value[0], a = p.adagrad_acc[0];
    adagrad_step(ps, 0.1);
    CHECK(p.value[0] == v);
    CHECK(p.adagrad_acc[0] == a);
  }
  SUBCASE("constant gradient gives shrinking steps") {
    double prev_step = 1e9;
    for (int k = 0; k < 5; ++k) {
      const float before = p.value[0];
      p.grad[0] = 3.0f;
      adagrad_step(ps, 0.1);
      const double step = std::abs(double(p.value[0]) - before);
      CHECK(step < prev_step);
      prev_step = step;
    }
  }
}

TEST_CASE("softmax rows sum to one and stay positive") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> dist(0.0f, 10.0f);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x({3, 7});
    for (auto& v : x.data()) v = dist(rng);
    Tape t;
    const auto& y = t.value(t.softmax(t.input(x)));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(y.at(r, c) > 0.0);
        s += y.at(r, c);
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("tape evaluation is deterministic") {
  std::mt19937_64 rng(3);
  auto a = make_param("a", {4, 4}, rng);
  auto run = [&] {
    Tape t;
    auto pa = t.param(a);
    auto y = t.softmax(t.tanh(t.matmul(pa, pa, false, true)));
    t.backward(t.reduce_sum(t.log(y)));
    return t.value(y);
  };
  auto first = run();
  a.zero_grad();
  CHECK(first == run());
}
