#include <cmath>
#include <random>

#include "b3s/gradcheck.hpp"
#include "b3s/layers.hpp"
#include "doctest.h"

using namespace b3s;

namespace {

std::vector<NodeId> random_rows(Tape& t, std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<NodeId> rows;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x({1, dim});
    for (auto& v : x.data()) v = d(rng);
    rows.push_back(t.input(x));
  }
  return rows;
}

}  // namespace

TEST_CASE("embedding lookup") {
  ParameterStore store;
  auto emb = Embedding::declare(store, "emb", 6, 3);
  std::mt19937_64 rng(1);

  SUBCASE("zero table gives zeros") {
    Tape t;
    const std::size_t ids[] = {2, 5};
    for (double v : t.value(emb.lookup(t, ids)).data()) CHECK(v == 0.0);
  }
  SUBCASE("repeated ids give identical rows") {
    emb.init(rng);
    Tape t;
    const std::size_t ids[] = {0, 0};
    const auto& y = t.value(emb.lookup(t, ids));
    for (std::size_t c = 0; c < 3; ++c) CHECK(y.at(0, c) == y.at(1, c));
  }
  SUBCASE("adjoint is a one-hot row") {
    emb.init(rng);
    Tape t;
    t.backward(t.reduce_sum(emb.lookup(t, 3)));
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 3; ++c) CHECK(emb.table().grad.at(r, c) == (r == 3 ? 1.0f : 0.0f));
  }
  SUBCASE("out of range id names its position") {
    Tape t;
    const std::size_t ids[] = {1, 9};
    try {
      emb.lookup(t, ids);
      FAIL("expected out_of_range");
    } catch (const std::out_of_range& e) {
      CHECK(std::string(e.what()).find("position 1") != std::string::npos);
    }
  }
}

TEST_CASE("linear layer") {
  ParameterStore store;
  auto lin = Linear::declare(store, "lin", 3, 3);
  std::mt19937_64 rng(4);

  SUBCASE("identity weights, zero bias") {
    for (std::size_t i = 0; i < 3; ++i) lin.weight().value.at(i, i) = 1.0f;
    Tape t;
    auto x = t.input(Tensor::row({0.5f, -1.0f, 2.0f}));
    const auto& y = t.value(lin.apply(t, x));
    CHECK(y[0] == 0.5);
    CHECK(y[1] == -1.0);
    CHECK(y[2] == 2.0);
  }
  SUBCASE("zero input gives the bias") {
    lin.init(rng);
    lin.bias()->value[1] = 0.25f;
    Tape t;
    const auto& y = t.value(lin.apply(t, t.input(Tensor({1, 3}))));
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.25);
  }
  SUBCASE("matches a naive triple loop") {
    lin.init(rng);
    init_uniform(*lin.bias(), rng, 1.0f);
    Tensor x({4, 3});
    init_uniform(lin.weight(), rng, 1.0f);
    std::uniform_real_distribution<float> d(-1, 1);
    for (auto& v : x.data()) v = d(rng);
    Tape t;
    const auto& y = t.value(lin.apply(t, t.input(x)));
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t o = 0; o < 3; ++o) {
        double s = lin.bias()->value[o];
        for (std::size_t k = 0; k < 3; ++k) s += double(lin.weight().value.at(o, k)) * x.at(r, k);
        CHECK(y.at(r, o) == doctest::Approx(s).epsilon(1e-12));
      }
  }
  SUBCASE("dimension mismatch") {
    Tape t;
    CHECK_THROWS_AS(lin.apply(t, t.input(Tensor({1, 2}))), DimensionError);
  }
}

TEST_CASE("lstm cell") {
  ParameterStore store;
  auto cell = LstmCell::declare(store, "cell", 3, 4);
  CHECK(cell.gate_weight(0).value.dims() == Shape{4, 7});
  CHECK(cell.gate_bias(2).value.dims() == Shape{1, 4});

  SUBCASE("zero weights and state stay zero") {
    Tape t;
    auto x = t.input(Tensor::row({1.0f, -2.0f, 3.0f}));
    auto s = cell.step(t, x, cell.zero_state(t));
    for (double v : t.value(s.h).data()) CHECK(v == 0.0);
    for (double v : t.value(s.c).data()) CHECK(v == 0.0);
  }
  SUBCASE("zero weights halve the cell state") {
    Tape t;
    auto x = t.input(Tensor::row({1.0f, -2.0f, 3.0f}));
    LstmState prev{t.zeros(1, 4), t.input(Tensor::row({1.0f, -2.0f, 0.5f, 4.0f}))};
    auto s = cell.step(t, x, prev);
    const auto& c = t.value(s.c);
    CHECK(c[0] == doctest::Approx(0.5));
    CHECK(c[1] == doctest::Approx(-1.0));
    CHECK(c[3] == doctest::Approx(2.0));
  }
  SUBCASE("initialization sets the forget bias") {
    std::mt19937_64 rng(2);
    cell.init(rng);
    CHECK(cell.gate_bias(1).value[0] == kForgetBias);
    CHECK(cell.gate_bias(0).value[0] == 0.0f);
  }
  SUBCASE("gradient check at tiny dims") {
    std::mt19937_64 rng(8);
    store.for_each([&](Parameter& p) { init_uniform(p, rng, 0.5f); });
    Tensor x0({1, 3}), x1({1, 3});
    init_uniform(store.get("cell.w_i"), rng, 0.5f);
    std::uniform_real_distribution<float> d(-1, 1);
    for (auto& v : x0.data()) v = d(rng);
    for (auto& v : x1.data()) v = d(rng);
    auto report = check_tape_gradients(
        [&](Tape& t) {
          auto s = cell.step(t, t.input(x0), cell.zero_state(t));
          s = cell.step(t, t.input(x1), s);
          return t.reduce_sum(t.mul(s.h, s.c));
        },
        store.all());
    CHECK(report.max_rel_err <= 1e-3);
  }
  SUBCASE("state dims are validated") {
    Tape t;
    CHECK_THROWS_AS(cell.step(t, t.input(Tensor({1, 2})), cell.zero_state(t)), DimensionError);
  }
}

TEST_CASE("bidirectional encoder") {
  ParameterStore store;
  auto enc = BiLstmEncoder::declare(store, "enc", 3, 4);
  std::mt19937_64 rng(21);

  SUBCASE("single position") {
    enc.init(rng);
    Tape t;
    auto xs = random_rows(t, 1, 3, rng);
    auto out = enc.encode(t, xs);
    CHECK(t.value(out.states).dims() == Shape{1, 8});
    CHECK(out.forward.size() == 1);
    CHECK(out.backward.size() == 1);
  }
  SUBCASE("zero weights give zero states") {
    Tape t;
    auto xs = random_rows(t, 5, 3, rng);
    auto out = enc.encode(t, xs);
    for (double v : t.value(out.states).data()) CHECK(v == 0.0);
  }
  SUBCASE("empty input is rejected") {
    Tape t;
    CHECK_THROWS_AS(enc.encode(t, std::vector<NodeId>{}), std::invalid_argument);
  }
  SUBCASE("length, width and bounded outputs") {
    enc.init(rng);
    Tape t;
    auto xs = random_rows(t, 7, 3, rng);
    auto out = enc.encode(t, xs);
    CHECK(t.value(out.states).dims() == Shape{7, 8});
    for (double v : t.value(out.states).data()) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
  SUBCASE("backward direction replays the forward direction on reversed input") {
    enc.init(rng);
    // Copy the backward cell's weights into the forward cell.
    for (const char* g : {"i", "f", "o", "g"}) {
      store.get(std::string("enc.fw.w_") + g).value = store.get(std::string("enc.bw.w_") + g).value;
      store.get(std::string("enc.fw.b_") + g).value = store.get(std::string("enc.bw.b_") + g).value;
    }
    Tape t;
    auto xs = random_rows(t, 6, 3, rng);
    std::vector<NodeId> rev(xs.rbegin(), xs.rend());
    auto a = enc.encode(t, xs);
    auto b = enc.encode(t, rev);
    const std::size_t n = xs.size();
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(t.value(a.backward[i]) == t.value(b.forward[n - 1 - i]));
      CHECK(t.value(a.forward[i]) == t.value(b.backward[n - 1 - i]));
    }
  }
  SUBCASE("gradient check through the encoder") {
    store.for_each([&](Parameter& p) { init_uniform(p, rng, 0.5f); });
    Tensor xs({4, 3});
    init_uniform(store.get("enc.fw.w_g"), rng, 0.5f);
    std::uniform_real_distribution<float> d(-1, 1);
    for (auto& v : xs.data()) v = d(rng);
    auto report = check_tape_gradients(
        [&](Tape& t) {
          std::vector<NodeId> rows;
          for (std::size_t i = 0; i < 4; ++i) {
            Tensor r({1, 3});
            for (std::size_t c = 0; c < 3; ++c) r[c] = xs.at(i, c);
            rows.push_back(t.input(r));
          }
          auto out = enc.encode(t, rows);
          return t.reduce_sum(t.tanh(out.states));
        },
        store.all());
    CHECK(report.max_rel_err <= 1e-3);
  }
}
