// Copyright 2026 The blockseq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "blockseq/autodiff.hpp"
#include "blockseq/errors.hpp"
#include "blockseq/optim.hpp"
#include "test_support.hpp"

using namespace blockseq;
using Catch::Approx;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

// Runs the finite-difference oracle on a unary or binary primitive over
// random inputs held in a store.
double check_primitive(const std::function<Var(Var, Var)>& op, Shape sa, Shape sb, double lo = -2.0,
                       double hi = 2.0, std::uint64_t seed = 1) {
  RandomStream rng(seed, "prim");
  ParameterStore store;
  store.add("a", rng.uniform_matrix(sa[0], sa[1], lo, hi));
  store.add("b", rng.uniform_matrix(sb[0], sb[1], lo, hi));
  auto loss = [&](Tape& t) {
    Params p(t, store);
    return testing::probe_loss(op(p("a"), p("b")));
  };
  return finite_difference_check(loss, store, kStep).worst;
}

}  // namespace

TEST_CASE("backward of w^2 at 3 is 6") {
  ParameterStore store;
  store.add("w", Tensor::scalar(3.0));
  Tape tape;
  Params p(tape, store);
  backward(ops::square(p("w")));
  CHECK(store.grad("w").item() == 6.0);
}

TEST_CASE("backward of tanh at 0 is 1") {
  ParameterStore store;
  store.add("x", Tensor::scalar(0.0));
  Tape tape;
  Params p(tape, store);
  backward(ops::tanh(p("x")));
  CHECK(store.grad("x").item() == 1.0);
}

TEST_CASE("gradients accumulate over repeated uses and repeated passes") {
  ParameterStore store;
  store.add("w", Tensor::scalar(2.0));
  Tape tape;
  Params p(tape, store);
  Var w = p("w");
  Var loss = ops::add(ops::mul(w, w), ops::scale(p("w"), 3.0));  // w^2 + 3w
  backward(loss);
  CHECK(store.grad("w").item() == 7.0);
  backward(loss);
  CHECK(store.grad("w").item() == 14.0);
}

TEST_CASE("unused parameters keep exactly zero gradient") {
  ParameterStore store;
  store.add("used", Tensor::row({1, 2}));
  store.add("unused", Tensor::row({3, 4}));
  Tape tape;
  Params p(tape, store);
  (void)p("unused");
  backward(ops::sum(ops::square(p("used"))));
  for (double g : store.grad("unused").values()) CHECK(g == 0.0);
}

TEST_CASE("backward error paths") {
  Tape empty;
  Tape other;
  Var v = other.constant(Tensor::scalar(1.0));
  CHECK_THROWS_AS(empty.backward(v), EmptyTapeError);
  Tape tape;
  Var m = tape.variable(Tensor::row({1, 2}));
  CHECK_THROWS_AS(backward(m), ShapeError);
}

TEST_CASE("stop_gradient blocks flow") {
  ParameterStore store;
  store.add("w", Tensor::row({1.0, -2.0}));
  Tape tape;
  Params p(tape, store);
  backward(ops::sum(ops::square(ops::stop_gradient(p("w")))));
  CHECK(store.grad("w") == Tensor::row({0.0, 0.0}));
}

TEST_CASE("finite-difference oracle is exact on a quadratic form") {
  RandomStream rng(11, "q");
  ParameterStore store;
  store.add("x", rng.normal_matrix(1, 5));
  Tensor a = rng.normal_matrix(5, 5);
  auto loss = [&](Tape& t) {
    Params p(t, store);
    Var x = p("x");
    return ops::sum(ops::mul(ops::matmul(x, t.constant(a)), x));
  };
  CHECK(finite_difference_check(loss, store, kStep).worst < 1e-8);
}

TEST_CASE("finite-difference oracle detects non-determinism") {
  ParameterStore store;
  store.add("x", Tensor::scalar(1.0));
  double drift = 0.0;
  auto loss = [&](Tape& t) {
    drift += 1.0;
    Params p(t, store);
    return ops::add_scalar(p("x"), drift);
  };
  CHECK_THROWS_AS(finite_difference_check(loss, store, kStep), DeterminismError);
  CHECK_THROWS_AS(finite_difference_check(loss, store, 0.5), ConfigError);
}

TEST_CASE("three-layer composite matches finite differences") {
  RandomStream rng(5, "comp");
  ParameterStore store;
  store.add("w1", rng.normal_matrix(4, 6));
  store.add("w2", rng.normal_matrix(6, 5));
  store.add("w3", rng.normal_matrix(5, 2));
  Tensor x = rng.normal_matrix(3, 4);
  auto loss = [&](Tape& t) {
    Params p(t, store);
    Var h = ops::tanh(ops::matmul(t.constant(x), p("w1")));
    h = ops::sigmoid(ops::matmul(h, p("w2")));
    return testing::probe_loss(ops::softplus(ops::matmul(h, p("w3"))));
  };
  CHECK(finite_difference_check(loss, store, kStep).worst < kTol);
}

TEST_CASE("every primitive passes the finite-difference oracle") {
  using V = Var;
  SECTION("matmul") { CHECK(check_primitive([](V a, V b) { return ops::matmul(a, b); }, {3, 4}, {4, 5}) < kTol); }
  SECTION("matmul transposed") {
    CHECK(check_primitive([](V a, V b) { return ops::matmul(a, b, true); }, {3, 4}, {6, 4}) < kTol);
  }
  SECTION("transpose") {
    CHECK(check_primitive([](V a, V b) { return ops::mul(ops::transpose(a), b); }, {3, 4}, {4, 3}) < kTol);
  }
  SECTION("add/sub/mul broadcast") {
    CHECK(check_primitive([](V a, V b) { return ops::add(a, b); }, {3, 4}, {1, 4}) < kTol);
    CHECK(check_primitive([](V a, V b) { return ops::sub(a, b); }, {3, 4}, {3, 1}) < kTol);
    CHECK(check_primitive([](V a, V b) { return ops::mul(a, b); }, {3, 4}, {3, 4}) < kTol);
    CHECK(check_primitive([](V a, V b) { return ops::mul(a, b); }, {3, 4}, {1, 1}) < kTol);
  }
  SECTION("minimum") {
    CHECK(check_primitive([](V a, V b) { return ops::minimum(a, b); }, {3, 4}, {3, 4}) < kTol);
  }
  SECTION("unary activations") {
    for (auto f : std::vector<std::function<V(V)>>{ops::tanh, ops::sigmoid, ops::softplus, ops::relu, ops::gelu,
                                                   ops::exp, ops::square}) {
      CHECK(check_primitive([&](V a, V) { return f(a); }, {3, 4}, {1, 1}) < kTol);
    }
    CHECK(check_primitive([](V a, V) { return ops::log(a); }, {3, 4}, {1, 1}, 0.5, 3.0) < kTol);
    CHECK(check_primitive([](V a, V) { return ops::clamp(a, -1.0, 1.0); }, {3, 4}, {1, 1}) < kTol);
  }
  SECTION("reductions") {
    CHECK(check_primitive([](V a, V) { return ops::row_sum(a); }, {3, 4}, {1, 1}) < kTol);
    CHECK(check_primitive([](V a, V) { return ops::col_sum(a); }, {3, 4}, {1, 1}) < kTol);
    CHECK(check_primitive([](V a, V) { return ops::mean(a); }, {3, 4}, {1, 1}) < kTol);
  }
  SECTION("softmax and layer norm") {
    CHECK(check_primitive([](V a, V) { return ops::softmax_rows(a); }, {4, 6}, {1, 1}) < kTol);
    CHECK(check_primitive([](V a, V b) { return ops::layer_norm(a, b, ops::scale(b, 0.5)); }, {4, 6}, {1, 6}) <
          kTol);
  }
  SECTION("structural ops") {
    CHECK(check_primitive(
              [](V a, V b) {
                std::vector<V> parts{a, b};
                return ops::concat_cols(parts);
              },
              {3, 2}, {3, 4}) < kTol);
    CHECK(check_primitive(
              [](V a, V b) {
                std::vector<V> parts{a, b};
                return ops::concat_rows(parts);
              },
              {2, 4}, {3, 4}) < kTol);
    CHECK(check_primitive([](V a, V) { return ops::slice_rows(a, 1, 2); }, {4, 3}, {1, 1}) < kTol);
    CHECK(check_primitive([](V a, V) { return ops::slice_cols(a, 1, 2); }, {4, 3}, {1, 1}) < kTol);
    CHECK(check_primitive(
              [](V a, V) {
                std::vector<std::size_t> idx{2, 0, 2};
                return ops::gather_rows(a, idx);
              },
              {4, 3}, {1, 1}) < kTol);
    CHECK(check_primitive([](V a, V) { return ops::reshape(a, 2, 6); }, {4, 3}, {1, 1}) < kTol);
    CHECK(check_primitive([](V a, V) { return ops::repeat_rows(a, 3); }, {1, 5}, {1, 1}) < kTol);
  }
  SECTION("dropout with mask") {
    Tensor mask({3, 4}, std::vector<double>{2, 0, 2, 2, 0, 0, 2, 2, 2, 0, 2, 0});
    CHECK(check_primitive([&](V a, V) { return ops::dropout_with_mask(a, mask); }, {3, 4}, {1, 1}) < kTol);
  }
  SECTION("gaussian log density") {
    RandomStream rng(2, "g");
    ParameterStore store;
    store.add("x", rng.normal_matrix(5, 3));
    store.add("mu", rng.normal_matrix(1, 3));
    store.add("sigma", rng.uniform_matrix(1, 3, 0.5, 2.0));
    auto loss = [&](Tape& t) {
      Params p(t, store);
      return testing::probe_loss(ops::gaussian_log_density(p("x"), p("mu"), p("sigma")));
    };
    CHECK(finite_difference_check(loss, store, kStep).worst < kTol);
  }
}

TEST_CASE("gaussian log density at the mean") {
  Tape tape;
  Tensor sigma = Tensor::row({0.5, 2.0, 1.5});
  Var lp = ops::gaussian_log_density(tape.constant(Tensor::row({1, 2, 3})), tape.constant(Tensor::row({1, 2, 3})),
                                     tape.constant(sigma));
  const double expected = -(std::log(0.5) + std::log(2.0) + std::log(1.5)) - 1.5 * std::log(2.0 * M_PI);
  CHECK(lp.value().item() == Approx(expected).epsilon(1e-14));
}

TEST_CASE("adam moves against the gradient") {
  ParameterStore store;
  store.add("w", Tensor::row({1.0, -1.0}));
  store.grad("w") = Tensor::row({2.0, -3.0});
  Adam adam(0.1);
  adam.step(store);
  // First bias-corrected step has magnitude lr for every coordinate.
  CHECK(store.value("w")[0] == Approx(0.9));
  CHECK(store.value("w")[1] == Approx(-0.9));
  Adam restored(0.1);
  restored.import_state(adam.export_state());
  CHECK(restored.steps() == 1);
}
