// Copyright 2026 cifst authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <random>
#include <stdexcept>

#include <doctest.h>

#include "cifst/graph.hpp"
#include "cifst/tensor.hpp"

using namespace cifst::numerics;

namespace {

// FD oracle for a scalar-valued graph builder, checked against backward().
double fd_error(const std::function<Value(Graph&, Value)>& build, Tensor x, double h = 1e-5) {
  x.requires_grad = true;
  Graph g;
  Value leaf = g.leaf(x);
  Value loss = build(g, leaf);
  g.backward(loss);
  const std::vector<double> analytic = leaf.t().grad;
  const auto f = [&](const Tensor& probe) {
    Graph g2;
    return build(g2, g2.leaf(probe)).item();
  };
  return finite_difference_check(f, x, analytic, h).max_rel_err;
}

}  // namespace

TEST_CASE("quadratic gradient: loss = sum(w*w)") {
  Tensor w = Tensor::from({2}, {1.0, 2.0});
  w.requires_grad = true;
  Graph g;
  Value leaf = g.leaf(w);
  Value loss = g.sum(g.mul(leaf, leaf));
  g.backward(loss);
  CHECK(leaf.t().grad[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(leaf.t().grad[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("sigmoid gradient at zero is 0.25") {
  Tensor x = Tensor::scalar(0.0);
  x.requires_grad = true;
  Graph g;
  Value leaf = g.leaf(x);
  Value loss = g.sum(g.sigmoid(leaf));
  g.backward(loss);
  CHECK(leaf.t().grad[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("finite differences on x^2 at x=3 are nearly exact") {
  Tensor x = Tensor::scalar(3.0);
  const std::vector<double> analytic = {6.0};
  const auto f = [](const Tensor& t) { return t.data[0] * t.data[0]; };
  const FdReport r = finite_difference_check(f, x, analytic, 1e-5);
  CHECK(r.ok);
  CHECK(r.max_rel_err < 1e-8);
}

TEST_CASE("non-finite objective reports failure instead of crashing") {
  Tensor x = Tensor::scalar(0.5);
  const std::vector<double> analytic = {1.0};
  const auto f = [](const Tensor&) { return std::numeric_limits<double>::quiet_NaN(); };
  const FdReport r = finite_difference_check(f, x, analytic, 1e-5);
  CHECK_FALSE(r.ok);
}

TEST_CASE("every primitive matches central finite differences within 1e-4") {
  std::mt19937_64 rng(2024);
  const Tensor a = rand_uniform({3, 4}, rng, -1.0, 1.0);
  const Tensor b = rand_uniform({3, 4}, rng, -1.0, 1.0);
  const Tensor m = rand_uniform({4, 5}, rng, -1.0, 1.0);
  const Tensor vrow = rand_uniform({4}, rng, -1.0, 1.0);
  const Tensor v3 = rand_uniform({3}, rng, -1.0, 1.0);
  const Tensor vec = rand_uniform({6}, rng, -1.0, 1.0);
  const std::vector<int> ids = {2, 0, 1, 2};
  const std::vector<int> segs = {0, 0, -1};
  const std::vector<int> targets = {1, 3, 0};

  const auto sum_build = [](const std::function<Value(Graph&, Value)>& op) {
    return [op](Graph& g, Value x) { return g.sum(op(g, x)); };
  };

  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.add(x, g.constant(b)); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.add(x, g.constant(vrow)); }), a) <
        1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.mul(x, g.constant(b)); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.scale(x, -1.7); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.add_const(x, 0.3); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.sigmoid(x); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.gelu(x); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.reciprocal(g.add_const(x, 3.0)); }),
                 a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.abs(g.add_const(x, 2.0)); }), a) <
        1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.transpose(x); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.reshape(x, {4, 3}); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.slice_cols(x, 1, 3); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.slice_rows(x, 0, 2); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.scale_rows(x, g.constant(v3)); }),
                 a) < 1e-4);
  // the scaling vector side of scale_rows
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.scale_rows(g.constant(a), x); }),
                 v3) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) {
          return g.scalar_mul(g.constant(a), g.sum(x));
        }),
                 v3) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.matmul(x, g.constant(m)); }), a) <
        1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.matmul(g.constant(a), x); }), m) <
        1e-4);
  CHECK(fd_error([](Graph& g, Value x) { return g.mean(x); }, a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.cumsum(x); }), vec) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) {
          return g.mul(g.softmax_rows(x), g.constant(b));  // weight rows to break symmetry
        }),
                 a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) {
          // weight the normalized rows so the objective is not constant
          return g.mul(g.layer_norm(x, g.constant(Tensor({4}, 1.0)), g.constant(Tensor({4}))),
                       g.constant(b));
        }),
                 a) < 1e-4);
  // layer_norm gain and bias sides
  CHECK(fd_error(sum_build([&](Graph& g, Value x) {
          return g.layer_norm(g.constant(a), x, g.constant(Tensor({4})));
        }),
                 vrow) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) {
          return g.layer_norm(g.constant(a), g.constant(Tensor({4}, 1.0)), x);
        }),
                 vrow) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.gather_rows(x, ids); }), a) < 1e-4);
  CHECK(fd_error(sum_build([&](Graph& g, Value x) { return g.segment_sum(x, segs, 2); }), a) <
        1e-4);
  CHECK(fd_error([&](Graph& g, Value x) { return g.cross_entropy(x, targets); },
                 rand_uniform({3, 5}, rng, -1.0, 1.0)) < 1e-4);
  const Tensor conv_bias = rand_uniform({5}, rng, -0.5, 0.5);
  CHECK(fd_error(
            [&](Graph& g, Value x) {
              return g.cross_entropy(
                  g.causal_conv1d(x, g.constant(m), g.constant(conv_bias), 1, 1), targets);
            },
            a) < 1e-4);
}

TEST_CASE("causal_conv1d matches FD for kernel 3 stride 2 including weights") {
  std::mt19937_64 rng(11);
  const Tensor x = rand_uniform({7, 2}, rng, -1.0, 1.0);
  const Tensor w = rand_uniform({6, 3}, rng, -1.0, 1.0);
  const Tensor b = rand_uniform({3}, rng, -1.0, 1.0);
  CHECK(fd_error(
            [&](Graph& g, Value v) {
              return g.sum(g.causal_conv1d(v, g.constant(w), g.constant(b), 3, 2));
            },
            x) < 1e-4);
  CHECK(fd_error(
            [&](Graph& g, Value v) {
              return g.sum(g.causal_conv1d(g.constant(x), v, g.constant(b), 3, 2));
            },
            w) < 1e-4);
  CHECK(fd_error(
            [&](Graph& g, Value v) {
              return g.sum(g.causal_conv1d(g.constant(x), g.constant(w), v, 3, 2));
            },
            b) < 1e-4);
}

TEST_CASE("three-layer MLP gradient matches finite differences") {
  std::mt19937_64 rng(7);
  const Tensor w1 = rand_uniform({4, 8}, rng, -1.0, 1.0);
  const Tensor w2 = rand_uniform({8, 8}, rng, -1.0, 1.0);
  const Tensor w3 = rand_uniform({8, 2}, rng, -1.0, 1.0);
  const Tensor x0 = rand_uniform({3, 4}, rng, -1.0, 1.0);

  const auto net = [&](Graph& g, Value w1v, Value w2v, Value w3v) {
    Value h1 = g.gelu(g.matmul(g.constant(x0), w1v));
    Value h2 = g.gelu(g.matmul(h1, w2v));
    return g.sum(g.sigmoid(g.matmul(h2, w3v)));
  };

  // check the gradient of each layer's weights
  CHECK(fd_error([&](Graph& g, Value v) { return net(g, v, g.constant(w2), g.constant(w3)); },
                 w1) < 1e-4);
  CHECK(fd_error([&](Graph& g, Value v) { return net(g, g.constant(w1), v, g.constant(w3)); },
                 w2) < 1e-4);
  CHECK(fd_error([&](Graph& g, Value v) { return net(g, g.constant(w1), g.constant(w2), v); },
                 w3) < 1e-4);
}

TEST_CASE("backward rejects non-scalar loss") {
  Graph g;
  Tensor x = Tensor::from({2}, {1.0, 2.0});
  x.requires_grad = true;
  Value leaf = g.leaf(x);
  CHECK_THROWS_AS(g.backward(leaf), std::invalid_argument);
}

TEST_CASE("shape mismatches are rejected at construction") {
  Graph g;
  Value a = g.constant(Tensor({2, 3}));
  Value b = g.constant(Tensor({3, 2}));
  CHECK_THROWS_AS(g.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(g.mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(g.matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(g.slice_cols(a, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(g.cross_entropy(a, std::vector<int>{0, 1, 5}), std::invalid_argument);
}

TEST_CASE("forward is bitwise deterministic for a fixed seed") {
  const auto run = [] {
    std::mt19937_64 rng(99);
    Graph g;
    Value x = g.constant(rand_uniform({5, 6}, rng, -1.0, 1.0));
    Value w = g.constant(rand_uniform({6, 6}, rng, -1.0, 1.0));
    Value y = g.softmax_rows(g.matmul(g.gelu(g.matmul(x, w)), g.transpose(w)));
    return y.t().data;
  };
  const std::vector<double> first = run();
  const std::vector<double> second = run();
  REQUIRE(first.size() == second.size());
  for (size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("gradient accumulates across shared subexpressions") {
  // y = x*x + x -> dy/dx = 2x + 1
  Tensor x = Tensor::scalar(1.5);
  x.requires_grad = true;
  Graph g;
  Value leaf = g.leaf(x);
  Value loss = g.sum(g.add(g.mul(leaf, leaf), leaf));
  g.backward(loss);
  CHECK(leaf.t().grad[0] == doctest::Approx(4.0).epsilon(1e-12));
}
