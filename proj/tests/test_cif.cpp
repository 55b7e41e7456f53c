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

#include "cifst/cif.hpp"

using namespace cifst;
using cif::AcousticStates;
using cif::FiringSchedule;
using numerics::Graph;
using numerics::Tensor;
using numerics::Value;

namespace {

// Independent reference accumulator walk: plain O(T) loop, written without
// reference to the library implementation. Returns segment [begin, end)
// pairs; a crossing closes the segment at the current index and carries
// acc - 1 forward (multiple crossings at one index yield empty segments).
std::vector<std::pair<int64_t, int64_t>> reference_walk(const std::vector<double>& w) {
  std::vector<std::pair<int64_t, int64_t>> segments;
  double acc = 0.0;
  int64_t begin = 0;
  for (int64_t t = 0; t < static_cast<int64_t>(w.size()); ++t) {
    acc += w[static_cast<size_t>(t)];
    while (acc >= 1.0 - 1e-9) {
      segments.push_back({begin, t + 1});
      begin = t + 1;
      acc -= 1.0;
    }
  }
  return segments;
}

AcousticStates make_states(const std::vector<std::vector<double>>& rows, double state_ms = 80) {
  AcousticStates s;
  const int64_t t = static_cast<int64_t>(rows.size());
  const int64_t d = static_cast<int64_t>(rows[0].size());
  s.values = Tensor({t, d});
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < d; ++j)
      s.values.at(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  s.state_ms = state_ms;
  return s;
}

}  // namespace

TEST_CASE("compute_weights is the sigmoid of the last channel") {
  AcousticStates s = make_states({{1.0, 0.0}, {2.0, 0.0}, {3.0, 0.0}, {4.0, 0.0}});
  const std::vector<double> alpha = cif::compute_weights(s);
  REQUIRE(alpha.size() == 4);
  for (double a : alpha) CHECK(a == doctest::Approx(0.5).epsilon(1e-12));

  AcousticStates s2 = make_states({{0.0, std::log(3.0)}});
  CHECK(cif::compute_weights(s2)[0] == doctest::Approx(0.75).epsilon(1e-12));

  std::mt19937_64 rng(5);
  AcousticStates s3;
  s3.values = numerics::randn({10, 3}, rng, 4.0);
  for (double a : cif::compute_weights(s3)) {
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }
}

TEST_CASE("scale_weights hand example and identities") {
  const std::vector<double> alpha = {0.6, 0.6, 0.9};
  const cif::ScaledWeights sw = cif::scale_weights(alpha, 2);
  CHECK(sw.n_hat == doctest::Approx(2.1).epsilon(1e-12));
  CHECK(sw.scaled[0] == doctest::Approx(0.571428571428571).epsilon(1e-9));
  CHECK(sw.scaled[1] == doctest::Approx(0.571428571428571).epsilon(1e-9));
  CHECK(sw.scaled[2] == doctest::Approx(0.857142857142857).epsilon(1e-9));
  double mass = 0.0;
  for (double v : sw.scaled) mass += v;
  CHECK(mass == doctest::Approx(2.0).epsilon(1e-12));

  // scale factor 1 when the mass already matches
  const std::vector<double> exact = {0.5, 0.5, 1.0};
  const cif::ScaledWeights id = cif::scale_weights(exact, 2);
  for (size_t i = 0; i < exact.size(); ++i) CHECK(id.scaled[i] == doctest::Approx(exact[i]));

  CHECK_THROWS_AS(cif::scale_weights(std::vector<double>{0.0, 0.0}, 2), std::domain_error);
}

TEST_CASE("integrate_and_fire hand examples") {
  SUBCASE("scaled example fires two segments") {
    const std::vector<double> w = {0.571428571428571, 0.571428571428571, 0.857142857142857};
    const FiringSchedule fs = cif::integrate_and_fire(w);
    REQUIRE(fs.fired_count() == 2);
    CHECK(fs.segments[0] == std::pair<int64_t, int64_t>{0, 2});
    CHECK(fs.segments[1] == std::pair<int64_t, int64_t>{2, 3});

    AcousticStates s = make_states({{1.0, 0.0}, {2.0, 0.0}, {4.0, 0.0}});
    const Tensor l = cif::integrate_segments(s, w, fs);
    // l1 = w1*(h1 + h2) with equal weights
    CHECK(l.at(0, 0) == doctest::Approx(0.571428571428571 * 3.0).epsilon(1e-9));
    CHECK(l.at(1, 0) == doctest::Approx(0.857142857142857 * 4.0).epsilon(1e-9));
  }
  SUBCASE("single full fire copies the row") {
    AcousticStates s = make_states({{7.5, 0.0}});
    const std::vector<double> w = {1.0};
    const FiringSchedule fs = cif::integrate_and_fire(w);
    REQUIRE(fs.fired_count() == 1);
    const Tensor l = cif::integrate_segments(s, w, fs);
    CHECK(l.at(0, 0) == doctest::Approx(7.5).epsilon(1e-12));
  }
  SUBCASE("below-threshold mass never fires") {
    const FiringSchedule fs = cif::integrate_and_fire(std::vector<double>{0.4, 0.4});
    CHECK(fs.fired_count() == 0);
  }
}

TEST_CASE("quantity loss formula and zero case") {
  CHECK(cif::quantity_loss(4.2, 5) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(cif::quantity_loss(5.0, 5) == 0.0);
}

TEST_CASE("quantity loss gradient wrt n_hat is -1 below the target") {
  // d|n* - n_hat|/d n_hat = -1 while n_hat < n*
  Tensor nh = Tensor::scalar(4.2);
  nh.requires_grad = true;
  Graph g;
  Value leaf = g.leaf(nh);
  Value loss = g.abs(g.add_const(g.scale(leaf, -1.0), 5.0));
  g.backward(loss);
  CHECK(leaf.t().grad[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("inference rescale fires exactly round(n_hat)") {
  SUBCASE("2.1 rounds to 2") {
    const std::vector<double> alpha = {0.6, 0.6, 0.9};  // n_hat 2.1
    const std::vector<double> eff = cif::inference_rescale(alpha);
    REQUIRE_FALSE(eff.empty());
    CHECK(cif::integrate_and_fire(eff, 0.5).fired_count() == 2);
  }
  SUBCASE("integer mass is left unchanged") {
    const std::vector<double> alpha = {0.5, 0.75, 0.75};  // n_hat 2.0
    const std::vector<double> eff = cif::inference_rescale(alpha);
    for (size_t i = 0; i < alpha.size(); ++i) {
      CHECK(eff[i] == doctest::Approx(alpha[i]).epsilon(1e-12));
    }
  }
  SUBCASE("sub-half mass yields the empty output") {
    CHECK(cif::inference_rescale(std::vector<double>{0.2, 0.2}).empty());
  }
}

TEST_CASE("mass conservation and firing-count exactness on random vectors") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int64_t> len_dist(1, 40);
  std::uniform_int_distribution<int64_t> n_dist(1, 8);
  std::uniform_real_distribution<double> a_dist(1e-3, 1.0 - 1e-3);
  for (int trial = 0; trial < 1000; ++trial) {
    const int64_t t = len_dist(rng);
    std::vector<double> alpha(static_cast<size_t>(t));
    for (double& a : alpha) a = a_dist(rng);

    const int64_t n_star = n_dist(rng);
    const cif::ScaledWeights sw = cif::scale_weights(alpha, n_star);
    double mass = 0.0;
    for (double v : sw.scaled) mass += v;
    CHECK(std::fabs(mass - static_cast<double>(n_star)) < 1e-6);
    // training walk fires exactly n_star segments
    CHECK(cif::integrate_and_fire(sw.scaled).fired_count() == n_star);

    const std::vector<double> eff = cif::inference_rescale(alpha);
    double n_hat = 0.0;
    for (double a : alpha) n_hat += a;
    const int64_t rounded = static_cast<int64_t>(std::llround(n_hat));
    if (rounded == 0) {
      CHECK(eff.empty());
    } else {
      CHECK(cif::integrate_and_fire(eff, 0.5).fired_count() == rounded);
    }
  }
}

TEST_CASE("segments match the reference walk exactly for short inputs") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int64_t> len_dist(1, 10);
  std::uniform_real_distribution<double> a_dist(0.0, 1.6);  // scaled weights may exceed 1
  for (int trial = 0; trial < 2000; ++trial) {
    const int64_t t = len_dist(rng);
    std::vector<double> w(static_cast<size_t>(t));
    for (double& v : w) v = a_dist(rng);
    const FiringSchedule fs = cif::integrate_and_fire(w);
    const auto expected = reference_walk(w);
    REQUIRE(fs.segments.size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i) {
      CHECK(fs.segments[i] == expected[i]);
    }
  }
}

TEST_CASE("causality: truncating input never changes earlier segments") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> a_dist(0.0, 1.0);
  std::vector<double> w(30);
  for (double& v : w) v = a_dist(rng);
  const FiringSchedule full = cif::integrate_and_fire(w);
  for (int64_t cut = 1; cut <= 30; ++cut) {
    const FiringSchedule part = cif::integrate_and_fire(
        std::span<const double>(w.data(), static_cast<size_t>(cut)));
    // every segment that ended at or before the cut must be identical
    for (size_t i = 0; i < part.segments.size(); ++i) {
      REQUIRE(i < full.segments.size());
      CHECK(part.segments[i] == full.segments[i]);
    }
  }
}

TEST_CASE("project maps embeddings through the projection matrix") {
  Tensor l = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor w_id = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const Tensor p = cif::project(l, w_id);
  for (size_t i = 0; i < l.data.size(); ++i) CHECK(p.data[i] == l.data[i]);

  Tensor empty({0, 2});
  const Tensor pe = cif::project(empty, w_id);
  CHECK(pe.shape[0] == 0);
  CHECK(pe.shape[1] == 2);

  std::mt19937_64 rng(3);
  const Tensor lr = numerics::randn({5, 3}, rng);
  const Tensor wr = numerics::randn({3, 7}, rng);
  const Tensor pr = cif::project(lr, wr);
  CHECK(pr.shape[0] == 5);
  CHECK(pr.shape[1] == 7);
}

TEST_CASE("graph CIF matches the plain path and carries gradients") {
  std::mt19937_64 rng(9);
  Tensor states = numerics::rand_uniform({6, 4}, rng, -1.0, 1.0);

  // plain path
  AcousticStates as;
  as.values = states;
  const std::vector<double> alpha = cif::compute_weights(as);
  const cif::ScaledWeights sw = cif::scale_weights(alpha, 3);
  const FiringSchedule fs = cif::integrate_and_fire(sw.scaled);
  const Tensor l_plain = cif::integrate_segments(as, sw.scaled, fs);

  // graph path
  states.requires_grad = true;
  Graph g;
  Value leaf = g.leaf(states);
  const cif::CifGraphOut out = cif::cif_forward_train(g, leaf, 3);
  REQUIRE(out.integrated.t().shape == l_plain.shape);
  for (size_t i = 0; i < l_plain.data.size(); ++i) {
    CHECK(out.integrated.t().data[i] == doctest::Approx(l_plain.data[i]).epsilon(1e-12));
  }
  CHECK(out.schedule.segments == fs.segments);

  // gradient of the quantity loss wrt the raw states survives an FD check
  Value loss = g.abs(g.add_const(g.scale(out.n_hat, -1.0), 3.0));
  g.backward(loss);
  const std::vector<double> analytic = leaf.t().grad;
  states.requires_grad = false;
  const auto f = [&](const Tensor& probe) {
    Graph g2;
    Value l2 = g2.leaf(probe);
    const cif::CifGraphOut o2 = cif::cif_forward_train(g2, l2, 3);
    return g2.abs(g2.add_const(g2.scale(o2.n_hat, -1.0), 3.0)).item();
  };
  const numerics::FdReport r = numerics::finite_difference_check(f, states, analytic, 1e-5);
  CHECK(r.ok);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("incremental accumulator equals the batch walk") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> a_dist(0.0, 1.0);
  const int64_t t_len = 25, d = 5;
  Tensor content = numerics::randn({t_len, d}, rng);
  std::vector<double> alpha(static_cast<size_t>(t_len));
  for (double& a : alpha) a = a_dist(rng);

  AcousticStates as;
  as.values = Tensor({t_len, d + 1});
  for (int64_t i = 0; i < t_len; ++i) {
    for (int64_t j = 0; j < d; ++j) as.values.at(i, j) = content.at(i, j);
  }
  const FiringSchedule fs = cif::integrate_and_fire(alpha);
  const Tensor batch_l = cif::integrate_segments(as, alpha, fs);

  cif::CifAccumulator acc(d);
  for (int64_t i = 0; i < t_len; ++i) {
    acc.advance(alpha[static_cast<size_t>(i)],
                std::span<const double>(content.data).subspan(static_cast<size_t>(i * d),
                                                              static_cast<size_t>(d)));
  }
  CHECK(acc.fired_count() == fs.fired_count());
  const Tensor inc_l = acc.fired_embeddings();
  REQUIRE(inc_l.shape == batch_l.shape);
  for (size_t i = 0; i < batch_l.data.size(); ++i) {
    CHECK(inc_l.data[i] == doctest::Approx(batch_l.data[i]).epsilon(1e-12));
  }

  // tail force-fire picks up a pending residue of at least the threshold
  cif::CifAccumulator tail(1);
  const std::vector<double> row = {1.0};
  tail.advance(0.7, row);
  REQUIRE(tail.fired_count() == 0);
  tail.force_fire_tail(0.5);
  CHECK(tail.fired_count() == 1);
  cif::CifAccumulator tail2(1);
  tail2.advance(0.3, row);
  tail2.force_fire_tail(0.5);
  CHECK(tail2.fired_count() == 0);
}
