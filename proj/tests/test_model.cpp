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
#include <cstdio>
#include <random>

#include <doctest.h>

#include "cifst/data.hpp"
#include "cifst/model.hpp"
#include "cifst/search.hpp"
#include "cifst/train.hpp"

using namespace cifst;
using model::Batch;
using model::Model;
using model::ModelConfig;
using numerics::Graph;
using numerics::Tensor;
using numerics::Value;

namespace {

ModelConfig tiny_config(uint64_t seed = 1) {
  ModelConfig c;
  c.d_feat = 6;
  c.d_acoustic = 17;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.vocab_size = 12;
  c.max_len = 16;
  c.seed = seed;
  return c;
}

Batch tiny_batch(const ModelConfig& mc, uint64_t seed, int64_t n_samples = 2) {
  data::SyntheticSpec spec;
  spec.vocab_size = mc.vocab_size - kNumReservedTokens;
  spec.n_samples = 4 * n_samples + 8;
  spec.frames_per_token_lo = 2;
  spec.frames_per_token_hi = 3;
  spec.tokens_per_sample_lo = 2;
  spec.tokens_per_sample_hi = 3;
  spec.d_feat = mc.d_feat;
  spec.seed = seed;
  const data::Corpus corpus = data::generate_corpus(spec);
  REQUIRE(static_cast<int64_t>(corpus.train.size()) >= n_samples);
  return train::make_batch(
      std::span<const data::Utterance>(corpus.train.data(), static_cast<size_t>(n_samples)));
}

}  // namespace

TEST_CASE("acoustic encoder outputs ceil(T / stride) states") {
  ModelConfig mc = tiny_config();
  Model m(mc);
  std::mt19937_64 rng(4);
  const Tensor frames = numerics::rand_uniform({8, mc.d_feat}, rng, -1.0, 1.0);
  const Tensor states = m.acoustic_encode_plain(frames);
  CHECK(states.shape[0] == 4);  // total stride 2
  CHECK(states.shape[1] == mc.d_acoustic);
  CHECK(m.acoustic_rows_for_frames(8) == 4);
  CHECK(m.acoustic_rows_for_frames(7) == 4);
  CHECK(m.acoustic_rows_for_frames(1) == 1);
  CHECK(m.acoustic_rows_for_frames(0) == 0);
}

TEST_CASE("zero frames through a zeroed front-end leave only the output bias") {
  ModelConfig mc = tiny_config();
  Model m(mc);
  auto& ps = m.params();
  ps.tensor(ps.index_of("acoustic.conv1.w")).zero();
  ps.tensor(ps.index_of("acoustic.conv2.w")).zero();
  ps.tensor(ps.index_of("acoustic.out.w")).zero();
  Tensor& bias = ps.tensor(ps.index_of("acoustic.out.b"));
  for (int64_t j = 0; j < mc.d_acoustic; ++j) bias.data[static_cast<size_t>(j)] = 0.25 * (j + 1);

  const Tensor frames({6, mc.d_feat});  // zeros
  const Tensor states = m.acoustic_encode_plain(frames);
  for (int64_t i = 0; i < states.shape[0]; ++i)
    for (int64_t j = 0; j < states.shape[1]; ++j)
      CHECK(states.at(i, j) == doctest::Approx(0.25 * (j + 1)).epsilon(1e-12));
}

TEST_CASE("prefix property: encoding a prefix equals the prefix of the encoding") {
  ModelConfig mc = tiny_config(3);
  Model m(mc);
  std::mt19937_64 rng(8);
  const Tensor frames = numerics::rand_uniform({20, mc.d_feat}, rng, -1.0, 1.0);
  const Tensor full = m.acoustic_encode_plain(frames);
  const int64_t stride = mc.stride_total();
  for (int64_t t = 1; t * stride <= 20; ++t) {
    Tensor prefix({t * stride, mc.d_feat});
    std::copy(frames.data.begin(), frames.data.begin() + t * stride * mc.d_feat,
              prefix.data.begin());
    const Tensor part = m.acoustic_encode_plain(prefix);
    REQUIRE(part.shape[0] == t);
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = 0; j < mc.d_acoustic; ++j) CHECK(part.at(i, j) == full.at(i, j));
  }
}

TEST_CASE("incremental encoder matches batch encoding bit-exactly") {
  ModelConfig mc = tiny_config(5);
  Model m(mc);
  std::mt19937_64 rng(21);
  const Tensor frames = numerics::rand_uniform({23, mc.d_feat}, rng, -1.0, 1.0);
  const Tensor full = m.acoustic_encode_plain(frames);

  model::IncrementalAcousticEncoder inc(m);
  int64_t consumed = 0;
  const std::vector<int64_t> chunks = {1, 4, 0, 7, 2, 9};
  for (int64_t n : chunks) {
    Tensor chunk({n, mc.d_feat});
    std::copy(frames.data.begin() + consumed * mc.d_feat,
              frames.data.begin() + (consumed + n) * mc.d_feat, chunk.data.begin());
    inc.append(chunk);
    consumed += n;
  }
  REQUIRE(consumed == 23);
  REQUIRE(inc.states().shape == full.shape);
  for (size_t i = 0; i < full.data.size(); ++i) CHECK(inc.states().data[i] == full.data[i]);
}

TEST_CASE("semantic encoder shape, position sensitivity and empty-source error") {
  ModelConfig mc = tiny_config(7);
  Model m(mc);
  std::mt19937_64 rng(14);
  const Tensor one = numerics::rand_uniform({1, mc.d_model}, rng, -1.0, 1.0);
  CHECK(m.semantic_encode_plain(one).shape == std::vector<int64_t>{1, mc.d_model});

  // positional encodings make the encoder order-sensitive
  const Tensor two = numerics::rand_uniform({2, mc.d_model}, rng, -1.0, 1.0);
  Tensor swapped = two;
  for (int64_t j = 0; j < mc.d_model; ++j) std::swap(swapped.at(0, j), swapped.at(1, j));
  const Tensor h1 = m.semantic_encode_plain(two);
  const Tensor h2 = m.semantic_encode_plain(swapped);
  double diff = 0.0;
  for (int64_t j = 0; j < mc.d_model; ++j) diff += std::fabs(h1.at(0, j) - h2.at(1, j));
  CHECK(diff > 1e-6);

  CHECK_THROWS_AS(m.semantic_encode_plain(Tensor({0, mc.d_model})), model::EmptySourceError);
}

TEST_CASE("untrained decoder scores the vocabulary uniformly: loss is ln V") {
  ModelConfig mc = tiny_config(11);
  Model m(mc);
  std::mt19937_64 rng(2);
  const Tensor h_se = numerics::rand_uniform({3, mc.d_model}, rng, -1.0, 1.0);

  Graph g;
  model::GraphBinding p(g, m.params(), false);
  const std::vector<int> seq = {kSrcIndicatorId, 5, 7, kEosId};
  const Value loss = m.decode_train(g, p, g.constant(h_se), seq);
  CHECK(loss.item() ==
        doctest::Approx(std::log(static_cast<double>(mc.vocab_size))).epsilon(1e-12));

  // indicator plus EOS alone scores exactly one prediction
  Graph g2;
  model::GraphBinding p2(g2, m.params(), false);
  const std::vector<int> minimal = {kTgtIndicatorId, kEosId};
  const Value single = m.decode_train(g2, p2, g2.constant(h_se), minimal);
  CHECK(single.item() ==
        doctest::Approx(std::log(static_cast<double>(mc.vocab_size))).epsilon(1e-12));

  Graph g3;
  model::GraphBinding p3(g3, m.params(), false);
  const std::vector<int> bad = {kSrcIndicatorId, 99, kEosId};
  CHECK_THROWS_AS(m.decode_train(g3, p3, g3.constant(h_se), bad), std::invalid_argument);
}

TEST_CASE("joint loss decomposes exactly and matches finite differences") {
  ModelConfig mc = tiny_config(13);
  Model m(mc);
  const Batch batch = tiny_batch(mc, 17);

  Graph g;
  model::GraphBinding p(g, m.params(), true);
  const Model::JointLossOut out = m.joint_loss(g, p, batch);
  CHECK(out.breakdown.decomposes(1e-9));
  CHECK(out.breakdown.total ==
        doctest::Approx(0.05 * out.breakdown.l_qua + out.breakdown.l_asr + out.breakdown.l_st)
            .epsilon(1e-12));

  // h = 1e-4 keeps fp roundoff subdominant on near-zero gradient coordinates
  const train::GradCheckReport r = train::joint_gradient_check(m, batch, 1e-4);
  CHECK(r.ok);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("perfect quantity prediction zeroes the quantity loss") {
  ModelConfig mc = tiny_config(19);
  Model m(mc);
  Batch batch = tiny_batch(mc, 23, 1);
  // With a zeroed front-end every state has alpha = sigmoid(bias); pick the
  // bias so that sum(alpha) over the states equals n* exactly.
  auto& ps = m.params();
  ps.tensor(ps.index_of("acoustic.conv1.w")).zero();
  ps.tensor(ps.index_of("acoustic.conv2.w")).zero();
  ps.tensor(ps.index_of("acoustic.out.w")).zero();
  const int64_t n_star = static_cast<int64_t>(batch.transcripts[0].size()) - 2;
  const int64_t t_states = m.acoustic_rows_for_frames(batch.frame_lengths[0]);
  const double alpha = static_cast<double>(n_star) / static_cast<double>(t_states);
  REQUIRE(alpha < 1.0);
  Tensor& bias = ps.tensor(ps.index_of("acoustic.out.b"));
  bias.data[static_cast<size_t>(mc.d_acoustic - 1)] = std::log(alpha / (1.0 - alpha));

  Graph g;
  model::GraphBinding p(g, m.params(), false);
  const Model::JointLossOut out = m.joint_loss(g, p, batch);
  CHECK(out.breakdown.l_qua == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("overfitting one sample drives the joint loss under 0.1 in 50 steps") {
  ModelConfig mc = tiny_config(29);
  mc.d_model = 32;
  mc.d_acoustic = 33;
  Model m(mc);
  data::SyntheticSpec spec;
  spec.vocab_size = mc.vocab_size - kNumReservedTokens;
  spec.n_samples = 4;
  spec.d_feat = mc.d_feat;
  spec.tokens_per_sample_lo = 2;
  spec.tokens_per_sample_hi = 3;
  spec.frames_per_token_lo = 2;
  spec.frames_per_token_hi = 3;
  spec.seed = 31;
  const data::Corpus corpus = data::generate_corpus(spec);
  REQUIRE_FALSE(corpus.train.empty());
  const std::vector<data::Utterance> one(corpus.train.begin(), corpus.train.begin() + 1);

  train::TrainOptions opts;
  opts.max_steps = 50;
  opts.batch_size = 1;
  opts.adam.peak_lr = 0.01;
  opts.adam.warmup_steps = 10;
  const train::TrainResult result = train::train_model(m, one, {}, opts);
  REQUIRE_FALSE(result.aborted_nan);
  CHECK(result.history.back().total < 0.1);
  CHECK(result.history.back().total < result.history.front().total);
}

TEST_CASE("decoder is causal: future target tokens cannot move earlier logits") {
  ModelConfig mc = tiny_config(37);
  Model m(mc);
  std::mt19937_64 rng(6);
  // the head is zero-initialized; give it signal so logits can move at all
  std::normal_distribution<double> dist(0.0, 0.3);
  for (double& v : m.params().tensor(m.params().index_of("out.w")).data) v = dist(rng);
  const Tensor h_se = numerics::rand_uniform({2, mc.d_model}, rng, -1.0, 1.0);

  const std::vector<int> tokens_a = {kTgtIndicatorId, 4, 5, 6};
  std::vector<int> tokens_b = tokens_a;
  tokens_b[3] = 9;  // change only the last position

  Graph ga, gb;
  model::GraphBinding pa(ga, m.params(), false), pb(gb, m.params(), false);
  const Tensor la = m.decoder_logits(ga, pa, ga.constant(h_se), tokens_a).t();
  const Tensor lb = m.decoder_logits(gb, pb, gb.constant(h_se), tokens_b).t();
  // logits at position i read tokens 0..i; only the final row may differ,
  // and here it reads token 3 itself, so it does.
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t v = 0; v < mc.vocab_size; ++v) CHECK(la.at(i, v) == lb.at(i, v));
  double moved = 0.0;
  for (int64_t v = 0; v < mc.vocab_size; ++v) moved += std::fabs(la.at(3, v) - lb.at(3, v));
  CHECK(moved > 0.0);
}

TEST_CASE("ASR and ST losses share decoder parameters (nonzero gradient overlap)") {
  ModelConfig mc = tiny_config(41);
  Model m(mc);
  std::mt19937_64 rng(40);
  std::normal_distribution<double> dist(0.0, 0.3);
  for (double& v : m.params().tensor(m.params().index_of("out.w")).data) v = dist(rng);
  const Batch batch = tiny_batch(mc, 43, 1);

  const auto grad_norm_for = [&](bool use_asr, const std::string& param) {
    Graph g;
    model::GraphBinding p(g, m.params(), true);
    Value frames = g.constant(batch.sample_frames(0));
    Value states = m.acoustic_encode(g, p, frames);
    const auto& seq = use_asr ? batch.transcripts[0] : batch.translations[0];
    const int64_t n_star = static_cast<int64_t>(batch.transcripts[0].size()) - 2;
    const cif::CifGraphOut c = cif::cif_forward_train(g, states, n_star);
    Value h_se = m.semantic_encode(g, p, m.project_integrated(g, p, c.integrated));
    Value loss = m.decode_train(g, p, h_se, seq);
    g.backward(loss);
    std::vector<std::vector<double>> grads;
    p.add_param_grads(grads);
    const int64_t idx = m.params().index_of(param);
    REQUIRE(idx >= 0);
    double norm = 0.0;
    if (!grads[static_cast<size_t>(idx)].empty()) {
      for (double v : grads[static_cast<size_t>(idx)]) norm += v * v;
    }
    return norm;
  };

  CHECK(grad_norm_for(true, "dec.0.self.wq") > 0.0);
  CHECK(grad_norm_for(false, "dec.0.self.wq") > 0.0);
  CHECK(grad_norm_for(true, "embed.tokens") > 0.0);
  CHECK(grad_norm_for(false, "embed.tokens") > 0.0);
}

TEST_CASE("greedy decoding is deterministic and stops on a forced EOS") {
  ModelConfig mc = tiny_config(47);
  Model m(mc);
  std::mt19937_64 rng(10);
  const Tensor h_se = numerics::rand_uniform({2, mc.d_model}, rng, -1.0, 1.0);
  const std::vector<int> first = m.greedy_decode(h_se, kTgtIndicatorId, 8);
  const std::vector<int> second = m.greedy_decode(h_se, kTgtIndicatorId, 8);
  CHECK(first == second);

  // force EOS to dominate every step via the output bias
  m.params().tensor(m.params().index_of("out.b")).data[kEosId] = 50.0;
  CHECK(m.greedy_decode(h_se, kTgtIndicatorId, 8).empty());
}

TEST_CASE("beam size 1 equals greedy on random model instances") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    ModelConfig mc = tiny_config(seed * 101);
    Model m(mc);
    std::mt19937_64 rng(seed);
    const Tensor h_se = numerics::rand_uniform({2, mc.d_model}, rng, -1.0, 1.0);
    // perturb the zero head so decoding is not vocabulary-uniform
    Tensor& head = m.params().tensor(m.params().index_of("out.w"));
    head = numerics::randn(head.shape, rng, 0.3);
    head.requires_grad = true;
    CHECK(m.beam_decode(h_se, kTgtIndicatorId, 1, 6) ==
          m.greedy_decode(h_se, kTgtIndicatorId, 6));
  }
}

TEST_CASE("beam search finds the best path of a hand-built lattice") {
  // Three steps, vocabulary {0: a, 1: EOS, 2: b, 3: c}. Log-probs depend on
  // the prefix length only, so the oracle can enumerate every path.
  const std::vector<std::vector<double>> table = {
      {std::log(0.05), std::log(0.05), std::log(0.5), std::log(0.4)},
      {std::log(0.25), std::log(0.3), std::log(0.05), std::log(0.4)},
      {std::log(0.05), std::log(0.85), std::log(0.05), std::log(0.05)},
  };
  const model::StepScorer step = [&](const std::vector<int>& prefix) {
    return table[std::min<size_t>(prefix.size(), table.size() - 1)];
  };

  // exhaustive enumeration under the same scoring/normalization rule
  double best_score = -1e18;
  std::vector<int> best_tokens;
  const auto consider = [&](const std::vector<int>& tokens, double logp, bool finished) {
    const double denom =
        std::max(1.0, static_cast<double>(tokens.size()) + (finished ? 1.0 : 0.0));
    const double score = logp / denom;
    if (score > best_score) {
      best_score = score;
      best_tokens = tokens;
    }
  };
  for (int a = 0; a < 4; ++a) {
    if (a == 1) {
      consider({}, table[0][1], true);
      continue;
    }
    for (int b = 0; b < 4; ++b) {
      if (b == 1) {
        consider({a}, table[0][a] + table[1][1], true);
        continue;
      }
      for (int c = 0; c < 4; ++c) {
        if (c == 1) {
          consider({a, b}, table[0][a] + table[1][b] + table[2][1], true);
        } else {
          consider({a, b, c}, table[0][a] + table[1][b] + table[2][c], false);
        }
      }
    }
  }

  const model::BeamResult got = model::beam_search(step, 1 /*eos*/, 5, 3);
  CHECK(got.tokens == best_tokens);
  CHECK(got.score == doctest::Approx(best_score).epsilon(1e-12));
}

TEST_CASE("checkpoints round-trip the parameters and the run blob") {
  ModelConfig mc = tiny_config(53);
  Model m(mc);
  const std::string path = "/tmp/cifst_test_checkpoint.bin";
  model::save_checkpoint(path, m, R"({"note": "unit"})");

  model::LoadedCheckpoint info;
  const Model loaded = model::load_checkpoint(path, &info);
  CHECK(info.run_json.find("unit") != std::string::npos);
  REQUIRE(loaded.params().size() == m.params().size());
  for (int64_t i = 0; i < m.params().size(); ++i) {
    const auto& a = m.params().tensor(i);
    const auto& b = loaded.params().tensor(i);
    REQUIRE(a.shape == b.shape);
    for (size_t j = 0; j < a.data.size(); ++j) CHECK(a.data[j] == b.data[j]);
  }
  std::remove(path.c_str());
}
