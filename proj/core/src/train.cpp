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

#include "cifst/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace cifst::train {

using model::Batch;
using model::Model;
using numerics::Graph;
using numerics::mix_seed;
using numerics::Tensor;

double inverse_sqrt_lr(const AdamConfig& cfg, int64_t step) {
  if (step < 1) throw std::invalid_argument("inverse_sqrt_lr: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(model::ParamSet& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
  m_.resize(static_cast<size_t>(params.size()));
  v_.resize(static_cast<size_t>(params.size()));
  for (int64_t i = 0; i < params.size(); ++i) {
    const size_t n = params.tensor(i).data.size();
    m_[static_cast<size_t>(i)].assign(n, 0.0);
    v_[static_cast<size_t>(i)].assign(n, 0.0);
  }
}

void Adam::step(const std::vector<std::vector<double>>& grads) {
  if (static_cast<int64_t>(grads.size()) != params_->size()) {
    throw std::invalid_argument("Adam::step: gradient vector count mismatch");
  }
  ++t_;
  const double lr = inverse_sqrt_lr(cfg_, t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (int64_t i = 0; i < params_->size(); ++i) {
    const auto& g = grads[static_cast<size_t>(i)];
    if (g.empty()) continue;
    Tensor& p = params_->tensor(i);
    auto& m = m_[static_cast<size_t>(i)];
    auto& v = v_[static_cast<size_t>(i)];
    for (size_t j = 0; j < g.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p.data[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

Batch make_batch(std::span<const data::Utterance> utterances) {
  if (utterances.empty()) throw std::invalid_argument("make_batch: empty batch");
  const int64_t b = static_cast<int64_t>(utterances.size());
  const int64_t d_feat = utterances[0].frames.feat_dim();
  int64_t t_max = 1;
  for (const auto& u : utterances) t_max = std::max(t_max, u.frames.length());

  Batch batch;
  batch.frame_ms = utterances[0].frames.frame_ms;
  batch.frames = Tensor({b, t_max, d_feat});
  batch.frame_mask = Tensor({b, t_max});
  for (int64_t i = 0; i < b; ++i) {
    const auto& u = utterances[static_cast<size_t>(i)];
    const int64_t t_i = u.frames.length();
    batch.frame_lengths.push_back(t_i);
    std::copy(u.frames.values.data.begin(), u.frames.values.data.end(),
              batch.frames.data.begin() + (i * t_max) * d_feat);
    for (int64_t t = 0; t < t_i; ++t) batch.frame_mask.at(i, t) = 1.0;
    batch.transcripts.push_back(with_indicator_and_eos(u.transcript, kSrcIndicatorId));
    batch.translations.push_back(with_indicator_and_eos(u.translation, kTgtIndicatorId));
  }
  return batch;
}

TrainResult train_model(Model& m, const std::vector<data::Utterance>& train_set,
                        const std::vector<data::Utterance>& dev_set, const TrainOptions& opts,
                        const std::function<void(const StepLog&)>& on_step) {
  if (train_set.empty()) throw std::invalid_argument("train_model: empty training set");
  TrainResult result;
  Adam adam(m.params(), opts.adam);

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // trigger a shuffle on first use
  int64_t epoch = 0;

  for (int64_t step = 1; step <= opts.max_steps; ++step) {
    std::vector<data::Utterance> chunk;
    for (int64_t i = 0; i < opts.batch_size; ++i) {
      if (cursor == order.size()) {
        std::mt19937_64 rng(mix_seed(opts.seed, 0xE90C'0000ull + static_cast<uint64_t>(epoch++)));
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      chunk.push_back(train_set[order[cursor++]]);
    }
    const Batch batch = make_batch(chunk);

    Graph g;
    model::GraphBinding binding(g, m.params(), true);
    const Model::JointLossOut out = m.joint_loss(g, binding, batch);

    if (!std::isfinite(out.breakdown.total)) {
      std::ostringstream diag;
      diag << "{\"step\": " << step << ", \"l_qua\": " << out.breakdown.l_qua
           << ", \"l_asr\": " << out.breakdown.l_asr << ", \"l_st\": " << out.breakdown.l_st
           << ", \"reason\": \"non-finite loss\"}";
      result.aborted_nan = true;
      result.nan_diagnostic = diag.str();
      return result;
    }
    if (!out.breakdown.decomposes(1e-9)) {
      throw std::logic_error("train_model: loss decomposition violated");
    }

    g.backward(out.total);
    std::vector<std::vector<double>> grads;
    binding.add_param_grads(grads);
    adam.step(grads);
    result.steps = step;

    if (on_step && (step % opts.log_every == 0 || step == 1 || step == opts.max_steps)) {
      on_step(StepLog{step, adam.current_lr(), out.breakdown.l_qua, out.breakdown.l_asr,
                      out.breakdown.l_st, out.breakdown.total});
    }
    result.history.push_back(StepLog{step, adam.current_lr(), out.breakdown.l_qua,
                                     out.breakdown.l_asr, out.breakdown.l_st,
                                     out.breakdown.total});

    if (opts.eval_every > 0 && !dev_set.empty() && step % opts.eval_every == 0) {
      const double acc = token_accuracy(m, dev_set, opts.eval_max_utterances);
      result.final_dev_accuracy = acc;
      if (acc >= opts.stop_token_accuracy) break;
    }
  }
  return result;
}

GradCheckReport joint_gradient_check(Model& m, const model::Batch& batch, double h) {
  GradCheckReport report;

  // Analytic gradients from one forward/backward pass.
  std::vector<std::vector<double>> grads;
  {
    Graph g;
    model::GraphBinding binding(g, m.params(), true);
    const Model::JointLossOut out = m.joint_loss(g, binding, batch);
    g.backward(out.total);
    binding.add_param_grads(grads);
  }

  const auto eval_total = [&]() {
    Graph g;
    model::GraphBinding binding(g, m.params(), false);
    return m.joint_loss(g, binding, batch).breakdown.total;
  };

  for (int64_t i = 0; i < m.params().size(); ++i) {
    Tensor& p = m.params().tensor(i);
    const Tensor original = p;
    std::vector<double> analytic = grads[static_cast<size_t>(i)];
    if (analytic.empty()) analytic.assign(p.data.size(), 0.0);

    const auto f = [&](const Tensor& probe) {
      p.data = probe.data;
      return eval_total();
    };
    const numerics::FdReport fd = numerics::finite_difference_check(f, original, analytic, h);
    p = original;
    if (!fd.ok) {
      report.ok = false;
      report.max_rel_err = fd.max_rel_err;
      report.worst_param = m.params().name(i);
      report.worst_index = fd.worst_index;
      return report;
    }
    if (fd.max_rel_err > report.max_rel_err) {
      report.max_rel_err = fd.max_rel_err;
      report.worst_param = m.params().name(i);
      report.worst_index = fd.worst_index;
    }
  }
  return report;
}

double token_accuracy(const Model& m, std::span<const data::Utterance> utterances,
                      int64_t limit) {
  int64_t n = static_cast<int64_t>(utterances.size());
  if (limit > 0) n = std::min(n, limit);
  int64_t matched = 0, total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const data::Utterance& u = utterances[static_cast<size_t>(i)];
    const Model::Encoded enc = m.encode_offline(u.frames.values, u.frames.frame_ms);
    std::vector<int> hyp;
    if (enc.h_se.shape[0] > 0) {
      hyp = m.greedy_decode(enc.h_se, kTgtIndicatorId, m.config().max_len);
    }
    // EOS participates as a position so length errors are penalized.
    std::vector<int> ref = u.translation;
    ref.push_back(kEosId);
    hyp.push_back(kEosId);
    const size_t common = std::min(hyp.size(), ref.size());
    for (size_t j = 0; j < common; ++j) {
      if (hyp[j] == ref[j]) ++matched;
    }
    total += static_cast<int64_t>(std::max(hyp.size(), ref.size()));
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

}  // namespace cifst::train
