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

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cifst/data.hpp"
#include "cifst/model.hpp"

namespace cifst::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double peak_lr = 1e-3;
  int64_t warmup_steps = 400;
};

// Inverse-square-root schedule with linear warmup; peaks at warmup_steps.
double inverse_sqrt_lr(const AdamConfig& cfg, int64_t step);

class Adam {
 public:
  Adam(model::ParamSet& params, AdamConfig cfg);
  // grads indexed like the ParamSet; empty inner vectors are treated as zero.
  void step(const std::vector<std::vector<double>>& grads);
  int64_t steps_done() const { return t_; }
  double current_lr() const { return inverse_sqrt_lr(cfg_, std::max<int64_t>(t_, 1)); }

 private:
  model::ParamSet* params_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainOptions {
  int64_t max_steps = 1000;
  int64_t batch_size = 8;
  uint64_t seed = 1;
  int64_t log_every = 20;
  // When > 0, evaluate greedy token accuracy on the dev set every
  // eval_every steps and stop once it reaches stop_token_accuracy.
  int64_t eval_every = 0;
  double stop_token_accuracy = 1.1;
  int64_t eval_max_utterances = 64;
  AdamConfig adam;
};

struct StepLog {
  int64_t step = 0;
  double lr = 0.0;
  double l_qua = 0.0;
  double l_asr = 0.0;
  double l_st = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<StepLog> history;
  int64_t steps = 0;
  bool aborted_nan = false;
  std::string nan_diagnostic;  // JSON snapshot when aborted
  double final_dev_accuracy = -1.0;
};

model::Batch make_batch(std::span<const data::Utterance> utterances);

TrainResult train_model(model::Model& m, const std::vector<data::Utterance>& train_set,
                        const std::vector<data::Utterance>& dev_set, const TrainOptions& opts,
                        const std::function<void(const StepLog&)>& on_step = nullptr);

// Position-wise greedy-decode token accuracy against the reference
// translation (EOS included); length mismatches count as errors.
double token_accuracy(const model::Model& m, std::span<const data::Utterance> utterances,
                      int64_t limit = -1);

// Central-difference check of the joint loss against every parameter
// coordinate. Mutates parameters during probing but restores them.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  bool ok = true;
};
GradCheckReport joint_gradient_check(model::Model& m, const model::Batch& batch, double h);

}  // namespace cifst::train
