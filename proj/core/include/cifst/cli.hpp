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

#include <iosfwd>
#include <string>

#include "cifst/data.hpp"
#include "cifst/metrics.hpp"
#include "cifst/model.hpp"
#include "cifst/policy.hpp"
#include "cifst/train.hpp"

namespace cifst::cli {

// Every command writes its resolved configuration into each artifact it
// produces, so reruns are reproducible from the artifact alone.

struct GenerateDataConfig {
  data::SyntheticSpec spec;
  std::string out_dir;
  bool inline_frames = false;
};
std::string to_json(const GenerateDataConfig& c);
int cmd_generate_data(const GenerateDataConfig& c, std::ostream& out);

struct TrainCliConfig {
  std::string data_dir;
  std::string out_dir;
  int64_t d_model = 64;
  int64_t n_heads = 4;
  int64_t n_enc_layers = 2;
  int64_t n_dec_layers = 2;
  int64_t d_acoustic = 0;  // 0 means d_model + 1
  int64_t conv_hidden = 0; // 0 means d_model
  int64_t max_len = 64;
  uint64_t seed = 1;
  train::TrainOptions opts;
};
std::string to_json(const TrainCliConfig& c);
int cmd_train(const TrainCliConfig& c, std::ostream& out);

struct TranslateConfig {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string out_path;
  int64_t beam = 1;  // 1 is greedy
  int64_t limit = -1;
};
std::string to_json(const TranslateConfig& c);
int cmd_translate(const TranslateConfig& c, std::ostream& out);

struct SimulateConfig {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string out_dir;
  policy::PolicyConfig policy;
  std::string sweep;  // "", "strides", or "k"
  int64_t threads = 1;
  int64_t limit = -1;
};
std::string to_json(const SimulateConfig& c);
int cmd_simulate(const SimulateConfig& c, std::ostream& out);

struct ScoreConfig {
  std::string logs_path;
  std::string refs_manifest;  // optional; embedded references otherwise
  std::string out_path;       // optional report file
};
std::string to_json(const ScoreConfig& c);
int cmd_score(const ScoreConfig& c, std::ostream& out);

struct GradCheckConfig {
  uint64_t seed = 7;
  double h = 1e-5;
};
std::string to_json(const GradCheckConfig& c);
int cmd_grad_check(const GradCheckConfig& c, std::ostream& out);

// The paper-grid sweeps driven by `simulate --sweep`.
extern const std::vector<int64_t> kStrideGridMs;  // ends in the degenerate 40000
extern const std::vector<int64_t> kLaggingGrid;

// Shared plumbing, exposed for tests.
metrics::SweepRow score_run(const std::string& policy_name, int64_t k, int64_t stride_ms,
                            std::span<const policy::DecisionLog> logs,
                            std::span<const std::string> references);

}  // namespace cifst::cli
