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

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cifst/cif.hpp"
#include "cifst/graph.hpp"
#include "cifst/tensor.hpp"
#include "cifst/tokens.hpp"

namespace cifst::model {

using numerics::Graph;
using numerics::Tensor;
using numerics::Value;

struct ModelConfig {
  int64_t d_feat = 80;
  int64_t d_acoustic = 769;  // acoustic state width incl. the weight-logit channel
  int64_t d_model = 768;
  int64_t n_heads = 4;
  int64_t n_enc_layers = 8;
  int64_t n_dec_layers = 6;
  int64_t vocab_size = 0;  // including the four reserved ids
  int64_t max_len = 64;    // decode cap, content tokens
  uint64_t seed = 1;

  // toy acoustic front-end geometry; total stride is stride1 * stride2
  int64_t conv_hidden = 0;  // 0 means d_model
  int64_t conv_kernel = 3;
  int64_t conv_stride1 = 1;
  int64_t conv_stride2 = 2;

  int64_t stride_total() const { return conv_stride1 * conv_stride2; }
  int64_t conv_width() const { return conv_hidden > 0 ? conv_hidden : d_model; }
  int64_t d_ff() const { return 4 * d_model; }
  void validate() const;
};

// Ordered, named trainable tensors. Order is fixed at construction and is
// the contract for gradient buffers and checkpoints.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor init);
  int64_t size() const { return static_cast<int64_t>(items_.size()); }
  Tensor& tensor(int64_t i) { return items_[static_cast<size_t>(i)].second; }
  const Tensor& tensor(int64_t i) const { return items_[static_cast<size_t>(i)].second; }
  const std::string& name(int64_t i) const { return items_[static_cast<size_t>(i)].first; }
  int64_t index_of(const std::string& name) const;  // -1 if absent
  int64_t total_scalars() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Lazily binds parameters into one graph, one leaf per parameter.
class GraphBinding {
 public:
  GraphBinding(Graph& g, const ParamSet& params, bool trainable);
  Value operator[](int64_t param_index);
  // Adds the bound leaves' gradients into accum (indexed like the ParamSet;
  // empty inner vectors are allocated on demand).
  void add_param_grads(std::vector<std::vector<double>>& accum) const;

 private:
  Graph* g_;
  const ParamSet* params_;
  bool trainable_;
  std::vector<Value> cache_;
  std::vector<uint8_t> bound_;
};

struct Batch {
  Tensor frames;  // [B, T_max, d_feat], zero padded
  std::vector<int64_t> frame_lengths;
  Tensor frame_mask;  // [B, T_max], 1.0 for real frames
  double frame_ms = 0.0;
  // Sequences carry the task indicator at position 0 and EOS at the end.
  std::vector<std::vector<int>> transcripts;
  std::vector<std::vector<int>> translations;

  int64_t size() const { return static_cast<int64_t>(frame_lengths.size()); }
  Tensor sample_frames(int64_t i) const;  // [T_i, d_feat]
  void validate() const;
};

struct LossBreakdown {
  double l_qua = 0.0;
  double l_asr = 0.0;
  double l_st = 0.0;
  double total = 0.0;
  double qua_weight = 0.05;
  double asr_weight = 1.0;
  double st_weight = 1.0;

  double recombined() const { return qua_weight * l_qua + asr_weight * l_asr + st_weight * l_st; }
  bool decomposes(double tol = 1e-9) const { return std::fabs(total - recombined()) <= tol; }
};

// Raised when an utterance produced no integrated units and a downstream
// consumer needs at least one semantic state.
struct EmptySourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Tensor sinusoidal_positions(int64_t n, int64_t d_model);

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // ---- graph builders (training and inference share these) ----
  // frames [T, d_feat] -> acoustic states [T', d_acoustic], T' = ceil(T/stride)
  Value acoustic_encode(Graph& g, GraphBinding& p, Value frames) const;
  Value project_integrated(Graph& g, GraphBinding& p, Value integrated) const;
  Value semantic_encode(Graph& g, GraphBinding& p, Value projected) const;
  // tokens = indicator followed by the target prefix; returns [len, vocab]
  Value decoder_logits(Graph& g, GraphBinding& p, Value h_se, std::span<const int> tokens) const;
  // mean NLL of seq[1:] under a causally masked decoder fed seq[:-1]
  Value decode_train(Graph& g, GraphBinding& p, Value h_se, std::span<const int> seq) const;

  struct JointLossOut {
    Value total;
    LossBreakdown breakdown;
  };
  JointLossOut joint_loss(Graph& g, GraphBinding& p, const Batch& batch) const;

  // ---- inference ----
  struct Encoded {
    cif::AcousticStates states;
    std::vector<double> alpha;
    cif::FiringSchedule schedule;  // rescaled firing
    Tensor integrated;             // [U, d_acoustic - 1]
    Tensor h_se;                   // [U, d_model]; U == 0 means no semantic states
  };
  // Offline pipeline: encode, rescaled CIF, projection, semantic encoder.
  Encoded encode_offline(const Tensor& frames, double frame_ms) const;
  // Semantic encoding of already-projected integrated embeddings.
  Tensor semantic_encode_plain(const Tensor& projected) const;  // throws on U == 0
  Tensor project_plain(const Tensor& integrated) const;
  Tensor acoustic_encode_plain(const Tensor& frames) const;

  std::vector<double> next_token_logprobs(const Tensor& h_se, int indicator,
                                          std::span<const int> prefix) const;
  // Greedy / beam decoding; returned tokens exclude the EOS terminator.
  std::vector<int> greedy_decode(const Tensor& h_se, int indicator, int64_t max_len) const;
  std::vector<int> beam_decode(const Tensor& h_se, int indicator, int64_t beam_size,
                               int64_t max_len) const;

  int64_t acoustic_rows_for_frames(int64_t n_frames) const;

 private:
  void init_params();
  Value attention(Graph& g, GraphBinding& p, const std::string& prefix, Value queries_in,
                  Value keys_in, Value mask) const;  // mask may be invalid (none)
  Value encoder_layer(Graph& g, GraphBinding& p, int64_t layer, Value x) const;
  Value decoder_layer(Graph& g, GraphBinding& p, int64_t layer, Value x, Value h_se,
                      Value causal_mask) const;

  ModelConfig cfg_;
  ParamSet params_;
  Tensor positional_;  // [max positions, d_model]
};

// Incremental (streaming) acoustic encoder: appending frames only computes
// the newly determined state rows; earlier rows are never touched. Output
// rows match Model::acoustic_encode_plain on the same prefix bit-exactly.
class IncrementalAcousticEncoder {
 public:
  explicit IncrementalAcousticEncoder(const Model& m);

  // Appends frames ([n, d_feat]) and returns the acoustic state rows that
  // became available, as a [n_new, d_acoustic] tensor (possibly empty).
  Tensor append(const Tensor& new_frames);

  int64_t frames_consumed() const { return frames_seen_; }
  int64_t states_produced() const { return states_rows_; }
  const Tensor& states() const { return states_; }

 private:
  const Model& model_;
  Tensor frames_;  // consumed frames so far
  Tensor h1_;      // conv1 output rows so far
  Tensor h2_;      // conv2 output rows so far
  Tensor states_;  // final acoustic states so far
  int64_t frames_seen_ = 0;
  int64_t h1_rows_ = 0;
  int64_t h2_rows_ = 0;
  int64_t states_rows_ = 0;
};

// ---- checkpoint I/O ----
// Binary, versioned: magic "CIFSTCK1", a JSON header (model config plus an
// arbitrary provenance blob), then named float64 parameter blocks.
void save_checkpoint(const std::string& path, const Model& model, const std::string& run_json);
struct LoadedCheckpoint {
  ModelConfig config;
  std::string run_json;
};
Model load_checkpoint(const std::string& path, LoadedCheckpoint* info = nullptr);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace cifst::model
