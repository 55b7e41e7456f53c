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

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cifst/graph.hpp"
#include "cifst/tensor.hpp"

namespace cifst::cif {

using numerics::Graph;
using numerics::Tensor;
using numerics::Value;

// Accumulator threshold. A crossing fires a segment boundary; the remainder
// above 1.0 carries into the next segment. The epsilon keeps the exact-mass
// case (sum of weights an integer) firing deterministically under fp dust.
constexpr double kFireThreshold = 1.0;
constexpr double kFireEps = 1e-9;

// Encoder output: T acoustic states of width d. The last channel holds the
// firing-weight logit; channels 0..d-2 carry content.
struct AcousticStates {
  Tensor values;        // [T, d], d >= 2
  double state_ms = 0;  // source milliseconds covered by one state

  int64_t length() const { return values.shape.empty() ? 0 : values.shape[0]; }
  int64_t dim() const { return values.shape.size() == 2 ? values.shape[1] : 0; }
};

struct FiringSchedule {
  std::vector<double> weights;         // alpha, in (0,1)
  std::vector<double> scaled_weights;  // the weights the accumulator walked
  double n_hat = 0.0;                  // sum of raw weights
  // Fired segments as [begin, end) state-index ranges, in firing order.
  // A segment can be empty when a single state crosses several thresholds.
  std::vector<std::pair<int64_t, int64_t>> segments;

  int64_t fired_count() const { return static_cast<int64_t>(segments.size()); }
};

struct IntegratedSequence {
  Tensor embeddings;  // [U, d-1], weighted sums per segment
  Tensor projected;   // [U, d_model], filled by project()
};

// alpha_t = sigmoid of the last channel of each state.
std::vector<double> compute_weights(const AcousticStates& states);

// Training-mode rescale: alpha' = (n_star / n_hat) * alpha, so the total
// mass is exactly n_star. Throws std::domain_error when sum(alpha) == 0.
struct ScaledWeights {
  std::vector<double> scaled;
  double n_hat = 0.0;
};
ScaledWeights scale_weights(std::span<const double> alpha, int64_t n_star);

// Inference-mode rescale: alpha_eff = round(n_hat)/n_hat * alpha, so the
// walk fires exactly round(n_hat) segments. round(n_hat) == 0 yields an
// empty weight vector (legal zero-output case, not an error).
std::vector<double> inference_rescale(std::span<const double> alpha);

// Left-to-right accumulator walk over alpha_eff. Every threshold crossing
// closes a segment at the current state and carries the remainder. When
// tail_residue_threshold is set, a trailing unfired accumulation at or
// above it closes one final segment ending at T.
FiringSchedule integrate_and_fire(std::span<const double> alpha_eff,
                                  std::optional<double> tail_residue_threshold = std::nullopt);

// Weighted segment sums over the content channels: l_u = sum over S_u of
// alpha_eff_t * h_t[0:d-1]. Plain-tensor path used at inference time.
Tensor integrate_segments(const AcousticStates& states, std::span<const double> alpha_eff,
                          const FiringSchedule& schedule);

double quantity_loss(double n_hat, int64_t n_star);

// embeddings [U, d-1] times projection [d-1, d_model].
Tensor project(const Tensor& embeddings, const Tensor& projection);

// Maps fired segments to a per-state segment id (-1 for states that never
// fired into any segment); feeds the segment-sum primitive.
std::vector<int> segment_ids(const FiringSchedule& schedule, int64_t n_states);

// Training-graph CIF: weights, rescale, walk and weighted sums all recorded
// on the tape so gradients flow into the encoder through both alpha' and
// the content channels. Segment structure itself is discrete and fixed by
// the forward values.
struct CifGraphOut {
  Value integrated;  // [U, d-1]; U may be 0
  Value n_hat;       // scalar
  FiringSchedule schedule;
};
CifGraphOut cif_forward_train(Graph& g, Value states, int64_t n_star);

// Streaming accumulator: consumes one acoustic state at a time and fires
// segments with the raw-threshold walk (no global rescale; the utterance
// total is unknown online).
class CifAccumulator {
 public:
  explicit CifAccumulator(int64_t content_dim);

  void advance(double alpha_t, std::span<const double> content_row);
  // Closes a trailing accumulation >= threshold into one final segment.
  // Call once when the source is exhausted.
  void force_fire_tail(double threshold);

  int64_t fired_count() const { return static_cast<int64_t>(segments_.size()); }
  int64_t consumed_states() const { return next_state_; }
  double pending_mass() const { return acc_; }
  Tensor fired_embeddings() const;  // [U, content_dim]
  const std::vector<std::pair<int64_t, int64_t>>& segments() const { return segments_; }

 private:
  void fire(int64_t end_state);

  int64_t content_dim_;
  int64_t next_state_ = 0;
  int64_t segment_begin_ = 0;
  double acc_ = 0.0;
  std::vector<double> pending_sum_;
  std::vector<double> fired_;
  std::vector<std::pair<int64_t, int64_t>> segments_;
};

}  // namespace cifst::cif
