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

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cifst/cif.hpp"
#include "cifst/data.hpp"
#include "cifst/model.hpp"

namespace cifst::policy {

using numerics::Tensor;

enum class PolicyKind { kOffline, kPrefix, kAdaptive };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kOffline;
  int64_t k = 5;           // wait lagging
  int64_t stride_ms = 400; // READ granularity; must be a multiple of frame_ms
  int64_t max_len = 64;    // cap on emitted content tokens

  void validate(double frame_ms) const;
};

std::string policy_kind_name(PolicyKind kind);
PolicyKind policy_kind_from_name(const std::string& name);

enum class Action { kRead, kWrite };

// Branch structure of the adaptive incremental encoding-decoding loop:
// exhausted source always writes; otherwise read until the integrated
// length leads the emitted length by at least k.
Action adaptive_next_action(bool source_exhausted, int64_t integrated_len, int64_t emitted_len,
                            int64_t k);

struct DecisionEvent {
  Action action = Action::kRead;
  int64_t consumed_ms = 0;
  int token = -1;  // WRITE only
};

struct DecisionLog {
  std::string utt_id;
  int64_t total_source_ms = 0;
  std::string reference_text;
  bool truncated = false;  // generation cut at max_len
  std::vector<DecisionEvent> events;

  // Per-token delays in source ms, excluding the EOS write.
  std::vector<int64_t> delays() const;
  std::vector<int> written_tokens(bool include_eos = false) const;
  bool finished() const;
};

// One line per event: `READ<TAB>ms` / `WRITE<TAB>ms<TAB>token`, preceded by
// a `UTT` header line and terminated by a blank line. Round-trips exactly.
void serialize_decision_log(std::ostream& os, const DecisionLog& log);
std::string serialize_decision_logs(std::span<const DecisionLog> logs);
std::vector<DecisionLog> parse_decision_logs(std::istream& is);
std::vector<DecisionLog> parse_decision_logs_file(const std::string& path);
void write_decision_logs_file(const std::string& path, std::span<const DecisionLog> logs,
                              const std::string& header_comment_json = "");

// Incremental per-utterance pipeline state. Audio is consumed in frame
// units; acoustic states extend causally (earlier rows never recomputed)
// and the CIF accumulator advances over new states with the raw-threshold
// walk. Once the source is exhausted the integrated sequence is finalized
// with the offline rescaled firing, which makes a policy that has emitted
// nothing so far reproduce the offline decode exactly.
class StreamingState {
 public:
  StreamingState(const model::Model& m, double frame_ms, int64_t total_frames);

  // Feeds frames [begin_frame, begin_frame + n); begin_frame must equal the
  // number of frames consumed so far or the segment is rejected.
  void append_frames(int64_t begin_frame, const Tensor& frames);

  void finalize_source();  // idempotent; requires all frames consumed
  bool finalized() const { return finalized_; }

  int64_t consumed_frames() const { return consumed_frames_; }
  int64_t consumed_ms() const;
  int64_t total_frames() const { return total_frames_; }
  bool source_exhausted() const { return consumed_frames_ >= total_frames_; }

  // Online integrated length |l_u| (raw-threshold walk; after finalize, the
  // rescaled count).
  int64_t integrated_len() const;
  int64_t online_fired_count() const { return cif_.fired_count(); }

  // Greedy next token given the current integrated sequence. Returns EOS
  // when no integrated unit exists yet (the model has heard nothing it can
  // translate).
  int write_next(int indicator, std::span<const int> emitted);

  const Tensor& acoustic_states() const { return encoder_.states(); }

 private:
  const Tensor& current_h_se(std::span<const int> emitted);

  const model::Model& model_;
  double frame_ms_;
  int64_t total_frames_;
  int64_t consumed_frames_ = 0;
  model::IncrementalAcousticEncoder encoder_;
  cif::CifAccumulator cif_;
  bool finalized_ = false;
  Tensor final_integrated_;  // [U, d-1] after finalize
  // h_se cache keyed by the integrated sequence length it was computed for
  Tensor h_se_cache_;
  int64_t h_se_cache_len_ = -1;
  bool h_se_cache_final_ = false;
};

// Spec'd incremental update entry point (contiguity-checked).
void incremental_update(StreamingState& state, const model::Model& m, int64_t begin_frame,
                        const Tensor& new_frames);

struct PolicyRunResult {
  std::vector<int> tokens;  // content tokens, EOS excluded
  DecisionLog log;
  int64_t online_fired = 0;  // raw-threshold count at exhaustion
  int64_t offline_fired = 0; // rescaled count after finalize
};

PolicyRunResult run_offline_policy(const model::Model& m, const data::FrameSequence& frames,
                                   const PolicyConfig& cfg, const std::string& utt_id,
                                   const std::string& reference_text);
PolicyRunResult run_prefix_policy(const model::Model& m, const data::FrameSequence& frames,
                                  const PolicyConfig& cfg, const std::string& utt_id,
                                  const std::string& reference_text);
PolicyRunResult run_adaptive_policy(const model::Model& m, const data::FrameSequence& frames,
                                    const PolicyConfig& cfg, const std::string& utt_id,
                                    const std::string& reference_text);
// Dispatch on cfg.kind.
PolicyRunResult run_policy(const model::Model& m, const data::FrameSequence& frames,
                           const PolicyConfig& cfg, const std::string& utt_id,
                           const std::string& reference_text);

}  // namespace cifst::policy
