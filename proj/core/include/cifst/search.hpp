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
#include <functional>
#include <vector>

namespace cifst::model {

// Length-normalized beam search over an abstract step scorer, so the search
// can be exercised against hand-built lattices independent of any model.
//
// step(prefix) returns log-probabilities over the vocabulary for the next
// position. A hypothesis finishes when it expands eos_id; its score is
// total logp / (len + 1) where len counts content tokens (the EOS step is
// charged). Hypotheses cut at max_len are normalized by len. Ties break
// toward the lower token id, then the earlier-created hypothesis, making
// beam_size == 1 identical to greedy argmax decoding.
using StepScorer = std::function<std::vector<double>(const std::vector<int>&)>;

struct BeamResult {
  std::vector<int> tokens;  // content tokens, EOS excluded
  double score = 0.0;       // normalized log-probability
  bool finished = false;    // saw EOS before max_len
};

BeamResult beam_search(const StepScorer& step, int eos_id, int64_t beam_size, int64_t max_len);

}  // namespace cifst::model
