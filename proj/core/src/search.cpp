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

#include "cifst/search.hpp"

#include <algorithm>
#include <stdexcept>

namespace cifst::model {

namespace {

struct Hyp {
  std::vector<int> tokens;
  double logp = 0.0;
  uint64_t order = 0;  // creation order, for deterministic ties
};

double normalized(double logp, size_t content_len, bool finished) {
  const double denom = static_cast<double>(content_len) + (finished ? 1.0 : 0.0);
  return logp / std::max(denom, 1.0);
}

}  // namespace

BeamResult beam_search(const StepScorer& step, int eos_id, int64_t beam_size, int64_t max_len) {
  if (beam_size < 1) throw std::invalid_argument("beam_search: beam_size must be >= 1");
  if (max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");

  std::vector<Hyp> beam{Hyp{}};
  std::vector<BeamResult> finished;
  uint64_t counter = 0;

  for (int64_t pos = 0; pos < max_len && !beam.empty(); ++pos) {
    struct Cand {
      int parent;
      int token;
      double logp;
    };
    std::vector<Cand> cands;
    for (size_t b = 0; b < beam.size(); ++b) {
      const std::vector<double> lp = step(beam[b].tokens);
      for (size_t v = 0; v < lp.size(); ++v) {
        cands.push_back({static_cast<int>(b), static_cast<int>(v), beam[b].logp + lp[v]});
      }
    }
    // Keep the beam_size best expansions; lower token id wins ties, then
    // the earlier parent.
    const auto better = [&](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.token != b.token) return a.token < b.token;
      return beam[static_cast<size_t>(a.parent)].order < beam[static_cast<size_t>(b.parent)].order;
    };
    const size_t keep = std::min(cands.size(), static_cast<size_t>(beam_size));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<int64_t>(keep), cands.end(),
                      better);
    cands.resize(keep);

    std::vector<Hyp> next;
    for (const Cand& c : cands) {
      if (c.token == eos_id) {
        BeamResult r;
        r.tokens = beam[static_cast<size_t>(c.parent)].tokens;
        r.score = normalized(c.logp, r.tokens.size(), true);
        r.finished = true;
        finished.push_back(std::move(r));
      } else {
        Hyp h;
        h.tokens = beam[static_cast<size_t>(c.parent)].tokens;
        h.tokens.push_back(c.token);
        h.logp = c.logp;
        h.order = ++counter;
        next.push_back(std::move(h));
      }
    }
    beam = std::move(next);
    // Nothing still open can beat the best finished hypothesis once the
    // beam is empty; with length normalization we simply run the loop out.
  }

  for (const Hyp& h : beam) {
    BeamResult r;
    r.tokens = h.tokens;
    r.score = normalized(h.logp, h.tokens.size(), false);
    r.finished = false;
    finished.push_back(std::move(r));
  }
  if (finished.empty()) throw std::runtime_error("beam_search: no hypothesis produced");

  size_t best = 0;
  for (size_t i = 1; i < finished.size(); ++i) {
    if (finished[i].score > finished[best].score ||
        (finished[i].score == finished[best].score && finished[i].finished &&
         !finished[best].finished)) {
      best = i;
    }
  }
  return finished[best];
}

}  // namespace cifst::model
