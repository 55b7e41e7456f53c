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
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cifst::metrics {

// Per-utterance emission delays for latency scoring. Delays are source
// milliseconds consumed at each token's WRITE (computation-unaware),
// non-decreasing, and bounded by the total source duration. The rate term
// of the lagging metrics uses the reference length.
struct DelayVector {
  std::vector<double> delays;
  double total_source_ms = 0.0;
  int64_t ref_len = 0;

  int64_t hyp_len() const { return static_cast<int64_t>(delays.size()); }
  void validate() const;
};

// AP = sum(d_i) / (D * |hyp|). Empty hypothesis: no value.
std::optional<double> average_proportion(const DelayVector& v);

// AL = (1/tau) * sum_{i<=tau} (d_i - (i-1) * D/|ref|), where tau is the
// 1-based index of the first delay equal to D (ties toward the earliest),
// or |hyp| when no delay reaches D.
std::optional<double> average_lagging(const DelayVector& v);

// DAL with the max-recursion g'_i = max(d_i, g'_{i-1} + r): charges every
// token at least one rate-step, removing AL's truncation.
std::optional<double> differentiable_average_lagging(const DelayVector& v);

struct LatencyReport {
  double al = 0.0;
  double ap = 0.0;
  double dal = 0.0;
  double bleu = 0.0;
  int64_t n_utterances = 0;
  int64_t n_empty_hypotheses = 0;  // skipped in the latency means
};

// Utterance means of AL/AP/DAL over the given delay vectors (empty
// hypotheses are counted in n_empty_hypotheses and skipped).
LatencyReport mean_latency(std::span<const DelayVector> vectors);

// Corpus-level BLEU-4: clipped n-gram precisions with exponential (mteval)
// smoothing of zero counts, brevity penalty from corpus lengths, whitespace
// tokens, case-sensitive. Returns a percentage in [0, 100].
double corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                   std::span<const std::vector<std::string>> references);
// Convenience over whitespace-joined sentences.
double corpus_bleu_text(std::span<const std::string> hypotheses,
                        std::span<const std::string> references);

struct SweepRow {
  std::string policy;
  int64_t k = 0;
  int64_t stride_ms = 0;
  double bleu = 0.0;
  double al = 0.0;
  double ap = 0.0;
  double dal = 0.0;
};

// Tab-separated score table (one row per sweep point), preceded by `#`
// metadata lines when metadata_json is non-empty.
std::string format_report(std::span<const SweepRow> rows, const std::string& metadata_json);
std::vector<SweepRow> parse_report(const std::string& text);

}  // namespace cifst::metrics
