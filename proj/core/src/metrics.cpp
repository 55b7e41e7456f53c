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

#include "cifst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cifst::metrics {

void DelayVector::validate() const {
  if (total_source_ms <= 0.0) throw std::invalid_argument("DelayVector: non-positive duration");
  double prev = 0.0;
  for (double d : delays) {
    if (d <= 0.0 || d > total_source_ms) {
      throw std::invalid_argument("DelayVector: delay outside (0, D]");
    }
    if (d < prev) throw std::invalid_argument("DelayVector: delays must be non-decreasing");
    prev = d;
  }
}

std::optional<double> average_proportion(const DelayVector& v) {
  v.validate();
  if (v.hyp_len() == 0) return std::nullopt;
  double sum = 0.0;
  for (double d : v.delays) sum += d;
  return sum / (v.total_source_ms * static_cast<double>(v.hyp_len()));
}

std::optional<double> average_lagging(const DelayVector& v) {
  v.validate();
  if (v.hyp_len() == 0 || v.ref_len < 1) return std::nullopt;
  const double rate = v.total_source_ms / static_cast<double>(v.ref_len);
  int64_t tau = v.hyp_len();
  for (int64_t i = 0; i < v.hyp_len(); ++i) {
    if (v.delays[static_cast<size_t>(i)] == v.total_source_ms) {
      tau = i + 1;
      break;
    }
  }
  double sum = 0.0;
  for (int64_t i = 1; i <= tau; ++i) {
    sum += v.delays[static_cast<size_t>(i - 1)] - static_cast<double>(i - 1) * rate;
  }
  return sum / static_cast<double>(tau);
}

std::optional<double> differentiable_average_lagging(const DelayVector& v) {
  v.validate();
  if (v.hyp_len() == 0 || v.ref_len < 1) return std::nullopt;
  const double rate = v.total_source_ms / static_cast<double>(v.ref_len);
  double sum = 0.0;
  double g_prev = 0.0;
  for (int64_t i = 1; i <= v.hyp_len(); ++i) {
    const double d = v.delays[static_cast<size_t>(i - 1)];
    const double g = i == 1 ? d : std::max(d, g_prev + rate);
    sum += g - static_cast<double>(i - 1) * rate;
    g_prev = g;
  }
  return sum / static_cast<double>(v.hyp_len());
}

LatencyReport mean_latency(std::span<const DelayVector> vectors) {
  LatencyReport report;
  report.n_utterances = static_cast<int64_t>(vectors.size());
  double al = 0.0, ap = 0.0, dal = 0.0;
  int64_t scored = 0;
  for (const DelayVector& v : vectors) {
    const auto a = average_lagging(v);
    const auto p = average_proportion(v);
    const auto d = differentiable_average_lagging(v);
    if (!a || !p || !d) {
      ++report.n_empty_hypotheses;
      continue;
    }
    al += *a;
    ap += *p;
    dal += *d;
    ++scored;
  }
  if (scored > 0) {
    report.al = al / static_cast<double>(scored);
    report.ap = ap / static_cast<double>(scored);
    report.dal = dal / static_cast<double>(scored);
  }
  return report;
}

namespace {

// Clipped n-gram match and total counts for one sentence pair.
void ngram_counts(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
                  int n, int64_t* matched, int64_t* total) {
  *matched = 0;
  *total = std::max<int64_t>(0, static_cast<int64_t>(hyp.size()) - n + 1);
  if (*total == 0) return;
  std::map<std::vector<std::string>, int64_t> ref_counts;
  for (size_t i = 0; i + n <= ref.size(); ++i) {
    ref_counts[std::vector<std::string>(ref.begin() + static_cast<int64_t>(i),
                                        ref.begin() + static_cast<int64_t>(i) + n)]++;
  }
  std::map<std::vector<std::string>, int64_t> hyp_counts;
  for (size_t i = 0; i + n <= hyp.size(); ++i) {
    hyp_counts[std::vector<std::string>(hyp.begin() + static_cast<int64_t>(i),
                                        hyp.begin() + static_cast<int64_t>(i) + n)]++;
  }
  for (const auto& [gram, count] : hyp_counts) {
    const auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) *matched += std::min(count, it->second);
  }
}

}  // namespace

double corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                   std::span<const std::vector<std::string>> references) {
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: hypothesis/reference count mismatch");
  }
  constexpr int kMaxOrder = 4;
  int64_t matched[kMaxOrder] = {0, 0, 0, 0};
  int64_t total[kMaxOrder] = {0, 0, 0, 0};
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    hyp_len += static_cast<int64_t>(hypotheses[s].size());
    ref_len += static_cast<int64_t>(references[s].size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      int64_t m = 0, t = 0;
      ngram_counts(hypotheses[s], references[s], n, &m, &t);
      matched[n - 1] += m;
      total[n - 1] += t;
    }
  }
  if (hyp_len == 0) return 0.0;

  // Exponential (mteval-style) smoothing: the k-th zero numerator in order
  // becomes 1 / (2^k * total).
  double smooth = 1.0;
  double log_precision_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    double p;
    if (total[n] == 0) {
      return 0.0;  // hypothesis corpus shorter than the order everywhere
    }
    if (matched[n] > 0) {
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    } else {
      smooth *= 2.0;
      p = 1.0 / (smooth * static_cast<double>(total[n]));
    }
    log_precision_sum += std::log(p) / kMaxOrder;
  }
  const double bp =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_precision_sum);
}

double corpus_bleu_text(std::span<const std::string> hypotheses,
                        std::span<const std::string> references) {
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
  };
  std::vector<std::vector<std::string>> h, r;
  h.reserve(hypotheses.size());
  r.reserve(references.size());
  for (const auto& s : hypotheses) h.push_back(split(s));
  for (const auto& s : references) r.push_back(split(s));
  return corpus_bleu(h, r);
}

std::string format_report(std::span<const SweepRow> rows, const std::string& metadata_json) {
  std::ostringstream os;
  if (!metadata_json.empty()) os << "# config\t" << metadata_json << '\n';
  os << "# al_rate_term\treference_length\n";
  os << "policy\tk\tstride_ms\tBLEU\tAL\tAP\tDAL\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const SweepRow& r : rows) {
    os << r.policy << '\t' << r.k << '\t' << r.stride_ms << '\t' << r.bleu << '\t' << r.al << '\t'
       << r.ap << '\t' << r.dal << '\n';
  }
  return os.str();
}

std::vector<SweepRow> parse_report(const std::string& text) {
  std::istringstream is(text);
  std::vector<SweepRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;  // column header
      continue;
    }
    std::istringstream ls(line);
    SweepRow r;
    if (!(ls >> r.policy >> r.k >> r.stride_ms >> r.bleu >> r.al >> r.ap >> r.dal)) {
      throw std::runtime_error("parse_report: bad row: " + line);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace cifst::metrics
