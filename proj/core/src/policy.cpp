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

#include "cifst/policy.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cifst::policy {

namespace {

Tensor slice_frame_rows(const Tensor& frames, int64_t r0, int64_t r1) {
  const int64_t d = frames.shape[1];
  Tensor out({r1 - r0, d});
  std::copy(frames.data.begin() + r0 * d, frames.data.begin() + r1 * d, out.data.begin());
  return out;
}

}  // namespace

void PolicyConfig::validate(double frame_ms) const {
  if (kind != PolicyKind::kOffline) {
    if (k < 1) throw std::invalid_argument("PolicyConfig: k must be >= 1 for streaming kinds");
    if (stride_ms <= 0) throw std::invalid_argument("PolicyConfig: stride_ms must be > 0");
    if (frame_ms <= 0 || std::fmod(static_cast<double>(stride_ms), frame_ms) != 0.0) {
      throw std::invalid_argument("PolicyConfig: stride_ms must be a multiple of frame_ms");
    }
  }
  if (max_len < 1) throw std::invalid_argument("PolicyConfig: max_len must be >= 1");
}

std::string policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kOffline: return "offline";
    case PolicyKind::kPrefix: return "prefix";
    case PolicyKind::kAdaptive: return "adaptive";
  }
  return "?";
}

PolicyKind policy_kind_from_name(const std::string& name) {
  if (name == "offline") return PolicyKind::kOffline;
  if (name == "prefix") return PolicyKind::kPrefix;
  if (name == "adaptive") return PolicyKind::kAdaptive;
  throw std::invalid_argument("unknown policy kind: " + name);
}

Action adaptive_next_action(bool source_exhausted, int64_t integrated_len, int64_t emitted_len,
                            int64_t k) {
  if (source_exhausted) return Action::kWrite;
  if (integrated_len - emitted_len < k) return Action::kRead;
  return Action::kWrite;
}

std::vector<int64_t> DecisionLog::delays() const {
  std::vector<int64_t> d;
  for (const DecisionEvent& e : events) {
    if (e.action == Action::kWrite && e.token != kEosId) d.push_back(e.consumed_ms);
  }
  return d;
}

std::vector<int> DecisionLog::written_tokens(bool include_eos) const {
  std::vector<int> out;
  for (const DecisionEvent& e : events) {
    if (e.action != Action::kWrite) continue;
    if (e.token == kEosId && !include_eos) continue;
    out.push_back(e.token);
  }
  return out;
}

bool DecisionLog::finished() const {
  if (events.empty() || events.back().action != Action::kWrite) return false;
  return events.back().token == kEosId || truncated;
}

void serialize_decision_log(std::ostream& os, const DecisionLog& log) {
  if (!log.finished()) {
    throw std::invalid_argument("serialize_decision_log: log for '" + log.utt_id +
                                "' is unfinished");
  }
  os << "UTT\t" << log.utt_id << '\t' << log.total_source_ms << '\t' << log.reference_text;
  if (log.truncated) os << "\tTRUNCATED";
  os << '\n';
  for (const DecisionEvent& e : log.events) {
    if (e.action == Action::kRead) {
      os << "READ\t" << e.consumed_ms << '\n';
    } else {
      os << "WRITE\t" << e.consumed_ms << '\t' << e.token << '\n';
    }
  }
  os << '\n';
}

std::string serialize_decision_logs(std::span<const DecisionLog> logs) {
  std::ostringstream os;
  for (const DecisionLog& log : logs) serialize_decision_log(os, log);
  return os.str();
}

std::vector<DecisionLog> parse_decision_logs(std::istream& is) {
  std::vector<DecisionLog> out;
  std::string line;
  std::optional<DecisionLog> cur;
  int64_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error("decision log line " + std::to_string(line_no) + ": " + msg);
  };
  auto finish = [&]() {
    if (!cur) return;
    if (!cur->finished()) fail("record for '" + cur->utt_id + "' is unfinished");
    out.push_back(std::move(*cur));
    cur.reset();
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) {
      finish();
      continue;
    }
    if (line[0] == '#') continue;  // file-level comments
    std::vector<std::string> f;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        f.push_back(line.substr(start));
        break;
      }
      f.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (f[0] == "UTT") {
      finish();
      if (f.size() != 4 && f.size() != 5) fail("UTT header needs 4 or 5 fields");
      cur.emplace();
      cur->utt_id = f[1];
      cur->total_source_ms = std::stoll(f[2]);
      cur->reference_text = f[3];
      if (f.size() == 5) {
        if (f[4] != "TRUNCATED") fail("bad UTT flag: " + f[4]);
        cur->truncated = true;
      }
    } else if (f[0] == "READ") {
      if (!cur) fail("event before UTT header");
      if (f.size() != 2) fail("READ needs 2 fields");
      cur->events.push_back({Action::kRead, std::stoll(f[1]), -1});
    } else if (f[0] == "WRITE") {
      if (!cur) fail("event before UTT header");
      if (f.size() != 3) fail("WRITE needs 3 fields");
      cur->events.push_back({Action::kWrite, std::stoll(f[1]), std::stoi(f[2])});
    } else {
      fail("unknown record type: " + f[0]);
    }
  }
  ++line_no;
  finish();
  return out;
}

std::vector<DecisionLog> parse_decision_logs_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open decision log file: " + path);
  return parse_decision_logs(is);
}

void write_decision_logs_file(const std::string& path, std::span<const DecisionLog> logs,
                              const std::string& header_comment_json) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open decision log file for writing: " + path);
  if (!header_comment_json.empty()) os << "# config\t" << header_comment_json << '\n';
  for (const DecisionLog& log : logs) serialize_decision_log(os, log);
  if (!os) throw std::runtime_error("write failed for decision log file: " + path);
}

StreamingState::StreamingState(const model::Model& m, double frame_ms, int64_t total_frames)
    : model_(m),
      frame_ms_(frame_ms),
      total_frames_(total_frames),
      encoder_(m),
      cif_(m.config().d_acoustic - 1) {
  if (total_frames < 1) throw std::invalid_argument("StreamingState: empty source");
  if (frame_ms <= 0) throw std::invalid_argument("StreamingState: frame_ms must be > 0");
}

int64_t StreamingState::consumed_ms() const {
  return static_cast<int64_t>(static_cast<double>(consumed_frames_) * frame_ms_);
}

void StreamingState::append_frames(int64_t begin_frame, const Tensor& frames) {
  if (begin_frame != consumed_frames_) {
    throw std::invalid_argument("StreamingState: segment at frame " + std::to_string(begin_frame) +
                                " is not contiguous with consumed prefix of " +
                                std::to_string(consumed_frames_));
  }
  if (finalized_) throw std::logic_error("StreamingState: source already finalized");
  const int64_t n = frames.shape.empty() ? 0 : frames.shape[0];
  if (n == 0) return;
  if (consumed_frames_ + n > total_frames_) {
    throw std::invalid_argument("StreamingState: segment overruns the source");
  }
  const Tensor new_states = encoder_.append(frames);
  consumed_frames_ += n;
  const int64_t d = model_.config().d_acoustic;
  for (int64_t i = 0; i < new_states.shape[0]; ++i) {
    const double logit = new_states.at(i, d - 1);
    const double alpha = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                                      : std::exp(logit) / (1.0 + std::exp(logit));
    cif_.advance(alpha, std::span<const double>(new_states.data).subspan(
                            static_cast<size_t>(i * d), static_cast<size_t>(d - 1)));
  }
}

void StreamingState::finalize_source() {
  if (finalized_) return;
  if (!source_exhausted()) {
    throw std::logic_error("StreamingState: finalize before the source is exhausted");
  }
  cif::AcousticStates st;
  st.values = encoder_.states();
  st.state_ms = frame_ms_ * static_cast<double>(model_.config().stride_total());
  const std::vector<double> alpha = cif::compute_weights(st);
  const std::vector<double> alpha_eff = cif::inference_rescale(alpha);
  if (alpha_eff.empty()) {
    final_integrated_ = Tensor({0, model_.config().d_acoustic - 1});
  } else {
    const cif::FiringSchedule schedule = cif::integrate_and_fire(alpha_eff, 0.5);
    final_integrated_ = cif::integrate_segments(st, alpha_eff, schedule);
  }
  finalized_ = true;
}

int64_t StreamingState::integrated_len() const {
  return finalized_ ? final_integrated_.shape[0] : cif_.fired_count();
}

const Tensor& StreamingState::current_h_se(std::span<const int>) {
  const int64_t len = integrated_len();
  if (h_se_cache_len_ == len && h_se_cache_final_ == finalized_) return h_se_cache_;
  const Tensor integrated = finalized_ ? final_integrated_ : cif_.fired_embeddings();
  if (integrated.shape[0] == 0) {
    h_se_cache_ = Tensor({0, model_.config().d_model});
  } else {
    h_se_cache_ = model_.semantic_encode_plain(model_.project_plain(integrated));
  }
  h_se_cache_len_ = len;
  h_se_cache_final_ = finalized_;
  return h_se_cache_;
}

int StreamingState::write_next(int indicator, std::span<const int> emitted) {
  if (source_exhausted() && !finalized_) finalize_source();
  const Tensor& h_se = current_h_se(emitted);
  if (h_se.shape[0] == 0) return kEosId;
  const std::vector<double> lp = model_.next_token_logprobs(h_se, indicator, emitted);
  size_t best = 0;
  for (size_t v = 1; v < lp.size(); ++v) {
    if (lp[v] > lp[best]) best = v;
  }
  return static_cast<int>(best);
}

void incremental_update(StreamingState& state, const model::Model&, int64_t begin_frame,
                        const Tensor& new_frames) {
  state.append_frames(begin_frame, new_frames);
}

namespace {

// Shared WRITE step: decodes one token, logs it, updates emitted/truncated.
// Returns true while the run should continue writing.
struct Writer {
  StreamingState& state;
  PolicyRunResult& result;
  int64_t max_len;
  bool done = false;

  void write_one() {
    const int tok = state.write_next(kTgtIndicatorId, result.tokens);
    result.log.events.push_back({Action::kWrite, state.consumed_ms(), tok});
    if (tok == kEosId) {
      done = true;
      return;
    }
    result.tokens.push_back(tok);
    if (static_cast<int64_t>(result.tokens.size()) >= max_len) {
      result.log.truncated = true;
      done = true;
    }
  }
};

PolicyRunResult init_result(const data::FrameSequence& frames, const std::string& utt_id,
                            const std::string& reference_text) {
  PolicyRunResult r;
  r.log.utt_id = utt_id;
  r.log.total_source_ms = frames.duration_ms();
  r.log.reference_text = reference_text;
  return r;
}

void read_span(StreamingState& state, const data::FrameSequence& frames, int64_t n_frames,
               DecisionLog& log) {
  const int64_t begin = state.consumed_frames();
  const int64_t end = std::min(begin + n_frames, state.total_frames());
  state.append_frames(begin, slice_frame_rows(frames.values, begin, end));
  log.events.push_back({Action::kRead, state.consumed_ms(), -1});
}

// The raw accumulator is untouched by finalize_source, so the online count
// can be read at the end of a run; integrated_len() reflects the rescaled
// count once finalized.
void finish_stats(const StreamingState& state, PolicyRunResult& r) {
  r.online_fired = state.online_fired_count();
  r.offline_fired = state.integrated_len();
}

}  // namespace

PolicyRunResult run_offline_policy(const model::Model& m, const data::FrameSequence& frames,
                                   const PolicyConfig& cfg, const std::string& utt_id,
                                   const std::string& reference_text) {
  PolicyRunResult r = init_result(frames, utt_id, reference_text);
  StreamingState state(m, frames.frame_ms, frames.length());
  read_span(state, frames, frames.length(), r.log);
  Writer w{state, r, cfg.max_len};
  while (!w.done) w.write_one();
  finish_stats(state, r);
  return r;
}

PolicyRunResult run_prefix_policy(const model::Model& m, const data::FrameSequence& frames,
                                  const PolicyConfig& cfg, const std::string& utt_id,
                                  const std::string& reference_text) {
  cfg.validate(frames.frame_ms);
  PolicyRunResult r = init_result(frames, utt_id, reference_text);
  StreamingState state(m, frames.frame_ms, frames.length());
  const int64_t stride_frames =
      static_cast<int64_t>(static_cast<double>(cfg.stride_ms) / frames.frame_ms);

  // Wait k strides up front (or to exhaustion, whichever comes first), then
  // alternate one WRITE with one READ; after exhaustion keep writing.
  for (int64_t i = 0; i < cfg.k && !state.source_exhausted(); ++i) {
    read_span(state, frames, stride_frames, r.log);
  }
  Writer w{state, r, cfg.max_len};
  while (!w.done) {
    w.write_one();
    if (!w.done && !state.source_exhausted()) read_span(state, frames, stride_frames, r.log);
  }
  finish_stats(state, r);
  return r;
}

PolicyRunResult run_adaptive_policy(const model::Model& m, const data::FrameSequence& frames,
                                    const PolicyConfig& cfg, const std::string& utt_id,
                                    const std::string& reference_text) {
  cfg.validate(frames.frame_ms);
  PolicyRunResult r = init_result(frames, utt_id, reference_text);
  StreamingState state(m, frames.frame_ms, frames.length());
  const int64_t stride_frames =
      static_cast<int64_t>(static_cast<double>(cfg.stride_ms) / frames.frame_ms);

  Writer w{state, r, cfg.max_len};
  while (!w.done) {
    const Action act =
        adaptive_next_action(state.source_exhausted(), state.integrated_len(),
                             static_cast<int64_t>(r.tokens.size()), cfg.k);
    if (act == Action::kRead) {
      read_span(state, frames, stride_frames, r.log);
    } else {
      w.write_one();
    }
  }
  finish_stats(state, r);
  return r;
}

PolicyRunResult run_policy(const model::Model& m, const data::FrameSequence& frames,
                           const PolicyConfig& cfg, const std::string& utt_id,
                           const std::string& reference_text) {
  switch (cfg.kind) {
    case PolicyKind::kOffline: return run_offline_policy(m, frames, cfg, utt_id, reference_text);
    case PolicyKind::kPrefix: return run_prefix_policy(m, frames, cfg, utt_id, reference_text);
    case PolicyKind::kAdaptive: return run_adaptive_policy(m, frames, cfg, utt_id, reference_text);
  }
  throw std::logic_error("run_policy: bad kind");
}

}  // namespace cifst::policy
