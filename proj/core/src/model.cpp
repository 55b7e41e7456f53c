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

#include "cifst/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cifst/search.hpp"

namespace cifst::model {

using numerics::gelu_scalar;
using numerics::matmul_plain;
using numerics::mix_seed;
using numerics::randn;

namespace {

constexpr double kMaskNegInf = -1e30;

Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

// fan-in scaled normal init
Tensor init_weight(std::vector<int64_t> shape, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(shape[0]);
  return randn(std::move(shape), rng, 1.0 / std::sqrt(fan_in));
}

std::vector<double> log_softmax_row(std::span<const double> row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  const double lse = std::log(z) + mx;
  std::vector<double> out(row.size());
  for (size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
  return out;
}

void append_rows(Tensor& dst, const Tensor& src) {
  if (src.shape[0] == 0) return;
  dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
  dst.shape[0] += src.shape[0];
}

}  // namespace

void ModelConfig::validate() const {
  if (d_feat < 1) throw std::invalid_argument("ModelConfig: d_feat must be >= 1");
  if (d_acoustic < 2) throw std::invalid_argument("ModelConfig: d_acoustic must be >= 2");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
  }
  if (n_enc_layers < 1 || n_dec_layers < 1) {
    throw std::invalid_argument("ModelConfig: need at least one layer on each side");
  }
  if (vocab_size <= kNumReservedTokens) {
    throw std::invalid_argument("ModelConfig: vocab_size must exceed the reserved ids");
  }
  if (max_len < 1) throw std::invalid_argument("ModelConfig: max_len must be >= 1");
  if (conv_kernel < 1 || conv_stride1 < 1 || conv_stride2 < 1) {
    throw std::invalid_argument("ModelConfig: bad conv geometry");
  }
}

Tensor& ParamSet::add(const std::string& name, Tensor init) {
  if (index_of(name) >= 0) throw std::invalid_argument("ParamSet: duplicate name " + name);
  init.requires_grad = true;
  items_.emplace_back(name, std::move(init));
  return items_.back().second;
}

int64_t ParamSet::index_of(const std::string& name) const {
  for (size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].first == name) return static_cast<int64_t>(i);
  }
  return -1;
}

int64_t ParamSet::total_scalars() const {
  int64_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

GraphBinding::GraphBinding(Graph& g, const ParamSet& params, bool trainable)
    : g_(&g),
      params_(&params),
      trainable_(trainable),
      cache_(static_cast<size_t>(params.size())),
      bound_(static_cast<size_t>(params.size()), 0) {}

Value GraphBinding::operator[](int64_t i) {
  if (i < 0 || i >= params_->size()) throw std::out_of_range("GraphBinding: bad param index");
  if (!bound_[static_cast<size_t>(i)]) {
    Tensor t = params_->tensor(i);
    t.requires_grad = trainable_;
    cache_[static_cast<size_t>(i)] = g_->leaf(std::move(t));
    bound_[static_cast<size_t>(i)] = 1;
  }
  return cache_[static_cast<size_t>(i)];
}

void GraphBinding::add_param_grads(std::vector<std::vector<double>>& accum) const {
  accum.resize(static_cast<size_t>(params_->size()));
  for (int64_t i = 0; i < params_->size(); ++i) {
    if (!bound_[static_cast<size_t>(i)]) continue;
    const std::vector<double>& g = cache_[static_cast<size_t>(i)].t().grad;
    if (g.empty()) continue;
    auto& dst = accum[static_cast<size_t>(i)];
    if (dst.empty()) dst.assign(g.size(), 0.0);
    for (size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
  }
}

Tensor Batch::sample_frames(int64_t i) const {
  const int64_t t_max = frames.shape[1], d = frames.shape[2];
  const int64_t t_i = frame_lengths[static_cast<size_t>(i)];
  Tensor out({t_i, d});
  std::copy(frames.data.begin() + (i * t_max) * d, frames.data.begin() + (i * t_max + t_i) * d,
            out.data.begin());
  return out;
}

void Batch::validate() const {
  const int64_t b = size();
  if (frames.rank() != 3 || frames.shape[0] != b ||
      static_cast<int64_t>(transcripts.size()) != b ||
      static_cast<int64_t>(translations.size()) != b) {
    throw std::invalid_argument("Batch: inconsistent sizes");
  }
  for (int64_t i = 0; i < b; ++i) {
    const auto& z = transcripts[static_cast<size_t>(i)];
    const auto& y = translations[static_cast<size_t>(i)];
    if (z.size() < 2 || z.front() != kSrcIndicatorId || z.back() != kEosId) {
      throw std::invalid_argument("Batch: transcript must be [src-ind] ... [eos]");
    }
    if (y.size() < 2 || y.front() != kTgtIndicatorId || y.back() != kEosId) {
      throw std::invalid_argument("Batch: translation must be [tgt-ind] ... [eos]");
    }
    if (frame_lengths[static_cast<size_t>(i)] < 1 ||
        frame_lengths[static_cast<size_t>(i)] > frames.shape[1]) {
      throw std::invalid_argument("Batch: bad frame length");
    }
    for (int64_t t = 0; t < frames.shape[1]; ++t) {
      const bool real = t < frame_lengths[static_cast<size_t>(i)];
      if (frame_mask.at(i, t) != (real ? 1.0 : 0.0)) {
        throw std::invalid_argument("Batch: frame_mask inconsistent with lengths");
      }
    }
  }
}

Tensor sinusoidal_positions(int64_t n, int64_t d_model) {
  Tensor pe({n, d_model});
  for (int64_t pos = 0; pos < n; ++pos) {
    for (int64_t i = 0; i < d_model; i += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe.at(pos, i) = std::sin(static_cast<double>(pos) * rate);
      if (i + 1 < d_model) pe.at(pos, i + 1) = std::cos(static_cast<double>(pos) * rate);
    }
  }
  return pe;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_params();
  // Positions cover the longest sequence either side can see.
  positional_ = sinusoidal_positions(std::max<int64_t>(cfg_.max_len + 2, 512), cfg_.d_model);
}

void Model::init_params() {
  std::mt19937_64 rng(mix_seed(cfg_.seed, 0xC1F57'0001ull));
  const int64_t dm = cfg_.d_model, ch = cfg_.conv_width(), k = cfg_.conv_kernel;

  params_.add("acoustic.conv1.w", init_weight({k * cfg_.d_feat, ch}, rng));
  params_.add("acoustic.conv1.b", zeros({ch}));
  params_.add("acoustic.conv2.w", init_weight({k * ch, ch}, rng));
  params_.add("acoustic.conv2.b", zeros({ch}));
  params_.add("acoustic.out.w", init_weight({ch, cfg_.d_acoustic}, rng));
  params_.add("acoustic.out.b", zeros({cfg_.d_acoustic}));
  params_.add("cif.proj", init_weight({cfg_.d_acoustic - 1, dm}, rng));
  params_.add("embed.tokens", randn({cfg_.vocab_size, dm}, rng, 1.0 / std::sqrt(dm)));

  auto add_attention = [&](const std::string& prefix) {
    params_.add(prefix + ".wq", init_weight({dm, dm}, rng));
    params_.add(prefix + ".bq", zeros({dm}));
    params_.add(prefix + ".wk", init_weight({dm, dm}, rng));
    params_.add(prefix + ".bk", zeros({dm}));
    params_.add(prefix + ".wv", init_weight({dm, dm}, rng));
    params_.add(prefix + ".bv", zeros({dm}));
    params_.add(prefix + ".wo", init_weight({dm, dm}, rng));
    params_.add(prefix + ".bo", zeros({dm}));
  };
  auto add_ln = [&](const std::string& prefix) {
    params_.add(prefix + ".g", Tensor({dm}, 1.0));
    params_.add(prefix + ".b", zeros({dm}));
  };
  auto add_ffn = [&](const std::string& prefix) {
    params_.add(prefix + ".w1", init_weight({dm, cfg_.d_ff()}, rng));
    params_.add(prefix + ".b1", zeros({cfg_.d_ff()}));
    params_.add(prefix + ".w2", init_weight({cfg_.d_ff(), dm}, rng));
    params_.add(prefix + ".b2", zeros({dm}));
  };

  for (int64_t l = 0; l < cfg_.n_enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    add_ln(p + ".ln1");
    add_attention(p + ".attn");
    add_ln(p + ".ln2");
    add_ffn(p + ".ffn");
  }
  add_ln("enc.final_ln");

  for (int64_t l = 0; l < cfg_.n_dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    add_ln(p + ".ln1");
    add_attention(p + ".self");
    add_ln(p + ".ln2");
    add_attention(p + ".cross");
    add_ln(p + ".ln3");
    add_ffn(p + ".ffn");
  }
  add_ln("dec.final_ln");

  // Zero-init output head: an untrained model scores the vocabulary
  // uniformly (per-token NLL is exactly ln V).
  params_.add("out.w", zeros({dm, cfg_.vocab_size}));
  params_.add("out.b", zeros({cfg_.vocab_size}));
}

Value Model::attention(Graph& g, GraphBinding& p, const std::string& prefix, Value queries_in,
                       Value keys_in, Value mask) const {
  const int64_t dm = cfg_.d_model, dh = dm / cfg_.n_heads;
  const auto idx = [&](const char* suffix) {
    const int64_t i = params_.index_of(prefix + suffix);
    if (i < 0) throw std::logic_error("attention: unknown param " + prefix + suffix);
    return i;
  };
  Value q_all = g.add(g.matmul(queries_in, p[idx(".wq")]), p[idx(".bq")]);
  Value k_all = g.add(g.matmul(keys_in, p[idx(".wk")]), p[idx(".bk")]);
  Value v_all = g.add(g.matmul(keys_in, p[idx(".wv")]), p[idx(".bv")]);

  Value out;
  Value wo = p[idx(".wo")];
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int64_t h = 0; h < cfg_.n_heads; ++h) {
    Value q = g.slice_cols(q_all, h * dh, (h + 1) * dh);
    Value kk = g.slice_cols(k_all, h * dh, (h + 1) * dh);
    Value v = g.slice_cols(v_all, h * dh, (h + 1) * dh);
    Value scores = g.scale(g.matmul(q, g.transpose(kk)), scale);
    if (mask.valid()) scores = g.add(scores, mask);
    Value ctx = g.matmul(g.softmax_rows(scores), v);
    Value head_out = g.matmul(ctx, g.slice_rows(wo, h * dh, (h + 1) * dh));
    out = h == 0 ? head_out : g.add(out, head_out);
  }
  return g.add(out, p[idx(".bo")]);
}

Value Model::encoder_layer(Graph& g, GraphBinding& p, int64_t layer, Value x) const {
  const std::string pre = "enc." + std::to_string(layer);
  const auto idx = [&](const std::string& s) { return params_.index_of(pre + s); };
  Value normed = g.layer_norm(x, p[idx(".ln1.g")], p[idx(".ln1.b")]);
  x = g.add(x, attention(g, p, pre + ".attn", normed, normed, Value()));
  Value normed2 = g.layer_norm(x, p[idx(".ln2.g")], p[idx(".ln2.b")]);
  Value ff = g.add(
      g.matmul(g.gelu(g.add(g.matmul(normed2, p[idx(".ffn.w1")]), p[idx(".ffn.b1")])),
               p[idx(".ffn.w2")]),
      p[idx(".ffn.b2")]);
  return g.add(x, ff);
}

Value Model::decoder_layer(Graph& g, GraphBinding& p, int64_t layer, Value x, Value h_se,
                           Value causal_mask) const {
  const std::string pre = "dec." + std::to_string(layer);
  const auto idx = [&](const std::string& s) { return params_.index_of(pre + s); };
  Value n1 = g.layer_norm(x, p[idx(".ln1.g")], p[idx(".ln1.b")]);
  x = g.add(x, attention(g, p, pre + ".self", n1, n1, causal_mask));
  Value n2 = g.layer_norm(x, p[idx(".ln2.g")], p[idx(".ln2.b")]);
  x = g.add(x, attention(g, p, pre + ".cross", n2, h_se, Value()));
  Value n3 = g.layer_norm(x, p[idx(".ln3.g")], p[idx(".ln3.b")]);
  Value ff = g.add(
      g.matmul(g.gelu(g.add(g.matmul(n3, p[idx(".ffn.w1")]), p[idx(".ffn.b1")])),
               p[idx(".ffn.w2")]),
      p[idx(".ffn.b2")]);
  return g.add(x, ff);
}

Value Model::acoustic_encode(Graph& g, GraphBinding& p, Value frames) const {
  const auto idx = [&](const char* name) { return params_.index_of(name); };
  Value h1 = g.gelu(g.causal_conv1d(frames, p[idx("acoustic.conv1.w")], p[idx("acoustic.conv1.b")],
                                    cfg_.conv_kernel, cfg_.conv_stride1));
  Value h2 = g.gelu(g.causal_conv1d(h1, p[idx("acoustic.conv2.w")], p[idx("acoustic.conv2.b")],
                                    cfg_.conv_kernel, cfg_.conv_stride2));
  return g.add(g.matmul(h2, p[idx("acoustic.out.w")]), p[idx("acoustic.out.b")]);
}

Value Model::project_integrated(Graph& g, GraphBinding& p, Value integrated) const {
  return g.matmul(integrated, p[params_.index_of("cif.proj")]);
}

Value Model::semantic_encode(Graph& g, GraphBinding& p, Value projected) const {
  const int64_t u = projected.t().shape[0];
  if (u == 0) throw EmptySourceError("semantic_encode: empty integrated sequence");
  Tensor pe({u, cfg_.d_model});
  std::copy(positional_.data.begin(), positional_.data.begin() + u * cfg_.d_model,
            pe.data.begin());
  Value x = g.add(projected, g.constant(std::move(pe)));
  for (int64_t l = 0; l < cfg_.n_enc_layers; ++l) x = encoder_layer(g, p, l, x);
  return g.layer_norm(x, p[params_.index_of("enc.final_ln.g")],
                      p[params_.index_of("enc.final_ln.b")]);
}

Value Model::decoder_logits(Graph& g, GraphBinding& p, Value h_se,
                            std::span<const int> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("decoder_logits: empty input");
  if (h_se.t().shape[0] == 0) throw EmptySourceError("decoder_logits: empty semantic states");
  const int64_t len = static_cast<int64_t>(tokens.size());
  if (len > positional_.shape[0]) throw std::invalid_argument("decoder_logits: sequence too long");

  Value emb = g.scale(g.embedding(p[params_.index_of("embed.tokens")], tokens),
                      std::sqrt(static_cast<double>(cfg_.d_model)));
  Tensor pe({len, cfg_.d_model});
  std::copy(positional_.data.begin(), positional_.data.begin() + len * cfg_.d_model,
            pe.data.begin());
  Value x = g.add(emb, g.constant(std::move(pe)));

  Tensor mask({len, len});
  for (int64_t i = 0; i < len; ++i)
    for (int64_t j = i + 1; j < len; ++j) mask.at(i, j) = kMaskNegInf;
  Value causal = g.constant(std::move(mask));

  for (int64_t l = 0; l < cfg_.n_dec_layers; ++l) x = decoder_layer(g, p, l, x, h_se, causal);
  x = g.layer_norm(x, p[params_.index_of("dec.final_ln.g")],
                   p[params_.index_of("dec.final_ln.b")]);
  return g.add(g.matmul(x, p[params_.index_of("out.w")]), p[params_.index_of("out.b")]);
}

Value Model::decode_train(Graph& g, GraphBinding& p, Value h_se, std::span<const int> seq) const {
  if (seq.size() < 2) throw std::invalid_argument("decode_train: need indicator plus EOS");
  for (int t : seq) {
    if (t < 0 || t >= cfg_.vocab_size) {
      throw std::invalid_argument("decode_train: token id " + std::to_string(t) +
                                  " outside vocabulary");
    }
  }
  Value logits = decoder_logits(g, p, h_se, seq.subspan(0, seq.size() - 1));
  return g.cross_entropy(logits, seq.subspan(1));
}

Model::JointLossOut Model::joint_loss(Graph& g, GraphBinding& p, const Batch& batch) const {
  batch.validate();
  const int64_t b = batch.size();
  if (b == 0) throw std::invalid_argument("joint_loss: empty batch");

  Value qua_sum, asr_sum, st_sum;
  int64_t asr_tokens = 0, st_tokens = 0;
  for (int64_t i = 0; i < b; ++i) {
    Value frames = g.constant(batch.sample_frames(i));
    Value states = acoustic_encode(g, p, frames);

    const auto& z = batch.transcripts[static_cast<size_t>(i)];
    const auto& y = batch.translations[static_cast<size_t>(i)];
    const int64_t n_star = static_cast<int64_t>(z.size()) - 2;

    cif::CifGraphOut c = cif::cif_forward_train(g, states, n_star);
    Value qua = g.abs(g.add_const(g.scale(c.n_hat, -1.0), static_cast<double>(n_star)));
    qua_sum = qua_sum.valid() ? g.add(qua_sum, qua) : qua;

    Value h_se = semantic_encode(g, p, project_integrated(g, p, c.integrated));
    const int64_t nz = static_cast<int64_t>(z.size()) - 1;
    const int64_t ny = static_cast<int64_t>(y.size()) - 1;
    Value asr = g.scale(decode_train(g, p, h_se, z), static_cast<double>(nz));
    Value st = g.scale(decode_train(g, p, h_se, y), static_cast<double>(ny));
    asr_sum = asr_sum.valid() ? g.add(asr_sum, asr) : asr;
    st_sum = st_sum.valid() ? g.add(st_sum, st) : st;
    asr_tokens += nz;
    st_tokens += ny;
  }

  JointLossOut out;
  Value l_qua = g.scale(qua_sum, 1.0 / static_cast<double>(b));
  Value l_asr = g.scale(asr_sum, 1.0 / static_cast<double>(asr_tokens));
  Value l_st = g.scale(st_sum, 1.0 / static_cast<double>(st_tokens));
  out.total = g.add(g.add(g.scale(l_qua, out.breakdown.qua_weight), l_asr), l_st);
  out.breakdown.l_qua = l_qua.item();
  out.breakdown.l_asr = l_asr.item();
  out.breakdown.l_st = l_st.item();
  out.breakdown.total = out.total.item();
  return out;
}

Tensor Model::acoustic_encode_plain(const Tensor& frames) const {
  Graph g;
  GraphBinding p(g, params_, false);
  return acoustic_encode(g, p, g.constant(frames)).t();
}

Tensor Model::project_plain(const Tensor& integrated) const {
  return matmul_plain(integrated, params_.tensor(params_.index_of("cif.proj")));
}

Tensor Model::semantic_encode_plain(const Tensor& projected) const {
  Graph g;
  GraphBinding p(g, params_, false);
  return semantic_encode(g, p, g.constant(projected)).t();
}

Model::Encoded Model::encode_offline(const Tensor& frames, double frame_ms) const {
  Encoded enc;
  enc.states.values = acoustic_encode_plain(frames);
  enc.states.state_ms = frame_ms * static_cast<double>(cfg_.stride_total());
  enc.alpha = cif::compute_weights(enc.states);

  const std::vector<double> alpha_eff = cif::inference_rescale(enc.alpha);
  double n_hat = 0.0;
  for (double a : enc.alpha) n_hat += a;
  if (alpha_eff.empty()) {
    enc.schedule.weights = enc.alpha;
    enc.schedule.n_hat = n_hat;
    enc.integrated = Tensor({0, cfg_.d_acoustic - 1});
    enc.h_se = Tensor({0, cfg_.d_model});
    return enc;
  }
  // Residue after the rescale is rounding dust; >= 0.5 closes a final
  // segment defensively.
  enc.schedule = cif::integrate_and_fire(alpha_eff, 0.5);
  enc.schedule.weights = enc.alpha;
  enc.schedule.n_hat = n_hat;
  enc.integrated = cif::integrate_segments(enc.states, alpha_eff, enc.schedule);
  enc.h_se = semantic_encode_plain(project_plain(enc.integrated));
  return enc;
}

std::vector<double> Model::next_token_logprobs(const Tensor& h_se, int indicator,
                                               std::span<const int> prefix) const {
  std::vector<int> tokens;
  tokens.reserve(prefix.size() + 1);
  tokens.push_back(indicator);
  tokens.insert(tokens.end(), prefix.begin(), prefix.end());

  Graph g;
  GraphBinding p(g, params_, false);
  Value logits = decoder_logits(g, p, g.constant(h_se), tokens);
  const Tensor& lt = logits.t();
  const int64_t last = lt.shape[0] - 1;
  return log_softmax_row(
      std::span<const double>(lt.data).subspan(static_cast<size_t>(last * lt.shape[1]),
                                               static_cast<size_t>(lt.shape[1])));
}

std::vector<int> Model::greedy_decode(const Tensor& h_se, int indicator, int64_t max_len) const {
  std::vector<int> out;
  for (int64_t step = 0; step < max_len; ++step) {
    const std::vector<double> lp = next_token_logprobs(h_se, indicator, out);
    int best = 0;
    for (size_t v = 1; v < lp.size(); ++v) {
      if (lp[v] > lp[static_cast<size_t>(best)]) best = static_cast<int>(v);
    }
    if (best == kEosId) break;
    out.push_back(best);
  }
  return out;
}

std::vector<int> Model::beam_decode(const Tensor& h_se, int indicator, int64_t beam_size,
                                    int64_t max_len) const {
  const StepScorer step = [&](const std::vector<int>& prefix) {
    return next_token_logprobs(h_se, indicator, prefix);
  };
  return beam_search(step, kEosId, beam_size, max_len).tokens;
}

int64_t Model::acoustic_rows_for_frames(int64_t n_frames) const {
  if (n_frames <= 0) return 0;
  const int64_t r1 = (n_frames + cfg_.conv_stride1 - 1) / cfg_.conv_stride1;
  return (r1 + cfg_.conv_stride2 - 1) / cfg_.conv_stride2;
}

IncrementalAcousticEncoder::IncrementalAcousticEncoder(const Model& m)
    : model_(m),
      frames_({0, m.config().d_feat}),
      h1_({0, m.config().conv_width()}),
      h2_({0, m.config().conv_width()}),
      states_({0, m.config().d_acoustic}) {}

Tensor IncrementalAcousticEncoder::append(const Tensor& new_frames) {
  const ModelConfig& cfg = model_.config();
  if (new_frames.rank() != 2 || new_frames.shape[1] != cfg.d_feat) {
    throw std::invalid_argument("IncrementalAcousticEncoder: frames must be [n, d_feat]");
  }
  append_rows(frames_, new_frames);
  frames_seen_ = frames_.shape[0];

  const ParamSet& ps = model_.params();
  const auto& w1 = ps.tensor(ps.index_of("acoustic.conv1.w"));
  const auto& b1 = ps.tensor(ps.index_of("acoustic.conv1.b"));
  const auto& w2 = ps.tensor(ps.index_of("acoustic.conv2.w"));
  const auto& b2 = ps.tensor(ps.index_of("acoustic.conv2.b"));
  const auto& w3 = ps.tensor(ps.index_of("acoustic.out.w"));
  const auto& b3 = ps.tensor(ps.index_of("acoustic.out.b"));

  const int64_t r1_target = (frames_seen_ + cfg.conv_stride1 - 1) / cfg.conv_stride1;
  if (r1_target > h1_rows_) {
    Tensor rows({r1_target - h1_rows_, cfg.conv_width()});
    numerics::causal_conv1d_rows(frames_, w1, b1, cfg.conv_kernel, cfg.conv_stride1, h1_rows_,
                                 r1_target, rows.data.data());
    for (double& v : rows.data) v = gelu_scalar(v);
    append_rows(h1_, rows);
    h1_rows_ = r1_target;
  }

  const int64_t r2_target = (h1_rows_ + cfg.conv_stride2 - 1) / cfg.conv_stride2;
  if (r2_target > h2_rows_) {
    Tensor rows({r2_target - h2_rows_, cfg.conv_width()});
    numerics::causal_conv1d_rows(h1_, w2, b2, cfg.conv_kernel, cfg.conv_stride2, h2_rows_,
                                 r2_target, rows.data.data());
    for (double& v : rows.data) v = gelu_scalar(v);
    append_rows(h2_, rows);
    h2_rows_ = r2_target;
  }

  Tensor new_states({0, cfg.d_acoustic});
  if (h2_rows_ > states_rows_) {
    Tensor tail({h2_rows_ - states_rows_, cfg.conv_width()});
    std::copy(h2_.data.begin() + states_rows_ * cfg.conv_width(), h2_.data.end(),
              tail.data.begin());
    new_states = matmul_plain(tail, w3);
    for (int64_t i = 0; i < new_states.shape[0]; ++i)
      for (int64_t j = 0; j < cfg.d_acoustic; ++j)
        new_states.at(i, j) += b3.data[static_cast<size_t>(j)];
    append_rows(states_, new_states);
    states_rows_ = h2_rows_;
  }
  return new_states;
}

}  // namespace cifst::model
