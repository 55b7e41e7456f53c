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
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cifst/tensor.hpp"
#include "cifst/tokens.hpp"

namespace cifst::data {

using numerics::Tensor;

struct FrameSequence {
  Tensor values;         // [T, d_feat]
  double frame_ms = 0.0;

  int64_t length() const { return values.shape.empty() ? 0 : values.shape[0]; }
  int64_t feat_dim() const { return values.shape.size() == 2 ? values.shape[1] : 0; }
  int64_t duration_ms() const { return static_cast<int64_t>(length() * frame_ms); }
};

struct Utterance {
  std::string id;
  FrameSequence frames;
  std::vector<int> transcript;   // content token ids, no indicator / EOS
  std::vector<int> translation;  // content token ids
  // Exclusive end frame of each source token's rendering; empty when the
  // utterance was loaded from a manifest (alignment is synthetic-only).
  std::vector<int64_t> gold_boundaries;
};

// Synthetic stand-in for a speech translation corpus: every content token
// is rendered as its fixed random unit embedding repeated a random number
// of frames plus Gaussian noise, so CIF's alignment can be checked against
// known boundaries.
struct SyntheticSpec {
  int64_t vocab_size = 50;  // content tokens; full vocab adds the reserved ids
  int64_t n_samples = 2300;
  int64_t frames_per_token_lo = 2;
  int64_t frames_per_token_hi = 8;
  int64_t tokens_per_sample_lo = 3;
  int64_t tokens_per_sample_hi = 8;
  int64_t d_feat = 16;
  double noise_std = 0.05;
  double frame_ms = 40.0;
  bool reverse_target = false;  // order-permuting mapping variant
  uint64_t seed = 1;

  int64_t total_vocab() const { return vocab_size + kNumReservedTokens; }
  void validate() const;
};

struct Corpus {
  std::vector<Utterance> train, dev, test;
};

// Deterministic per-seed content-token mapping (a permutation); index i maps
// content id (kNumReservedTokens + i) to its target content id.
std::vector<int> token_mapping(const SyntheticSpec& spec);

// Fixed unit-norm rendering embeddings, one row per content token.
Tensor rendering_embeddings(const SyntheticSpec& spec);

Corpus generate_corpus(const SyntheticSpec& spec);

// 16-bit PCM normalization to [-1, 1).
double normalize_waveform_sample(int16_t raw);
std::vector<double> normalize_waveform(std::span<const int16_t> raw);

// Length / ratio filter: keep iff both sides <= 250 tokens and the
// source:target length ratio lies in [2/3, 3/2].
bool filter_pair(std::span<const int> src_tokens, std::span<const int> tgt_tokens);

// ---- on-disk formats ----
// Frames file: int32 T, int32 d_feat, then T*d_feat float32, little-endian.
// A manifest line is `id<TAB>frames<TAB>transcript<TAB>translation` where
// frames is a path to a frames file or `hex:` plus the same bytes in hex,
// and the text fields are space-joined decimal token ids.
void write_frames_file(const std::string& path, const FrameSequence& frames);
FrameSequence read_frames_file(const std::string& path, double frame_ms);
std::string frames_to_hex(const FrameSequence& frames);
FrameSequence frames_from_hex(const std::string& hex, double frame_ms);

struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// inline_frames embeds hex frames in the manifest instead of *.frames files
// (frames_dir may then be empty).
void save_manifest(const std::string& manifest_path, const std::string& frames_dir,
                   std::span<const Utterance> utterances, bool inline_frames);
std::vector<Utterance> load_manifest(const std::string& manifest_path, double frame_ms);

// Alignment sidecar: `id<TAB>b1,b2,...` per utterance.
void save_boundaries(const std::string& path, std::span<const Utterance> utterances);

std::string tokens_to_string(std::span<const int> tokens);
std::vector<int> tokens_from_string(const std::string& text);

}  // namespace cifst::data
