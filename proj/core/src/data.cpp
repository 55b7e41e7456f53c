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

#include "cifst/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace cifst::data {

using numerics::mix_seed;
using numerics::splitmix64;

namespace {

constexpr uint64_t kEmbeddingStream = 0x01;
constexpr uint64_t kMappingStream = 0x02;
constexpr uint64_t kSplitStream = 0x03;
constexpr uint64_t kUtteranceStream = 0x1000;

constexpr int64_t kMaxTokens = 250;

double unit_double(uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;  // [0, 1)
}

std::string hex_encode(std::span<const char> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (char b : bytes) {
    const auto u = static_cast<unsigned char>(b);
    out.push_back(digits[u >> 4]);
    out.push_back(digits[u & 0xF]);
  }
  return out;
}

std::vector<char> hex_decode(const std::string& hex) {
  if (hex.size() % 2 != 0) throw ManifestError("inline frames: odd hex length");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw ManifestError("inline frames: bad hex digit");
  };
  std::vector<char> out(hex.size() / 2);
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<char>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
  }
  return out;
}

std::vector<char> frames_to_bytes(const FrameSequence& frames) {
  const int32_t t = static_cast<int32_t>(frames.length());
  const int32_t d = static_cast<int32_t>(frames.feat_dim());
  std::vector<char> bytes(sizeof(int32_t) * 2 + sizeof(float) * frames.values.data.size());
  char* p = bytes.data();
  std::memcpy(p, &t, sizeof(t));
  p += sizeof(t);
  std::memcpy(p, &d, sizeof(d));
  p += sizeof(d);
  for (double v : frames.values.data) {
    const float f = static_cast<float>(v);
    std::memcpy(p, &f, sizeof(f));
    p += sizeof(f);
  }
  return bytes;
}

FrameSequence frames_from_bytes(std::span<const char> bytes, double frame_ms,
                                const std::string& what) {
  if (bytes.size() < sizeof(int32_t) * 2) throw ManifestError(what + ": truncated header");
  int32_t t = 0, d = 0;
  std::memcpy(&t, bytes.data(), sizeof(t));
  std::memcpy(&d, bytes.data() + sizeof(t), sizeof(d));
  if (t < 0 || d < 1) throw ManifestError(what + ": bad header");
  const size_t need = sizeof(int32_t) * 2 + sizeof(float) * static_cast<size_t>(t) * d;
  if (bytes.size() != need) throw ManifestError(what + ": size does not match header");
  FrameSequence out;
  out.frame_ms = frame_ms;
  out.values = Tensor({t, d});
  const char* p = bytes.data() + sizeof(int32_t) * 2;
  for (double& v : out.values.data) {
    float f;
    std::memcpy(&f, p, sizeof(f));
    p += sizeof(f);
    v = static_cast<double>(f);
  }
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("SyntheticSpec: vocab_size must be >= 1");
  if (n_samples < 1) throw std::invalid_argument("SyntheticSpec: n_samples must be >= 1");
  if (frames_per_token_lo < 1 || frames_per_token_hi < frames_per_token_lo) {
    throw std::invalid_argument("SyntheticSpec: bad frames_per_token range");
  }
  if (tokens_per_sample_lo < 1 || tokens_per_sample_hi < tokens_per_sample_lo) {
    throw std::invalid_argument("SyntheticSpec: bad tokens_per_sample range");
  }
  if (d_feat < 1) throw std::invalid_argument("SyntheticSpec: d_feat must be >= 1");
  if (noise_std < 0.0) throw std::invalid_argument("SyntheticSpec: noise_std must be >= 0");
  if (frame_ms <= 0.0) throw std::invalid_argument("SyntheticSpec: frame_ms must be > 0");
}

std::vector<int> token_mapping(const SyntheticSpec& spec) {
  std::vector<int> mapping(static_cast<size_t>(spec.vocab_size));
  for (size_t i = 0; i < mapping.size(); ++i) {
    mapping[i] = static_cast<int>(i) + kNumReservedTokens;
  }
  std::mt19937_64 rng(mix_seed(spec.seed, kMappingStream));
  std::shuffle(mapping.begin(), mapping.end(), rng);
  return mapping;
}

Tensor rendering_embeddings(const SyntheticSpec& spec) {
  std::mt19937_64 rng(mix_seed(spec.seed, kEmbeddingStream));
  Tensor emb = numerics::randn({spec.vocab_size, spec.d_feat}, rng);
  for (int64_t i = 0; i < spec.vocab_size; ++i) {
    double norm = 0.0;
    for (int64_t j = 0; j < spec.d_feat; ++j) norm += emb.at(i, j) * emb.at(i, j);
    norm = std::sqrt(norm);
    for (int64_t j = 0; j < spec.d_feat; ++j) emb.at(i, j) /= norm;
  }
  return emb;
}

Corpus generate_corpus(const SyntheticSpec& spec) {
  spec.validate();
  const Tensor emb = rendering_embeddings(spec);
  const std::vector<int> mapping = token_mapping(spec);

  Corpus corpus;
  for (int64_t idx = 0; idx < spec.n_samples; ++idx) {
    std::mt19937_64 rng(mix_seed(spec.seed, kUtteranceStream + static_cast<uint64_t>(idx)));
    std::uniform_int_distribution<int64_t> n_tokens_dist(spec.tokens_per_sample_lo,
                                                         spec.tokens_per_sample_hi);
    std::uniform_int_distribution<int64_t> run_dist(spec.frames_per_token_lo,
                                                    spec.frames_per_token_hi);
    std::uniform_int_distribution<int> token_dist(0, static_cast<int>(spec.vocab_size) - 1);
    std::normal_distribution<double> noise(0.0, 1.0);

    Utterance u;
    {
      std::ostringstream os;
      os << "u" << std::setw(6) << std::setfill('0') << idx;
      u.id = os.str();
    }
    const int64_t n_tokens = n_tokens_dist(rng);
    std::vector<int64_t> runs(static_cast<size_t>(n_tokens));
    std::vector<int> content(static_cast<size_t>(n_tokens));
    int64_t total_frames = 0;
    for (int64_t i = 0; i < n_tokens; ++i) {
      content[static_cast<size_t>(i)] = token_dist(rng);
      runs[static_cast<size_t>(i)] = run_dist(rng);
      total_frames += runs[static_cast<size_t>(i)];
    }

    u.frames.frame_ms = spec.frame_ms;
    u.frames.values = Tensor({total_frames, spec.d_feat});
    int64_t t = 0;
    for (int64_t i = 0; i < n_tokens; ++i) {
      const int c = content[static_cast<size_t>(i)];
      for (int64_t r = 0; r < runs[static_cast<size_t>(i)]; ++r, ++t) {
        for (int64_t j = 0; j < spec.d_feat; ++j) {
          // quantize to f32 so the in-memory corpus equals a saved+loaded one
          u.frames.values.at(t, j) = static_cast<double>(
              static_cast<float>(emb.at(c, j) + spec.noise_std * noise(rng)));
        }
      }
      u.gold_boundaries.push_back(t);
      u.transcript.push_back(c + kNumReservedTokens);
      u.translation.push_back(mapping[static_cast<size_t>(c)]);
    }
    if (spec.reverse_target) std::reverse(u.translation.begin(), u.translation.end());

    const double split = unit_double(
        splitmix64(mix_seed(spec.seed, kSplitStream) + static_cast<uint64_t>(idx)));
    if (split < 0.05) {
      corpus.test.push_back(std::move(u));
    } else if (split < 0.10) {
      corpus.dev.push_back(std::move(u));
    } else {
      corpus.train.push_back(std::move(u));
    }
  }
  return corpus;
}

double normalize_waveform_sample(int16_t raw) { return static_cast<double>(raw) / 32768.0; }

std::vector<double> normalize_waveform(std::span<const int16_t> raw) {
  std::vector<double> out;
  out.reserve(raw.size());
  for (int16_t s : raw) out.push_back(normalize_waveform_sample(s));
  return out;
}

bool filter_pair(std::span<const int> src_tokens, std::span<const int> tgt_tokens) {
  const int64_t s = static_cast<int64_t>(src_tokens.size());
  const int64_t t = static_cast<int64_t>(tgt_tokens.size());
  if (s > kMaxTokens || t > kMaxTokens) return false;
  // ratio s/t within [2/3, 3/2], checked in integers
  if (3 * s < 2 * t) return false;
  if (2 * s > 3 * t) return false;
  return true;
}

void write_frames_file(const std::string& path, const FrameSequence& frames) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ManifestError("cannot open frames file for writing: " + path);
  const std::vector<char> bytes = frames_to_bytes(frames);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw ManifestError("write failed for frames file: " + path);
}

FrameSequence read_frames_file(const std::string& path, double frame_ms) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ManifestError("missing frames file: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return frames_from_bytes(bytes, frame_ms, path);
}

std::string frames_to_hex(const FrameSequence& frames) {
  const std::vector<char> bytes = frames_to_bytes(frames);
  return "hex:" + hex_encode(bytes);
}

FrameSequence frames_from_hex(const std::string& hex, double frame_ms) {
  const std::string body = hex.rfind("hex:", 0) == 0 ? hex.substr(4) : hex;
  const std::vector<char> bytes = hex_decode(body);
  return frames_from_bytes(bytes, frame_ms, "inline frames");
}

std::string tokens_to_string(std::span<const int> tokens) {
  std::ostringstream os;
  for (size_t i = 0; i < tokens.size(); ++i) os << (i ? " " : "") << tokens[i];
  return os.str();
}

std::vector<int> tokens_from_string(const std::string& text) {
  std::vector<int> out;
  std::istringstream is(text);
  std::string piece;
  while (is >> piece) {
    size_t pos = 0;
    const int v = std::stoi(piece, &pos);
    if (pos != piece.size()) throw ManifestError("bad token id: " + piece);
    out.push_back(v);
  }
  return out;
}

void save_manifest(const std::string& manifest_path, const std::string& frames_dir,
                   std::span<const Utterance> utterances, bool inline_frames) {
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw ManifestError("cannot open manifest for writing: " + manifest_path);
  for (const Utterance& u : utterances) {
    std::string frames_ref;
    if (inline_frames) {
      frames_ref = frames_to_hex(u.frames);
    } else {
      const std::string file = u.id + ".frames";
      write_frames_file((std::filesystem::path(frames_dir) / file).string(), u.frames);
      frames_ref = (std::filesystem::path(frames_dir).filename() / file).string();
    }
    os << u.id << '\t' << frames_ref << '\t' << tokens_to_string(u.transcript) << '\t'
       << tokens_to_string(u.translation) << '\n';
  }
  if (!os) throw ManifestError("write failed for manifest: " + manifest_path);
}

std::vector<Utterance> load_manifest(const std::string& manifest_path, double frame_ms) {
  std::ifstream is(manifest_path);
  if (!is) throw ManifestError("cannot open manifest: " + manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

  std::vector<Utterance> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 4) {
      throw ManifestError(manifest_path + ":" + std::to_string(line_no) + ": expected 4 fields, got " +
                          std::to_string(fields.size()));
    }
    Utterance u;
    u.id = fields[0];
    try {
      if (fields[1].rfind("hex:", 0) == 0) {
        u.frames = frames_from_hex(fields[1], frame_ms);
      } else {
        u.frames = read_frames_file((base / fields[1]).string(), frame_ms);
      }
      u.transcript = tokens_from_string(fields[2]);
      u.translation = tokens_from_string(fields[3]);
    } catch (const ManifestError& e) {
      throw ManifestError(manifest_path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception& e) {
      throw ManifestError(manifest_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(u));
  }
  return out;
}

void save_boundaries(const std::string& path, std::span<const Utterance> utterances) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ManifestError("cannot open boundaries file for writing: " + path);
  for (const Utterance& u : utterances) {
    os << u.id << '\t';
    for (size_t i = 0; i < u.gold_boundaries.size(); ++i) {
      os << (i ? "," : "") << u.gold_boundaries[i];
    }
    os << '\n';
  }
}

}  // namespace cifst::data
