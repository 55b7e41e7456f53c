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

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <doctest.h>

#include "cifst/data.hpp"

using namespace cifst;
using data::Corpus;
using data::SyntheticSpec;
using data::Utterance;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() /
                   ("cifst_data_test_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter()++))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string corpus_fingerprint(const Corpus& c) {
  std::string s;
  const auto add = [&](const std::vector<Utterance>& split) {
    for (const Utterance& u : split) {
      s += u.id + "|" + data::tokens_to_string(u.transcript) + "|" +
           data::tokens_to_string(u.translation) + "|";
      for (int64_t b : u.gold_boundaries) s += std::to_string(b) + ",";
      s += "|" + data::frames_to_hex(u.frames) + "\n";
    }
  };
  add(c.train);
  add(c.dev);
  add(c.test);
  return s;
}

}  // namespace

TEST_CASE("generation is deterministic: identical spec gives identical bytes") {
  SyntheticSpec spec;
  spec.vocab_size = 12;
  spec.n_samples = 60;
  spec.seed = 7;
  const Corpus a = data::generate_corpus(spec);
  const Corpus b = data::generate_corpus(spec);
  CHECK(corpus_fingerprint(a) == corpus_fingerprint(b));
  CHECK(a.train.size() + a.dev.size() + a.test.size() == 60);

  SyntheticSpec other = spec;
  other.seed = 8;
  CHECK(corpus_fingerprint(data::generate_corpus(other)) != corpus_fingerprint(a));
}

TEST_CASE("noise-free single-frame rendering reproduces the embedding rows") {
  SyntheticSpec spec;
  spec.vocab_size = 6;
  spec.n_samples = 10;
  spec.noise_std = 0.0;
  spec.frames_per_token_lo = 1;
  spec.frames_per_token_hi = 1;
  spec.seed = 3;
  const numerics::Tensor emb = data::rendering_embeddings(spec);
  const Corpus c = data::generate_corpus(spec);
  REQUIRE_FALSE(c.train.empty());
  for (const Utterance& u : c.train) {
    REQUIRE(u.frames.length() == static_cast<int64_t>(u.transcript.size()));
    for (size_t i = 0; i < u.transcript.size(); ++i) {
      const int content = u.transcript[i] - kNumReservedTokens;
      for (int64_t j = 0; j < spec.d_feat; ++j) {
        // frames carry f32 payloads; compare at f32 resolution
        CHECK(u.frames.values.at(static_cast<int64_t>(i), j) ==
              static_cast<double>(static_cast<float>(emb.at(content, j))));
      }
    }
  }
}

TEST_CASE("boundaries partition the frames and match the run lengths") {
  SyntheticSpec spec;
  spec.vocab_size = 10;
  spec.n_samples = 40;
  spec.frames_per_token_lo = 2;
  spec.frames_per_token_hi = 8;
  spec.tokens_per_sample_lo = 3;
  spec.tokens_per_sample_hi = 3;
  spec.seed = 11;
  const Corpus c = data::generate_corpus(spec);
  for (const Utterance& u : c.train) {
    REQUIRE(u.gold_boundaries.size() == u.transcript.size());
    CHECK(u.frames.length() >= 6);
    CHECK(u.frames.length() <= 24);
    int64_t prev = 0;
    for (int64_t b : u.gold_boundaries) {
      CHECK(b > prev);
      const int64_t run = b - prev;
      CHECK(run >= spec.frames_per_token_lo);
      CHECK(run <= spec.frames_per_token_hi);
      prev = b;
    }
    CHECK(prev == u.frames.length());
  }
}

TEST_CASE("the token mapping is a permutation of the content vocabulary") {
  SyntheticSpec spec;
  spec.vocab_size = 25;
  spec.seed = 5;
  const std::vector<int> mapping = data::token_mapping(spec);
  REQUIRE(static_cast<int64_t>(mapping.size()) == spec.vocab_size);
  std::vector<bool> seen(static_cast<size_t>(spec.total_vocab()), false);
  for (int m : mapping) {
    REQUIRE(m >= kNumReservedTokens);
    REQUIRE(m < spec.total_vocab());
    CHECK_FALSE(seen[static_cast<size_t>(m)]);
    seen[static_cast<size_t>(m)] = true;
  }
}

TEST_CASE("waveform normalization hits the exact rational values") {
  CHECK(data::normalize_waveform_sample(-32768) == -1.0);
  CHECK(data::normalize_waveform_sample(0) == 0.0);
  CHECK(data::normalize_waveform_sample(32767) == 0.999969482421875);
  const std::vector<int16_t> raw = {-32768, 0, 16384, 32767};
  const std::vector<double> n = data::normalize_waveform(raw);
  CHECK(n[2] == 0.5);
  for (double v : n) {
    CHECK(v >= -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("length/ratio filter matches the preprocessing rules") {
  const auto tok = [](int n) { return std::vector<int>(static_cast<size_t>(n), 5); };
  CHECK_FALSE(data::filter_pair(tok(9), tok(4)));   // ratio 2.25
  CHECK(data::filter_pair(tok(10), tok(10)));
  CHECK_FALSE(data::filter_pair(tok(251), tok(200)));  // length cap
  CHECK(data::filter_pair(tok(3), tok(2)));   // exactly 3/2
  CHECK(data::filter_pair(tok(2), tok(3)));   // exactly 2/3
  CHECK_FALSE(data::filter_pair(tok(2), tok(4)));  // 0.5 below 2/3
  CHECK(data::filter_pair(tok(250), tok(250)));

  // idempotence: a surviving corpus survives a second pass untouched
  SyntheticSpec spec;
  spec.vocab_size = 10;
  spec.n_samples = 50;
  spec.seed = 13;
  const Corpus c = data::generate_corpus(spec);
  for (const Utterance& u : c.train) {
    if (data::filter_pair(u.transcript, u.translation)) {
      CHECK(data::filter_pair(u.transcript, u.translation));
    }
  }
}

TEST_CASE("frames files and inline hex round-trip bit-exactly") {
  SyntheticSpec spec;
  spec.vocab_size = 6;
  spec.n_samples = 6;
  spec.seed = 17;
  const Corpus c = data::generate_corpus(spec);
  REQUIRE_FALSE(c.train.empty());
  const Utterance& u = c.train.front();

  TempDir tmp;
  const std::string path = (tmp.path / "x.frames").string();
  data::write_frames_file(path, u.frames);
  const data::FrameSequence back = data::read_frames_file(path, spec.frame_ms);
  REQUIRE(back.values.shape == u.frames.values.shape);
  for (size_t i = 0; i < back.values.data.size(); ++i) {
    CHECK(back.values.data[i] == u.frames.values.data[i]);  // f32 payload both ways
  }

  const std::string hex = data::frames_to_hex(u.frames);
  const data::FrameSequence back2 = data::frames_from_hex(hex, spec.frame_ms);
  CHECK(back2.values.data == back.values.data);
  CHECK(data::frames_to_hex(back2) == hex);
}

TEST_CASE("manifests round-trip through save and load") {
  SyntheticSpec spec;
  spec.vocab_size = 8;
  spec.n_samples = 20;
  spec.seed = 19;
  const Corpus c = data::generate_corpus(spec);
  REQUIRE(c.train.size() > 2);

  for (const bool inline_frames : {false, true}) {
    CAPTURE(inline_frames);
    TempDir tmp;
    const std::string manifest = (tmp.path / "train.tsv").string();
    fs::create_directories(tmp.path / "frames");
    data::save_manifest(manifest, (tmp.path / "frames").string(), c.train, inline_frames);
    const std::vector<Utterance> loaded = data::load_manifest(manifest, spec.frame_ms);
    REQUIRE(loaded.size() == c.train.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
      CHECK(loaded[i].id == c.train[i].id);
      CHECK(loaded[i].transcript == c.train[i].transcript);
      CHECK(loaded[i].translation == c.train[i].translation);
      CHECK(loaded[i].frames.values.data == c.train[i].frames.values.data);
    }
  }
}

TEST_CASE("manifest errors carry line numbers and file names") {
  TempDir tmp;
  SUBCASE("empty file loads as an empty stream") {
    const std::string path = (tmp.path / "empty.tsv").string();
    std::ofstream(path).close();
    CHECK(data::load_manifest(path, 40.0).empty());
  }
  SUBCASE("a three-field line is rejected with its line number") {
    const std::string path = (tmp.path / "bad.tsv").string();
    std::ofstream os(path);
    os << "u1\thex:0100000001000000cdcc4c3e\t6 7\t8\n";
    os << "u2\thex:deadbeef\t6\n";  // 3 fields
    os.close();
    try {
      data::load_manifest(path, 40.0);
      FAIL("expected ManifestError");
    } catch (const data::ManifestError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(":2") != std::string::npos);
      CHECK(msg.find("got 3") != std::string::npos);
    }
  }
  SUBCASE("a missing frames file is named in the error") {
    const std::string path = (tmp.path / "missing.tsv").string();
    std::ofstream os(path);
    os << "u1\tnope/void.frames\t6\t7\n";
    os.close();
    try {
      data::load_manifest(path, 40.0);
      FAIL("expected ManifestError");
    } catch (const data::ManifestError& e) {
      CHECK(std::string(e.what()).find("void.frames") != std::string::npos);
    }
  }
}

TEST_CASE("splits are disjoint and roughly sized by the hash fractions") {
  SyntheticSpec spec;
  spec.vocab_size = 10;
  spec.n_samples = 2000;
  spec.seed = 23;
  const Corpus c = data::generate_corpus(spec);
  CHECK(c.train.size() + c.dev.size() + c.test.size() == 2000);
  CHECK(c.train.size() > 1700);
  CHECK(c.dev.size() > 50);
  CHECK(c.test.size() > 50);
  std::set<std::string> ids;
  for (const auto* split : {&c.train, &c.dev, &c.test}) {
    for (const Utterance& u : *split) {
      CHECK(ids.insert(u.id).second);  // no id appears twice
    }
  }
}
