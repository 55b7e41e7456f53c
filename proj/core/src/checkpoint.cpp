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

// Checkpoint layout (little-endian):
//   8 bytes   magic "CIFSTCK1"
//   u32       JSON header length, then that many bytes of UTF-8 JSON:
//             {"format_version": 1, "model": {...}, "run": <provenance blob>}
//   u32       parameter count, then per parameter:
//             u32 name length, name bytes, u32 rank, i64 dims..., f64 data

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cifst/model.hpp"

namespace cifst::model {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'F', 'S', 'T', 'C', 'K', '1'};
constexpr uint32_t kFormatVersion = 1;

using nlohmann::json;

json config_json(const ModelConfig& c) {
  return json{{"d_feat", c.d_feat},
              {"d_acoustic", c.d_acoustic},
              {"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_enc_layers", c.n_enc_layers},
              {"n_dec_layers", c.n_dec_layers},
              {"vocab_size", c.vocab_size},
              {"max_len", c.max_len},
              {"seed", c.seed},
              {"conv_hidden", c.conv_hidden},
              {"conv_kernel", c.conv_kernel},
              {"conv_stride1", c.conv_stride1},
              {"conv_stride2", c.conv_stride2}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.d_feat = j.at("d_feat").get<int64_t>();
  c.d_acoustic = j.at("d_acoustic").get<int64_t>();
  c.d_model = j.at("d_model").get<int64_t>();
  c.n_heads = j.at("n_heads").get<int64_t>();
  c.n_enc_layers = j.at("n_enc_layers").get<int64_t>();
  c.n_dec_layers = j.at("n_dec_layers").get<int64_t>();
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.max_len = j.at("max_len").get<int64_t>();
  c.seed = j.at("seed").get<uint64_t>();
  c.conv_hidden = j.at("conv_hidden").get<int64_t>();
  c.conv_kernel = j.at("conv_kernel").get<int64_t>();
  c.conv_stride1 = j.at("conv_stride1").get<int64_t>();
  c.conv_stride2 = j.at("conv_stride2").get<int64_t>();
  return c;
}

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  return config_from(json::parse(text));
}

void save_checkpoint(const std::string& path, const Model& model, const std::string& run_json) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");

  json header{{"format_version", kFormatVersion}, {"model", config_json(model.config())}};
  header["run"] = run_json.empty() ? json(nullptr) : json::parse(run_json);
  const std::string head = header.dump();

  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, static_cast<uint32_t>(head.size()));
  os.write(head.data(), static_cast<std::streamsize>(head.size()));

  const ParamSet& ps = model.params();
  write_pod<uint32_t>(os, static_cast<uint32_t>(ps.size()));
  for (int64_t i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.name(i);
    const numerics::Tensor& t = ps.tensor(i);
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t e : t.shape) write_pod<int64_t>(os, e);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path, LoadedCheckpoint* info) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const uint32_t head_len = read_pod<uint32_t>(is);
  std::string head(head_len, '\0');
  is.read(head.data(), head_len);
  if (!is) throw std::runtime_error("checkpoint: truncated header in " + path);
  const json header = json::parse(head);
  if (header.at("format_version").get<uint32_t>() != kFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format version");
  }

  Model model(config_from(header.at("model")));
  if (info) {
    info->config = model.config();
    info->run_json = header.at("run").is_null() ? "" : header.at("run").dump();
  }

  const uint32_t n_params = read_pod<uint32_t>(is);
  if (static_cast<int64_t>(n_params) != model.params().size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  for (uint32_t i = 0; i < n_params; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = read_pod<uint32_t>(is);
    std::vector<int64_t> shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = read_pod<int64_t>(is);

    const int64_t idx = model.params().index_of(name);
    if (idx < 0) throw std::runtime_error("checkpoint: unknown parameter " + name);
    numerics::Tensor& t = model.params().tensor(idx);
    if (t.shape != shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated data for " + name);
  }
  return model;
}

}  // namespace cifst::model
