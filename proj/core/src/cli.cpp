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

#include "cifst/cli.hpp"

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cifst/graph.hpp"

namespace cifst::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using numerics::Graph;
using numerics::Tensor;

const std::vector<int64_t> kStrideGridMs = {120, 200, 360, 400, 440, 600, 800, 1000, 40000};
const std::vector<int64_t> kLaggingGrid = {5, 7, 9, 10, 15, 20};

namespace {

json spec_to_json(const data::SyntheticSpec& s) {
  return json{{"vocab_size", s.vocab_size},
              {"n_samples", s.n_samples},
              {"frames_per_token_lo", s.frames_per_token_lo},
              {"frames_per_token_hi", s.frames_per_token_hi},
              {"tokens_per_sample_lo", s.tokens_per_sample_lo},
              {"tokens_per_sample_hi", s.tokens_per_sample_hi},
              {"d_feat", s.d_feat},
              {"noise_std", s.noise_std},
              {"frame_ms", s.frame_ms},
              {"reverse_target", s.reverse_target},
              {"seed", s.seed}};
}

data::SyntheticSpec spec_from_json(const json& j) {
  data::SyntheticSpec s;
  s.vocab_size = j.at("vocab_size").get<int64_t>();
  s.n_samples = j.at("n_samples").get<int64_t>();
  s.frames_per_token_lo = j.at("frames_per_token_lo").get<int64_t>();
  s.frames_per_token_hi = j.at("frames_per_token_hi").get<int64_t>();
  s.tokens_per_sample_lo = j.at("tokens_per_sample_lo").get<int64_t>();
  s.tokens_per_sample_hi = j.at("tokens_per_sample_hi").get<int64_t>();
  s.d_feat = j.at("d_feat").get<int64_t>();
  s.noise_std = j.at("noise_std").get<double>();
  s.frame_ms = j.at("frame_ms").get<double>();
  s.reverse_target = j.at("reverse_target").get<bool>();
  s.seed = j.at("seed").get<uint64_t>();
  return s;
}

data::SyntheticSpec load_data_spec(const std::string& data_dir) {
  const fs::path path = fs::path(data_dir) / "spec.json";
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing data spec: " + path.string());
  json j;
  is >> j;
  return spec_from_json(j);
}

std::vector<data::Utterance> load_split(const std::string& data_dir, const std::string& split,
                                        const data::SyntheticSpec& spec) {
  const fs::path manifest = fs::path(data_dir) / (split + ".tsv");
  if (!fs::exists(manifest)) {
    throw std::runtime_error("missing manifest for split '" + split + "': " + manifest.string());
  }
  return data::load_manifest(manifest.string(), spec.frame_ms);
}

json policy_to_json(const policy::PolicyConfig& p) {
  return json{{"kind", policy::policy_kind_name(p.kind)},
              {"k", p.k},
              {"stride_ms", p.stride_ms},
              {"max_len", p.max_len}};
}

}  // namespace

std::string to_json(const GenerateDataConfig& c) {
  json j{{"command", "generate-data"},
         {"spec", spec_to_json(c.spec)},
         {"out_dir", c.out_dir},
         {"inline_frames", c.inline_frames}};
  return j.dump();
}

int cmd_generate_data(const GenerateDataConfig& c, std::ostream& out) {
  c.spec.validate();
  if (c.out_dir.empty()) throw std::invalid_argument("generate-data: out_dir required");
  fs::create_directories(c.out_dir);
  const fs::path base(c.out_dir);
  const fs::path frames_dir = base / "frames";
  if (!c.inline_frames) fs::create_directories(frames_dir);

  data::Corpus corpus = data::generate_corpus(c.spec);
  {
    std::ofstream os(base / "spec.json");
    json j = spec_to_json(c.spec);
    j["resolved_config"] = json::parse(to_json(c));
    os << j.dump(2) << '\n';
  }
  const auto save = [&](const std::string& name, const std::vector<data::Utterance>& split) {
    data::save_manifest((base / (name + ".tsv")).string(), frames_dir.string(), split,
                        c.inline_frames);
    data::save_boundaries((base / (name + ".boundaries.tsv")).string(), split);
  };
  save("train", corpus.train);
  save("dev", corpus.dev);
  save("test", corpus.test);
  out << "generated " << corpus.train.size() << " train / " << corpus.dev.size() << " dev / "
      << corpus.test.size() << " test utterances in " << c.out_dir << "\n";
  return 0;
}

std::string to_json(const TrainCliConfig& c) {
  json j{{"command", "train"},
         {"data_dir", c.data_dir},
         {"out_dir", c.out_dir},
         {"d_model", c.d_model},
         {"n_heads", c.n_heads},
         {"n_enc_layers", c.n_enc_layers},
         {"n_dec_layers", c.n_dec_layers},
         {"d_acoustic", c.d_acoustic},
         {"conv_hidden", c.conv_hidden},
         {"max_len", c.max_len},
         {"seed", c.seed},
         {"max_steps", c.opts.max_steps},
         {"batch_size", c.opts.batch_size},
         {"log_every", c.opts.log_every},
         {"eval_every", c.opts.eval_every},
         {"stop_token_accuracy", c.opts.stop_token_accuracy},
         {"peak_lr", c.opts.adam.peak_lr},
         {"warmup_steps", c.opts.adam.warmup_steps},
         {"beta1", c.opts.adam.beta1},
         {"beta2", c.opts.adam.beta2}};
  return j.dump();
}

int cmd_train(const TrainCliConfig& c, std::ostream& out) {
  const data::SyntheticSpec spec = load_data_spec(c.data_dir);
  std::vector<data::Utterance> train_set = load_split(c.data_dir, "train", spec);
  std::vector<data::Utterance> dev_set;
  if (fs::exists(fs::path(c.data_dir) / "dev.tsv")) {
    dev_set = load_split(c.data_dir, "dev", spec);
  }

  model::ModelConfig mc;
  mc.d_feat = spec.d_feat;
  mc.d_model = c.d_model;
  mc.d_acoustic = c.d_acoustic > 0 ? c.d_acoustic : c.d_model + 1;
  mc.conv_hidden = c.conv_hidden;
  mc.n_heads = c.n_heads;
  mc.n_enc_layers = c.n_enc_layers;
  mc.n_dec_layers = c.n_dec_layers;
  mc.vocab_size = spec.total_vocab();
  mc.max_len = c.max_len;
  mc.seed = c.seed;
  model::Model m(mc);

  fs::create_directories(c.out_dir);
  const fs::path losses_path = fs::path(c.out_dir) / "losses.tsv";
  std::ofstream losses(losses_path);
  losses << "# config\t" << to_json(c) << '\n';
  losses << "step\tlr\tl_qua\tl_asr\tl_st\ttotal\n";
  losses.setf(std::ios::fixed);
  losses.precision(6);

  train::TrainOptions opts = c.opts;
  opts.seed = c.seed;
  const train::TrainResult result =
      train::train_model(m, train_set, dev_set, opts, [&](const train::StepLog& s) {
        losses << s.step << '\t' << s.lr << '\t' << s.l_qua << '\t' << s.l_asr << '\t' << s.l_st
               << '\t' << s.total << '\n';
        out << "step " << s.step << " lr " << s.lr << " qua " << s.l_qua << " asr " << s.l_asr
            << " st " << s.l_st << " total " << s.total << "\n";
      });

  if (result.aborted_nan) {
    const fs::path diag = fs::path(c.out_dir) / "nan_diagnostic.json";
    std::ofstream ds(diag);
    ds << result.nan_diagnostic << '\n';
    out << "training aborted on non-finite loss; diagnostic in " << diag.string() << "\n";
    return 2;
  }

  const fs::path ckpt = fs::path(c.out_dir) / "checkpoint.bin";
  model::save_checkpoint(ckpt.string(), m, to_json(c));
  out << "trained " << result.steps << " steps; checkpoint " << ckpt.string();
  if (result.final_dev_accuracy >= 0) out << " (dev token accuracy " << result.final_dev_accuracy << ")";
  out << "\n";
  return 0;
}

std::string to_json(const TranslateConfig& c) {
  json j{{"command", "translate"}, {"checkpoint", c.checkpoint}, {"data_dir", c.data_dir},
         {"split", c.split},       {"out_path", c.out_path},     {"beam", c.beam},
         {"limit", c.limit}};
  return j.dump();
}

int cmd_translate(const TranslateConfig& c, std::ostream& out) {
  model::LoadedCheckpoint info;
  const model::Model m = model::load_checkpoint(c.checkpoint, &info);
  const data::SyntheticSpec spec = load_data_spec(c.data_dir);
  std::vector<data::Utterance> split = load_split(c.data_dir, c.split, spec);
  if (c.limit > 0 && static_cast<int64_t>(split.size()) > c.limit) split.resize(c.limit);

  std::vector<std::string> hyps, refs;
  std::ostringstream rows;
  for (const data::Utterance& u : split) {
    const model::Model::Encoded enc = m.encode_offline(u.frames.values, u.frames.frame_ms);
    std::vector<int> tokens;
    if (enc.h_se.shape[0] > 0) {
      tokens = c.beam <= 1 ? m.greedy_decode(enc.h_se, kTgtIndicatorId, m.config().max_len)
                           : m.beam_decode(enc.h_se, kTgtIndicatorId, c.beam, m.config().max_len);
    }
    hyps.push_back(data::tokens_to_string(tokens));
    refs.push_back(data::tokens_to_string(u.translation));
    rows << u.id << '\t' << hyps.back() << '\n';
  }
  const double bleu = metrics::corpus_bleu_text(hyps, refs);
  if (!c.out_path.empty()) {
    std::ofstream os(c.out_path);
    os << "# config\t" << to_json(c) << '\n';
    os << rows.str();
  }
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "translated " << split.size() << " utterances, BLEU " << bleu << "\n";
  return 0;
}

std::string to_json(const SimulateConfig& c) {
  json j{{"command", "simulate"},
         {"checkpoint", c.checkpoint},
         {"data_dir", c.data_dir},
         {"split", c.split},
         {"out_dir", c.out_dir},
         {"policy", policy_to_json(c.policy)},
         {"sweep", c.sweep},
         {"threads", c.threads},
         {"limit", c.limit}};
  return j.dump();
}

metrics::SweepRow score_run(const std::string& policy_name, int64_t k, int64_t stride_ms,
                            std::span<const policy::DecisionLog> logs,
                            std::span<const std::string> references) {
  if (logs.size() != references.size()) {
    throw std::invalid_argument("score_run: log/reference count mismatch");
  }
  std::vector<metrics::DelayVector> vectors;
  std::vector<std::string> hyps;
  for (size_t i = 0; i < logs.size(); ++i) {
    metrics::DelayVector v;
    for (int64_t d : logs[i].delays()) v.delays.push_back(static_cast<double>(d));
    v.total_source_ms = static_cast<double>(logs[i].total_source_ms);
    v.ref_len = static_cast<int64_t>(data::tokens_from_string(references[i]).size());
    vectors.push_back(std::move(v));
    hyps.push_back(data::tokens_to_string(logs[i].written_tokens()));
  }
  const metrics::LatencyReport lat = metrics::mean_latency(vectors);
  metrics::SweepRow row;
  row.policy = policy_name;
  row.k = k;
  row.stride_ms = stride_ms;
  row.bleu = metrics::corpus_bleu_text(hyps, std::vector<std::string>(references.begin(),
                                                                      references.end()));
  row.al = lat.al;
  row.ap = lat.ap;
  row.dal = lat.dal;
  return row;
}

namespace {

std::vector<policy::DecisionLog> run_policy_over_split(
    const model::Model& m, const std::vector<data::Utterance>& split,
    const policy::PolicyConfig& pc, int64_t threads) {
  std::vector<policy::DecisionLog> logs(split.size());
  const auto run_range = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      logs[i] = policy::run_policy(m, split[i].frames, pc, split[i].id,
                                   data::tokens_to_string(split[i].translation))
                    .log;
    }
  };
  if (threads <= 1 || split.size() < 2) {
    run_range(0, split.size());
    return logs;
  }
  const size_t n_workers = std::min<size_t>(static_cast<size_t>(threads), split.size());
  std::vector<std::future<void>> futures;
  const size_t chunk = (split.size() + n_workers - 1) / n_workers;
  for (size_t w = 0; w < n_workers; ++w) {
    const size_t lo = w * chunk;
    const size_t hi = std::min(split.size(), lo + chunk);
    if (lo >= hi) break;
    futures.push_back(std::async(std::launch::async, run_range, lo, hi));
  }
  for (auto& f : futures) f.get();
  return logs;
}

}  // namespace

int cmd_simulate(const SimulateConfig& c, std::ostream& out) {
  const data::SyntheticSpec spec = load_data_spec(c.data_dir);
  c.policy.validate(spec.frame_ms);  // fail before the model load
  if (!c.sweep.empty() && c.sweep != "strides" && c.sweep != "k") {
    throw std::invalid_argument("simulate: sweep must be empty, 'strides' or 'k'");
  }
  if (!c.sweep.empty() && c.policy.kind == policy::PolicyKind::kOffline) {
    throw std::invalid_argument("simulate: sweep needs a streaming policy");
  }

  const model::Model m = model::load_checkpoint(c.checkpoint);
  std::vector<data::Utterance> split = load_split(c.data_dir, c.split, spec);
  if (c.limit > 0 && static_cast<int64_t>(split.size()) > c.limit) split.resize(c.limit);
  if (split.empty()) throw std::runtime_error("simulate: empty split");

  std::vector<std::string> refs;
  for (const auto& u : split) refs.push_back(data::tokens_to_string(u.translation));

  std::vector<policy::PolicyConfig> points;
  if (c.sweep == "strides") {
    for (int64_t s : kStrideGridMs) {
      policy::PolicyConfig pc = c.policy;
      pc.stride_ms = s;
      points.push_back(pc);
    }
  } else if (c.sweep == "k") {
    for (int64_t k : kLaggingGrid) {
      policy::PolicyConfig pc = c.policy;
      pc.k = k;
      points.push_back(pc);
    }
  } else {
    points.push_back(c.policy);
  }

  fs::create_directories(c.out_dir);
  std::vector<metrics::SweepRow> rows;
  for (size_t pi = 0; pi < points.size(); ++pi) {
    const policy::PolicyConfig& pc = points[pi];
    const std::vector<policy::DecisionLog> logs = run_policy_over_split(m, split, pc, c.threads);

    json run_meta = json::parse(to_json(c));
    run_meta["policy"] = policy_to_json(pc);
    std::string logs_name = "logs.tsv";
    if (points.size() > 1) logs_name = "logs." + std::to_string(pi) + ".tsv";
    policy::write_decision_logs_file((fs::path(c.out_dir) / logs_name).string(), logs,
                                     run_meta.dump());
    rows.push_back(score_run(policy::policy_kind_name(pc.kind), pc.k, pc.stride_ms, logs, refs));
  }

  const std::string report = metrics::format_report(rows, to_json(c));
  {
    std::ofstream os(fs::path(c.out_dir) / "report.tsv");
    os << report;
  }
  out << report;
  return 0;
}

std::string to_json(const ScoreConfig& c) {
  json j{{"command", "score"},
         {"logs_path", c.logs_path},
         {"refs_manifest", c.refs_manifest},
         {"out_path", c.out_path}};
  return j.dump();
}

int cmd_score(const ScoreConfig& c, std::ostream& out) {
  const std::vector<policy::DecisionLog> logs = policy::parse_decision_logs_file(c.logs_path);
  if (logs.empty()) throw std::runtime_error("score: no decision logs in " + c.logs_path);

  // Recover the generating policy from the embedded config when present.
  std::string policy_name = "scored";
  int64_t k = 0, stride_ms = 0;
  {
    std::ifstream is(c.logs_path);
    std::string first;
    std::getline(is, first);
    const std::string prefix = "# config\t";
    if (first.rfind(prefix, 0) == 0) {
      const json j = json::parse(first.substr(prefix.size()));
      if (j.contains("policy")) {
        policy_name = j["policy"]["kind"].get<std::string>();
        k = j["policy"]["k"].get<int64_t>();
        stride_ms = j["policy"]["stride_ms"].get<int64_t>();
      }
    }
  }

  std::vector<std::string> refs;
  if (!c.refs_manifest.empty()) {
    // frame payloads are irrelevant for scoring; frame_ms=1 keeps loading valid
    const std::vector<data::Utterance> utts = data::load_manifest(c.refs_manifest, 1.0);
    std::map<std::string, std::string> by_id;
    for (const auto& u : utts) by_id[u.id] = data::tokens_to_string(u.translation);
    std::vector<std::string> missing;
    for (const auto& log : logs) {
      const auto it = by_id.find(log.utt_id);
      if (it == by_id.end()) {
        missing.push_back(log.utt_id);
      } else {
        refs.push_back(it->second);
      }
    }
    if (!missing.empty()) {
      std::string ids;
      for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
      throw std::runtime_error("score: log ids missing from references: " + ids);
    }
  } else {
    for (const auto& log : logs) refs.push_back(log.reference_text);
  }

  const metrics::SweepRow row = score_run(policy_name, k, stride_ms, logs, refs);
  const std::string report = metrics::format_report(std::vector<metrics::SweepRow>{row},
                                                    to_json(c));
  if (!c.out_path.empty()) {
    std::ofstream os(c.out_path);
    os << report;
  }
  out << report;
  return 0;
}

std::string to_json(const GradCheckConfig& c) {
  json j{{"command", "grad-check"}, {"seed", c.seed}, {"h", c.h}};
  return j.dump();
}

int cmd_grad_check(const GradCheckConfig& c, std::ostream& out) {
  using numerics::finite_difference_check;
  using numerics::FdReport;
  std::mt19937_64 rng(c.seed);
  bool all_ok = true;
  out.setf(std::ios::scientific);
  out.precision(3);

  const auto check = [&](const std::string& name, double err, double tol) {
    const bool ok = err <= tol;
    all_ok = all_ok && ok;
    out << (ok ? "[ok]   " : "[FAIL] ") << name << "  max-rel-err " << err << "  (tol " << tol
        << ")\n";
  };

  // Primitive sweep: scalar loss = sum of each op over random inputs.
  const auto fd_for = [&](const std::function<numerics::Value(Graph&, numerics::Value)>& build,
                          Tensor x) {
    Graph g;
    x.requires_grad = true;
    numerics::Value leaf = g.leaf(x);
    numerics::Value loss = g.sum(build(g, leaf));
    g.backward(loss);
    const std::vector<double> analytic = leaf.t().grad;
    const auto f = [&](const Tensor& probe) {
      Graph g2;
      numerics::Value l2 = g2.leaf(probe);
      return g2.sum(build(g2, l2)).item();
    };
    return finite_difference_check(f, x, analytic, c.h).max_rel_err;
  };

  Tensor m34 = numerics::rand_uniform({3, 4}, rng, -1.0, 1.0);
  Tensor m43 = numerics::rand_uniform({4, 3}, rng, -1.0, 1.0);
  check("sigmoid", fd_for([](Graph& g, numerics::Value v) { return g.sigmoid(v); }, m34), 1e-4);
  check("gelu", fd_for([](Graph& g, numerics::Value v) { return g.gelu(v); }, m34), 1e-4);
  check("softmax_rows",
        fd_for([](Graph& g, numerics::Value v) { return g.softmax_rows(v); }, m34), 1e-4);
  check("matmul",
        fd_for([&](Graph& g, numerics::Value v) { return g.matmul(v, g.constant(m43)); }, m34),
        1e-4);
  check("mul",
        fd_for([&](Graph& g, numerics::Value v) { return g.mul(v, g.constant(m34)); }, m34),
        1e-4);
  check("layer_norm",
        fd_for(
            [&](Graph& g, numerics::Value v) {
              return g.layer_norm(v, g.constant(Tensor({4}, 1.0)), g.constant(Tensor({4})));
            },
            m34),
        1e-4);
  check("cumsum",
        fd_for([](Graph& g, numerics::Value v) { return g.cumsum(v); },
               numerics::rand_uniform({7}, rng, -1.0, 1.0)),
        1e-4);

  // CIF quantity loss against the encoder states of a 5-frame input.
  {
    Tensor states = numerics::rand_uniform({5, 4}, rng, -1.0, 1.0);
    states.requires_grad = true;
    Graph g;
    numerics::Value leaf = g.leaf(states);
    const cif::CifGraphOut cif_out = cif::cif_forward_train(g, leaf, 2);
    numerics::Value loss = g.abs(g.add_const(g.scale(cif_out.n_hat, -1.0), 2.0));
    g.backward(loss);
    const std::vector<double> analytic = leaf.t().grad;
    const auto f = [&](const Tensor& probe) {
      Graph g2;
      numerics::Value l2 = g2.leaf(probe);
      const cif::CifGraphOut o2 = cif::cif_forward_train(g2, l2, 2);
      return g2.abs(g2.add_const(g2.scale(o2.n_hat, -1.0), 2.0)).item();
    };
    check("cif_quantity_loss", finite_difference_check(f, states, analytic, c.h).max_rel_err,
          1e-3);
  }

  // End-to-end joint loss on a tiny model and batch.
  {
    model::ModelConfig mc;
    mc.d_feat = 6;
    mc.d_acoustic = 17;
    mc.d_model = 16;
    mc.n_heads = 4;
    mc.n_enc_layers = 1;
    mc.n_dec_layers = 1;
    mc.vocab_size = 12;
    mc.max_len = 16;
    mc.seed = c.seed;
    model::Model m(mc);

    data::SyntheticSpec spec;
    spec.vocab_size = mc.vocab_size - kNumReservedTokens;
    spec.n_samples = 40;
    spec.frames_per_token_lo = 2;
    spec.frames_per_token_hi = 3;
    spec.tokens_per_sample_lo = 2;
    spec.tokens_per_sample_hi = 3;
    spec.d_feat = mc.d_feat;
    spec.seed = c.seed;
    const data::Corpus corpus = data::generate_corpus(spec);
    const model::Batch batch = train::make_batch(
        std::span<const data::Utterance>(corpus.train.data(), 2));
    const train::GradCheckReport r = train::joint_gradient_check(m, batch, std::max(c.h, 1e-4));
    check("joint_loss_end_to_end (worst: " + r.worst_param + ")", r.max_rel_err, 1e-3);
  }

  out << (all_ok ? "grad-check: all checks passed\n" : "grad-check: FAILURES\n");
  return all_ok ? 0 : 1;
}

}  // namespace cifst::cli
