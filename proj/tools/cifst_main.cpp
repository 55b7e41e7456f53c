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

#include <iostream>

#include <CLI11.hpp>

#include "cifst/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"cifst: streaming and offline speech-to-text translation on synthetic corpora"};
  app.require_subcommand(1);

  using namespace cifst;

  // generate-data
  cli::GenerateDataConfig gen;
  CLI::App* sc_gen = app.add_subcommand("generate-data", "Generate a synthetic corpus");
  sc_gen->add_option("--out", gen.out_dir, "Output directory")->required();
  sc_gen->add_option("--vocab-size", gen.spec.vocab_size, "Content vocabulary size");
  sc_gen->add_option("--n-samples", gen.spec.n_samples, "Total utterances before splitting");
  sc_gen->add_option("--frames-per-token-lo", gen.spec.frames_per_token_lo, "Min frames per token");
  sc_gen->add_option("--frames-per-token-hi", gen.spec.frames_per_token_hi, "Max frames per token");
  sc_gen->add_option("--tokens-lo", gen.spec.tokens_per_sample_lo, "Min tokens per utterance");
  sc_gen->add_option("--tokens-hi", gen.spec.tokens_per_sample_hi, "Max tokens per utterance");
  sc_gen->add_option("--d-feat", gen.spec.d_feat, "Frame feature dimension");
  sc_gen->add_option("--noise-std", gen.spec.noise_std, "Rendering noise stddev");
  sc_gen->add_option("--frame-ms", gen.spec.frame_ms, "Frame duration in ms");
  sc_gen->add_flag("--reverse-target", gen.spec.reverse_target, "Reverse target token order");
  sc_gen->add_option("--seed", gen.spec.seed, "Generation seed");
  sc_gen->add_flag("--inline-frames", gen.inline_frames, "Embed frames as hex in the manifest");

  // train
  cli::TrainCliConfig tr;
  CLI::App* sc_train = app.add_subcommand("train", "Train the joint model");
  sc_train->add_option("--data", tr.data_dir, "Corpus directory")->required();
  sc_train->add_option("--out", tr.out_dir, "Output directory")->required();
  sc_train->add_option("--d-model", tr.d_model, "Transformer width");
  sc_train->add_option("--n-heads", tr.n_heads, "Attention heads");
  sc_train->add_option("--enc-layers", tr.n_enc_layers, "Semantic encoder layers");
  sc_train->add_option("--dec-layers", tr.n_dec_layers, "Decoder layers");
  sc_train->add_option("--d-acoustic", tr.d_acoustic, "Acoustic state width (0: d_model+1)");
  sc_train->add_option("--max-len", tr.max_len, "Decode length cap");
  sc_train->add_option("--seed", tr.seed, "Training seed");
  sc_train->add_option("--steps", tr.opts.max_steps, "Max optimizer steps");
  sc_train->add_option("--batch-size", tr.opts.batch_size, "Utterances per step");
  sc_train->add_option("--log-every", tr.opts.log_every, "Step logging period");
  sc_train->add_option("--eval-every", tr.opts.eval_every, "Dev evaluation period (0: off)");
  sc_train->add_option("--stop-token-accuracy", tr.opts.stop_token_accuracy,
                       "Early stop once dev accuracy reaches this");
  sc_train->add_option("--peak-lr", tr.opts.adam.peak_lr, "Peak learning rate");
  sc_train->add_option("--warmup-steps", tr.opts.adam.warmup_steps, "LR warmup steps");

  // translate
  cli::TranslateConfig tl;
  CLI::App* sc_tl = app.add_subcommand("translate", "Offline decoding of a split");
  sc_tl->add_option("--checkpoint", tl.checkpoint, "Checkpoint file")->required();
  sc_tl->add_option("--data", tl.data_dir, "Corpus directory")->required();
  sc_tl->add_option("--split", tl.split, "Split name (train/dev/test)");
  sc_tl->add_option("--out", tl.out_path, "Hypotheses TSV path");
  sc_tl->add_option("--beam", tl.beam, "Beam size (1: greedy)");
  sc_tl->add_option("--limit", tl.limit, "Max utterances");

  // simulate
  cli::SimulateConfig sim;
  std::string policy_name = "offline";
  CLI::App* sc_sim = app.add_subcommand("simulate", "Run a streaming policy over a split");
  sc_sim->add_option("--checkpoint", sim.checkpoint, "Checkpoint file")->required();
  sc_sim->add_option("--data", sim.data_dir, "Corpus directory")->required();
  sc_sim->add_option("--split", sim.split, "Split name");
  sc_sim->add_option("--out", sim.out_dir, "Output directory")->required();
  sc_sim->add_option("--policy", policy_name, "offline | prefix | adaptive");
  sc_sim->add_option("--k", sim.policy.k, "Wait lagging");
  sc_sim->add_option("--stride-ms", sim.policy.stride_ms, "READ stride in ms");
  sc_sim->add_option("--max-len", sim.policy.max_len, "Decode length cap");
  sc_sim->add_option("--sweep", sim.sweep, "Grid sweep: 'strides' or 'k'");
  sc_sim->add_option("--threads", sim.threads, "Parallel utterance workers");
  sc_sim->add_option("--limit", sim.limit, "Max utterances");

  // score
  cli::ScoreConfig sco;
  CLI::App* sc_sco = app.add_subcommand("score", "Score existing decision logs");
  sc_sco->add_option("--logs", sco.logs_path, "Decision log file")->required();
  sc_sco->add_option("--refs", sco.refs_manifest, "Reference manifest (optional)");
  sc_sco->add_option("--out", sco.out_path, "Report TSV path");

  // grad-check
  cli::GradCheckConfig gc;
  CLI::App* sc_gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  sc_gc->add_option("--seed", gc.seed, "Seed");
  sc_gc->add_option("--h", gc.h, "Probe step");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc_gen->parsed()) return cli::cmd_generate_data(gen, std::cout);
    if (sc_train->parsed()) return cli::cmd_train(tr, std::cout);
    if (sc_tl->parsed()) return cli::cmd_translate(tl, std::cout);
    if (sc_sim->parsed()) {
      sim.policy.kind = cifst::policy::policy_kind_from_name(policy_name);
      return cli::cmd_simulate(sim, std::cout);
    }
    if (sc_sco->parsed()) return cli::cmd_score(sco, std::cout);
    if (sc_gc->parsed()) return cli::cmd_grad_check(gc, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
