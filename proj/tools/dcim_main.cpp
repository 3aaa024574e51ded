// Copyright 2026 DCIM-AVSR Authors
// Command-line workbench: corpora, training stages, sweeps, verification
//
// Licensed under the Apache License, Version 2.0

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dcim/run_config.hpp"
#include "dcim/verify.hpp"

namespace {

using namespace dcim;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerifyFail = 2;
constexpr int kExitDiverged = 3;

int cmd_synth(const std::string& config_path, const std::vector<std::string>& sets, const std::string& out_dir,
              int n) {
  RunConfig cfg = RunConfig::load(config_path, sets);
  echo_resolved(cfg, out_dir);
  std::vector<Utterance> corpus = generate_corpus(cfg.synth, n);
  write_corpus(out_dir, corpus, cfg.synth.sample_rate);
  std::printf("wrote %d utterances to %s\n", n, out_dir.c_str());
  if (cfg.synth.vocab_size <= 16) {
    const double acc = token_separability(cfg.synth, cfg.model.audio, std::min(n, 20));
    std::printf("token separability audit (clean 1-NN on mel means): %.1f%%\n", 100.0 * acc);
    if (acc < 1.0) std::fprintf(stderr, "warning: tokens are not cleanly separable, training may stall\n");
  }
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets, const std::string& out_dir) {
  RunConfig cfg = RunConfig::load(config_path, sets);
  echo_resolved(cfg, out_dir);
  set_precision(cfg.precision());
  if (cfg.train_corpus.empty()) throw std::runtime_error("train: config needs train.corpus");
  std::vector<Utterance> train_set = load_corpus(cfg.train_corpus);
  std::vector<Utterance> eval_set;
  if (!cfg.train_eval_corpus.empty()) eval_set = load_corpus(cfg.train_eval_corpus);

  const ModelKind kind = model_kind_from(cfg.train_stage);
  Model model = Model::build(cfg.model, kind, cfg.train_seed);
  std::printf("built %s model, %lld parameters\n", cfg.train_stage.c_str(),
              static_cast<long long>(model.param_count()));

  StageResult result = run_stage(model, cfg.stage_plan(), cfg.opt_config(), train_set,
                                 eval_set.empty() ? nullptr : &eval_set, out_dir);
  for (const EpochMetrics& h : result.history) {
    std::printf("epoch %4d  loss %9.4f  train_wer %6.3f  eval_wer %6.3f  lr %.5f\n", h.epoch, h.loss, h.train_wer,
                h.eval_wer, h.lr);
  }
  if (result.diverged) {
    std::fprintf(stderr, "training diverged; last good checkpoint: %s\n",
                 result.checkpoint_path.empty() ? "(none)" : result.checkpoint_path.c_str());
    return kExitDiverged;
  }
  std::printf("checkpoint: %s\nmetrics: %s/metrics.csv\n", result.checkpoint_path.c_str(), out_dir.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& corpus_dir, std::optional<double> snr,
             const std::string& hyp_path, uint64_t seed) {
  Model model = Model::load(ckpt);
  std::vector<Utterance> corpus = load_corpus(corpus_dir);
  std::vector<LabelSequence> hyps;
  const double w = evaluate_wer(model, corpus, snr, seed, &hyps);
  std::ofstream hf(hyp_path);
  if (!hf) throw std::runtime_error("eval: cannot write " + hyp_path);
  for (size_t i = 0; i < corpus.size(); ++i) {
    hf << corpus[i].id;
    for (int t : hyps[i]) hf << " " << t;
    hf << "\n";
  }
  if (snr) {
    std::printf("WER %.4f  (%zu utterances, SNR %+.1f dB)\n", w, corpus.size(), *snr);
  } else {
    std::printf("WER %.4f  (%zu utterances, clean)\n", w, corpus.size());
  }
  std::printf("hypotheses: %s\n", hyp_path.c_str());
  return kExitOk;
}

int cmd_noise_sweep(const std::string& ckpt_av, const std::string& ckpt_a, const std::string& corpus_dir,
                    const std::string& out_csv, uint64_t seed) {
  Model av = Model::load(ckpt_av);
  Model audio = Model::load(ckpt_a);
  if (av.kind() != ModelKind::avsr) throw std::runtime_error("noise-sweep: --ckpt-av must hold an avsr model");
  if (audio.kind() != ModelKind::asr) throw std::runtime_error("noise-sweep: --ckpt-a must hold an asr model");
  std::vector<Utterance> corpus = load_corpus(corpus_dir);

  std::ofstream csv(out_csv);
  if (!csv) throw std::runtime_error("noise-sweep: cannot write " + out_csv);
  csv << "snr,wer_audio_only,wer_av\n";
  for (double snr : snr_grid()) {
    const double wer_a = evaluate_wer(audio, corpus, snr, seed);
    const double wer_av = evaluate_wer(av, corpus, snr, seed);
    csv << snr << "," << wer_a << "," << wer_av << "\n";
    std::printf("snr %+5.1f dB   audio-only %.4f   audio-visual %.4f\n", snr, wer_a, wer_av);
  }
  std::printf("sweep written to %s\n", out_csv.c_str());
  return kExitOk;
}

DCIMMode mode_from_name(const std::string& name) {
  DCIMMode mode;  // dual / all layers / both adapter paths
  if (name == "dual") return mode;
  if (name == "v2a") {
    mode.direction = FusionDirection::v_to_a;
  } else if (name == "a2v") {
    mode.direction = FusionDirection::a_to_v;
  } else if (name == "no-purify") {
    mode.purification_on = false;
  } else if (name == "no-complete") {
    mode.completion_on = false;
  } else if (name == "last2") {
    mode.layers = DcimLayerSpan::last_two;
  } else {
    throw std::runtime_error("ablate: unknown mode '" + name + "'");
  }
  return mode;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& sets, const std::string& modes_csv,
               const std::string& out_csv, double eval_snr) {
  RunConfig cfg = RunConfig::load(config_path, sets);
  const std::string out_dir = std::filesystem::path(out_csv).parent_path().string();
  echo_resolved(cfg, out_dir.empty() ? "." : out_dir);
  set_precision(cfg.precision());
  if (cfg.train_corpus.empty() || cfg.train_eval_corpus.empty()) {
    throw std::runtime_error("ablate: config needs train.corpus and train.eval_corpus");
  }
  std::vector<Utterance> train_set = load_corpus(cfg.train_corpus);
  std::vector<Utterance> eval_set = load_corpus(cfg.train_eval_corpus);

  std::vector<std::string> modes;
  std::stringstream ss(modes_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) modes.push_back(item);
  }

  std::ofstream csv(out_csv);
  if (!csv) throw std::runtime_error("ablate: cannot write " + out_csv);
  csv << "mode,eval_wer\n";
  for (const std::string& name : modes) {
    ModelConfig mc = cfg.model;
    mc.dcim_mode = mode_from_name(name);
    Model model = Model::build(mc, ModelKind::avsr, cfg.train_seed);
    StagePlan plan = cfg.stage_plan();
    plan.stage = ModelKind::avsr;
    StageResult r = run_stage(model, plan, cfg.opt_config(), train_set, &eval_set, "");
    if (r.diverged) {
      std::fprintf(stderr, "ablate: mode %s diverged\n", name.c_str());
      return kExitDiverged;
    }
    const double w = evaluate_wer(model, eval_set, eval_snr, 42);
    csv << name << "," << w << "\n";
    csv.flush();
    std::printf("mode %-12s eval WER @ %+.0f dB: %.4f\n", name.c_str(), eval_snr, w);
  }
  std::printf("ablation table written to %s\n", out_csv.c_str());
  return kExitOk;
}

int cmd_verify() {
  VerifyReport report = run_verification();
  for (const VerifyCheck& c : report.checks) {
    std::printf("%-28s %s  (%s)\n", c.name.c_str(), c.pass ? "PASS" : "FAIL", c.detail.c_str());
  }
  return report.all_pass() ? kExitOk : kExitVerifyFail;
}

int cmd_param_count(const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig cfg = RunConfig::load(config_path, sets);
  for (ModelKind kind : {ModelKind::asr, ModelKind::vsr, ModelKind::avsr}) {
    Model model = Model::build(cfg.model, kind, 1);
    std::printf("%s:\n", to_string(kind).c_str());
    for (const auto& [module, count] : model.param_count_by_module()) {
      std::printf("  %-18s %12lld\n", module.c_str(), static_cast<long long>(count));
    }
    std::printf("  %-18s %12lld\n", "total", static_cast<long long>(model.param_count()));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale audio-visual speech recognition workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run", out_csv, corpus_dir, ckpt, ckpt_av, ckpt_a, hyp_path = "hyps.txt";
  std::string stage, init_asr, init_vsr;
  std::string modes = "dual,v2a,a2v,no-purify,no-complete,last2";
  std::vector<std::string> sets;
  int n_utts = 32;
  double snr = 0.0;
  double eval_snr = 0.0;
  uint64_t seed = 1;

  CLI::App* synth = app.add_subcommand("synth", "generate a paired audio-visual corpus");
  synth->add_option("--spec,--config", config_path, "config file");
  synth->add_option("--out", out_dir, "output corpus directory")->required();
  synth->add_option("--n", n_utts, "number of utterances")->required();
  synth->add_option("--set", sets, "key=value override");

  CLI::App* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--stage", stage, "asr | vsr | avsr")->required();
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--out", out_dir, "run directory");
  train->add_option("--init-asr", init_asr, "warm-start audio branch checkpoint");
  train->add_option("--init-vsr", init_vsr, "warm-start visual branch checkpoint");
  train->add_option("--set", sets, "key=value override");

  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a corpus");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  CLI::Option* snr_opt = eval_cmd->add_option("--snr", snr, "mix white noise at this SNR (dB)");
  eval_cmd->add_option("--hyp", hyp_path, "hypotheses output file");
  eval_cmd->add_option("--seed", seed, "noise seed");

  CLI::App* sweep = app.add_subcommand("noise-sweep", "paired audio-only vs audio-visual sweep over the SNR grid");
  sweep->add_option("--ckpt-av", ckpt_av, "avsr checkpoint")->required();
  sweep->add_option("--ckpt-a", ckpt_a, "asr checkpoint")->required();
  sweep->add_option("--corpus", corpus_dir, "corpus directory")->required();
  sweep->add_option("--out", out_csv, "output csv");
  sweep->add_option("--seed", seed, "noise seed");

  CLI::App* ablate = app.add_subcommand("ablate", "train and score interaction-module variants");
  ablate->add_option("--config", config_path, "config file")->required();
  ablate->add_option("--modes", modes, "comma list of modes")->capture_default_str();
  ablate->add_option("--out", out_csv, "output csv");
  ablate->add_option("--eval-snr", eval_snr, "evaluation SNR in dB")->capture_default_str();
  ablate->add_option("--set", sets, "key=value override");

  app.add_subcommand("verify", "run the property suite (no checkpoints needed)");

  CLI::App* pc = app.add_subcommand("param-count", "per-module parameter counts for all variants");
  pc->add_option("--config", config_path, "config file");
  pc->add_option("--set", sets, "key=value override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand("synth")) return cmd_synth(config_path, sets, out_dir, n_utts);
    if (app.got_subcommand("train")) {
      std::vector<std::string> all_sets = sets;
      all_sets.push_back("train.stage=" + stage);
      if (!init_asr.empty()) all_sets.push_back("train.init_asr=" + init_asr);
      if (!init_vsr.empty()) all_sets.push_back("train.init_vsr=" + init_vsr);
      return cmd_train(config_path, all_sets, out_dir);
    }
    if (app.got_subcommand("eval")) {
      const bool has_snr = snr_opt->count() > 0;
      return cmd_eval(ckpt, corpus_dir, has_snr ? std::optional<double>(snr) : std::nullopt, hyp_path, seed);
    }
    if (app.got_subcommand("noise-sweep")) {
      if (out_csv.empty()) out_csv = "noise_sweep.csv";
      return cmd_noise_sweep(ckpt_av, ckpt_a, corpus_dir, out_csv, seed);
    }
    if (app.got_subcommand("ablate")) {
      if (out_csv.empty()) out_csv = "ablation.csv";
      return cmd_ablate(config_path, sets, modes, out_csv, eval_snr);
    }
    if (app.got_subcommand("verify")) return cmd_verify();
    if (app.got_subcommand("param-count")) return cmd_param_count(config_path, sets);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
