// Copyright 2026 DCIM-AVSR Authors
// Adam with inverse-sqrt warmup, stage plans, and the training loop
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcim/data_synth.hpp"
#include "dcim/model.hpp"

namespace dcim {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double base_scale = 1.0;
  int64_t warmup_steps = 1000;
  int64_t schedule_dim = 256;
  double clip_norm = 5.0;
};

// base * dim^-0.5 * min(step^-0.5, step * warmup^-1.5); peaks at step==warmup.
double lr_at(int64_t step, const OptimizerConfig& cfg);

// Bias-corrected Adam over a fixed parameter ordering. A step with any
// non-finite gradient is rejected: parameters, moments, and the counter stay
// untouched and a warning is emitted.
class Adam {
 public:
  explicit Adam(OptimizerConfig cfg) : cfg_(cfg) {}

  bool step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
  int64_t step_count() const { return step_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  int64_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

struct StagePlan {
  ModelKind stage = ModelKind::asr;
  int epochs = 10;
  int batch_size = 8;
  uint64_t seed = 1;
  std::optional<std::string> init_asr;
  std::optional<std::string> init_vsr;
  std::vector<std::string> freeze;  // name-prefix patterns over parameter names
  double stop_at_train_loss = -1.0; // early stop once train loss <= this and train WER == 0
  std::vector<double> noise_snrs;   // train-time noise choices; "clean" is always included
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double train_wer = 0.0;
  double eval_wer = 0.0;  // NaN when no eval set
  double lr = 0.0;
};

struct StageResult {
  std::vector<EpochMetrics> history;
  bool diverged = false;
  std::string checkpoint_path;
};

// Seeded mini-batch training. Writes metrics.csv incrementally and a
// checkpoint after every epoch into out_dir (unless out_dir is empty); on a
// non-finite loss the stage aborts and the last good checkpoint stays.
StageResult run_stage(Model& model, const StagePlan& plan, const OptimizerConfig& opt_cfg,
                      const std::vector<Utterance>& train_set, const std::vector<Utterance>* eval_set,
                      const std::string& out_dir);

// Greedy-decode WER of a model over a corpus; SNR noise applied when given.
double evaluate_wer(Model& model, const std::vector<Utterance>& corpus, std::optional<double> snr_db,
                    uint64_t noise_seed, std::vector<LabelSequence>* hyps_out = nullptr);

}  // namespace dcim
