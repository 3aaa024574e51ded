// Copyright 2026 DCIM-AVSR Authors
// Line-based "section.key = value" run configuration
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

#include "dcim/data_synth.hpp"
#include "dcim/model.hpp"
#include "dcim/training.hpp"

namespace dcim {

// Covers every configurable surface: model.*, synth.*, and train.* keys.
// Unknown keys are hard errors; command-line overrides win over file values.
// `model.preset = toy|paper` applies a bundle before any other model key.
struct RunConfig {
  std::string model_preset = "toy";
  ModelConfig model = ModelConfig::toy_preset();
  SynthSpec synth;

  std::string train_stage = "asr";
  int train_epochs = 300;
  int train_batch = 8;
  uint64_t train_seed = 1;
  double train_base_lr = 0.3;
  int64_t train_warmup = 300;
  int64_t train_schedule_dim = 32;
  double train_clip = 5.0;
  std::string train_precision = "f32";  // f32 | f64
  std::string train_corpus;
  std::string train_eval_corpus;
  std::string train_init_asr;
  std::string train_init_vsr;
  std::string train_freeze;      // comma-separated substring patterns
  double train_stop_loss = -1.0;
  std::string train_noise_snrs;  // comma-separated dB values; empty = clean

  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides);
  void apply(const std::string& key, const std::string& value);
  std::string resolved_text() const;

  StagePlan stage_plan() const;
  OptimizerConfig opt_config() const;
  Precision precision() const;
};

// Writes resolved_text() to <out_dir>/config.resolved.
void echo_resolved(const RunConfig& cfg, const std::string& out_dir);

}  // namespace dcim
