// Copyright 2026 DCIM-AVSR Authors
// Model assembly: recognizer variants, parameter counting, checkpoints
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dcim/audio_frontend.hpp"
#include "dcim/conformer.hpp"
#include "dcim/ctc.hpp"
#include "dcim/dcim.hpp"
#include "dcim/visual_frontend.hpp"

namespace dcim {

enum class ModelKind { asr, vsr, avsr };

std::string to_string(ModelKind kind);
ModelKind model_kind_from(const std::string& s);

// Full architectural description. The audio branch has exactly three stages;
// the visual stage pairs with the middle audio stage inside the interaction
// layers, which requires equal widths and equal layer counts there.
struct ModelConfig {
  std::vector<int64_t> audio_stage_dims = {180, 256, 360};
  std::vector<int> audio_stage_layers = {5, 5, 4};
  int stage1_group_size = 3;
  bool stage1_downsample = true;  // stride-2 conv in the first stage-1 block
  int visual_layers = 5;
  int n_heads = 4;
  int conv_kernel = 15;
  int ff_expansion = 4;
  int64_t vocab = 256;  // includes blank at index 0
  int64_t adapter_bottleneck = 180;
  int64_t fusion_bottleneck = 256;
  DCIMMode dcim_mode;
  std::string tap_stream = "audio";          // or "visual"
  std::string fusion_point = "stage3_entry"; // or "stage3_exit"
  double inter_ctc_lambda = 0.3;
  double dropout = 0.1;
  bool relative_positions = true;
  AudioFrontendConfig audio;
  VisualFrontendConfig visual;

  static ModelConfig paper_preset();
  static ModelConfig toy_preset();

  void validate() const;

  // Stable, sorted key=value listing; the checkpoint digest is FNV-1a over
  // this text.
  std::string canonical_text() const;
  uint64_t digest() const;
  static ModelConfig from_canonical_text(const std::string& text);

  // Shared with the run-config surface: set one field by key.
  void set_field(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
};

struct AvsrOut {
  Tensor logp;               // [T', V]
  std::vector<Tensor> taps;  // intermediate log-probabilities, same length
};

class Model {
 public:
  static Model build(const ModelConfig& cfg, ModelKind kind, uint64_t init_seed);

  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return cfg_; }
  const MelExtractor& mel_extractor() const { return *mel_; }

  Tensor mel_of(const std::vector<double>& waveform) const { return mel_->log_mel(waveform); }

  // Audio branch alone (asr and avsr models share this arithmetic exactly).
  Tensor forward_audio_only(const Tensor& mel, const FwdCtx& ctx) const;
  // Visual branch alone (vsr and avsr models).
  Tensor forward_visual_only(const VideoClip& clip, const FwdCtx& ctx) const;
  // Full fused pass (avsr models only).
  AvsrOut forward_fused(const Tensor& mel, const VideoClip& clip, const FwdCtx& ctx) const;

  // Length bookkeeping (the symbolic oracle for the stride chain).
  int64_t audio_len_after_stage1(int64_t mel_frames) const;
  int64_t visual_out_len(int64_t video_frames) const;

  ParamRegistry registry();
  int64_t param_count();
  std::vector<std::pair<std::string, int64_t>> param_count_by_module();

  // Checkpoints: {magic "DCIM", u32 format=1, u64 config digest, u8 kind,
  // config text, manifest, f32 little-endian payload}.
  void save(const std::string& path);
  static Model load(const std::string& path);
  // Warm start: copy every checkpoint entry whose name this model also has;
  // returns the number of tensors restored.
  int64_t load_matching(const std::string& path);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

 private:
  Model() = default;

  ModelKind kind_ = ModelKind::asr;
  ModelConfig cfg_;
  std::shared_ptr<MelExtractor> mel_;

  // audio branch
  ConvSubsampler sub_;
  std::vector<ConformerBlock> stage1_;
  StageTransition trans1_, trans2_;
  std::vector<InteractionBlock> stage2_solo_;  // asr only; avsr keeps them in dcim_
  std::vector<ConformerBlock> stage3_;
  LinearLayer head_;

  // visual branch
  VisualFrontend vf_;
  std::vector<InteractionBlock> visual_solo_;  // vsr only
  LinearLayer inter_head_;

  // fusion
  DCIMStack dcim_;
  Adapter fusion_adapter_;

  bool has_audio_ = false, has_visual_ = false, has_fusion_ = false;

  const InteractionBlock& stage2_block(size_t i) const;
  const InteractionBlock& visual_block(size_t i) const;
  Tensor run_audio_front(const Tensor& mel, const FwdCtx& ctx) const;
  Tensor run_audio_tail(const Tensor& x, const Tensor* fused_visual, const FwdCtx& ctx) const;
};

}  // namespace dcim
