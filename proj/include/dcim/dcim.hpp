// Copyright 2026 DCIM-AVSR Authors
// Dual Conformer interaction layers: paired blocks with shared adapters
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

#include "dcim/conformer.hpp"
#include "dcim/nn.hpp"

namespace dcim {

// Bottleneck adapter: three affine maps with swish between them. The last
// map starts at zero so a fresh adapter is exactly a no-op contribution and
// fusion grows from nothing during fine-tuning.
struct Adapter {
  LinearLayer l1, l2, l3;
  int64_t in_dim = 0, bottleneck = 0, out_dim = 0;

  void init(int64_t in, int64_t mid, int64_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  int64_t param_count() const;
  void reg(const std::string& prefix, ParamRegistry& r);
};

enum class FusionDirection { dual, v_to_a, a_to_v };
enum class DcimLayerSpan { all, last_two };

// Encodes the ablation grid: flow direction, which adapter paths are live,
// and whether only the last two layers carry adapters.
struct DCIMMode {
  FusionDirection direction = FusionDirection::dual;
  bool purification_on = true;
  bool completion_on = true;
  DcimLayerSpan layers = DcimLayerSpan::all;
  bool per_path_adapters = false;  // separate self/cross adapters instead of shared
};

// One audio block + one visual block + the (shared) attention-site and
// conv-site adapters. Streams must arrive with identical time extents.
struct DCIMLayer {
  InteractionBlock audio_block, visual_block;
  Adapter adapter_attn, adapter_conv;
  Adapter adapter_attn_cross, adapter_conv_cross;  // used only per_path
  bool wired = false;
  bool per_path = false;
  int layer_index = 0;  // 1-indexed

  struct Output {
    Tensor audio, visual;
    Tensor audio_conv_adapter;  // conv-site adapter output on the audio path
  };

  Output forward(const Tensor& x_a, const Tensor& x_v, const DCIMMode& mode, const FwdCtx& ctx) const;
  void reg(const std::string& audio_prefix, const std::string& visual_prefix, const std::string& adapter_prefix,
           ParamRegistry& r);
};

struct DCIMStack {
  std::vector<DCIMLayer> layers_;
  DCIMMode mode;

  void init(int n_layers, const ConformerBlockConfig& block_cfg, int64_t adapter_bottleneck, const DCIMMode& mode_,
            Rng& rng);

  struct Output {
    Tensor audio, visual;
    std::vector<Tensor> taps;  // conv-adapter outputs of even wired layers
  };
  Output forward(const Tensor& x_a, const Tensor& x_v, const FwdCtx& ctx) const;

  // Audio-only pass through the same blocks (no adapter arithmetic at all);
  // this is what the unfused recognizer runs.
  Tensor forward_audio_solo(const Tensor& x_a, const FwdCtx& ctx) const;
  Tensor forward_visual_solo(const Tensor& x_v, const FwdCtx& ctx) const;

  static std::vector<int> tap_layer_indices(int n_layers, const DCIMMode& mode);

  void reg(const std::string& audio_prefix, const std::string& visual_prefix, const std::string& adapter_prefix,
           ParamRegistry& r);
};

}  // namespace dcim
