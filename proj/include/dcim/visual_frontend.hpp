// Copyright 2026 DCIM-AVSR Authors
// 3D conv stem, per-frame residual stages, pooling to a frame sequence
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <vector>

#include "dcim/nn.hpp"
#include "dcim/tensor.hpp"

namespace dcim {

// Grayscale clip, values in [0,1], fixed 25 fps.
struct VideoClip {
  Tensor frames;  // [T, H, W]
  int fps = 25;

  void validate() const;
};

struct VisualFrontendConfig {
  std::array<int, 3> stem_kernel = {5, 7, 7};
  std::array<int, 3> stem_stride = {1, 2, 2};
  int n_res_blocks = 4;
  std::vector<int> channels = {16, 32, 64, 128};
  int blocks_per_stage = 1;  // 2 reproduces the ResNet-18 stage layout
  int out_dim = 256;
  int temporal_pool_stride = 2;

  void validate() const;
};

// Two 3x3 convs with an identity shortcut (1x1 projection when the channel
// count or stride changes). A parameter-free per-frame norm after each conv
// keeps activations bounded; ReLU activations throughout.
struct ResBlock2d {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  Tensor short_w, short_b;  // defined only when projecting
  bool has_projection = false;
  int stride = 1;

  void init(int64_t in_ch, int64_t out_ch, int stride_, Rng& rng);
  Tensor apply(const Tensor& x) const;  // [T, Cin, H, W] -> [T, Cout, H', W']
  void reg(const std::string& prefix, ParamRegistry& r);
};

class VisualFrontend {
 public:
  VisualFrontend() = default;
  void init(const VisualFrontendConfig& cfg, Rng& rng);

  // 3D stem over the clip: [T,H,W] -> [T, C0, H', W']
  Tensor stem(const VideoClip& clip) const;
  // Per-frame residual stages, pooling, projection: -> [T/pool, out_dim]
  Tensor encode_frames(const Tensor& stem_out) const;

  Tensor forward(const VideoClip& clip) const { return encode_frames(stem(clip)); }

  static int64_t out_len(int64_t t_frames, const VisualFrontendConfig& cfg) {
    return t_frames / cfg.temporal_pool_stride;
  }

  void reg(const std::string& prefix, ParamRegistry& r);
  const VisualFrontendConfig& config() const { return cfg_; }

 private:
  VisualFrontendConfig cfg_;
  Tensor stem_w, stem_b;
  std::vector<ResBlock2d> blocks_;
  LinearLayer proj_;
};

// Normalize each frame over all of its features (no learnable affine).
Tensor frame_norm(const Tensor& x);

}  // namespace dcim
