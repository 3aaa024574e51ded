// Copyright 2026 DCIM-AVSR Authors
// Visual feature extraction over synthetic clips
//
// Licensed under the Apache License, Version 2.0

#include "dcim/visual_frontend.hpp"

#include <stdexcept>

namespace dcim {

void VideoClip::validate() const {
  if (frames.rank() != 3) throw std::invalid_argument("video clip: expected frames [T,H,W]");
  if (frames.shape()[0] < 1) throw std::invalid_argument("video clip: empty clip");
  if (frames.shape()[1] < 16 || frames.shape()[2] < 16) {
    throw std::invalid_argument("video clip: spatial extent must be at least 16x16");
  }
}

void VisualFrontendConfig::validate() const {
  if (static_cast<int>(channels.size()) != n_res_blocks) {
    throw std::invalid_argument("visual frontend: channel schedule length must equal n_res_blocks");
  }
  if (blocks_per_stage < 1) throw std::invalid_argument("visual frontend: blocks_per_stage must be >= 1");
  if (out_dim < 1 || temporal_pool_stride < 1) throw std::invalid_argument("visual frontend: bad output config");
  // Same padding keeps every spatial extent >= 1, but a degenerate stride
  // config is still rejected up front rather than at runtime.
  for (int s : stem_stride) {
    if (s < 1) throw std::invalid_argument("visual frontend: stem stride must be positive");
  }
}

Tensor frame_norm(const Tensor& x) {
  // [T, C, H, W] -> normalize over (C,H,W) per frame, no affine parameters
  const int64_t T = x.shape()[0];
  const int64_t feat = x.numel() / T;
  Tensor flat = reshape(x, {T, feat});
  Tensor y = layernorm(flat, Tensor::ones({feat}), Tensor::zeros({feat}), 1e-5);
  return reshape(y, x.shape());
}

void ResBlock2d::init(int64_t in_ch, int64_t out_ch, int stride_, Rng& rng) {
  stride = stride_;
  conv1_w = xavier_uniform(9 * in_ch, 9 * out_ch, {out_ch, in_ch, 3, 3}, rng);
  conv1_b = Tensor::zeros({out_ch});
  conv2_w = xavier_uniform(9 * out_ch, 9 * out_ch, {out_ch, out_ch, 3, 3}, rng);
  conv2_b = Tensor::zeros({out_ch});
  has_projection = (in_ch != out_ch) || stride != 1;
  if (has_projection) {
    short_w = xavier_uniform(in_ch, out_ch, {out_ch, in_ch, 1, 1}, rng);
    short_b = Tensor::zeros({out_ch});
  }
}

Tensor ResBlock2d::apply(const Tensor& x) const {
  Tensor h = relu(frame_norm(conv2d(x, conv1_w, conv1_b, stride, stride)));
  h = frame_norm(conv2d(h, conv2_w, conv2_b, 1, 1));
  Tensor sc = has_projection ? conv2d(x, short_w, short_b, stride, stride) : x;
  return relu(add(h, sc));
}

void ResBlock2d::reg(const std::string& prefix, ParamRegistry& r) {
  r.add(prefix + ".conv1.w", &conv1_w);
  r.add(prefix + ".conv1.b", &conv1_b);
  r.add(prefix + ".conv2.w", &conv2_w);
  r.add(prefix + ".conv2.b", &conv2_b);
  if (has_projection) {
    r.add(prefix + ".short.w", &short_w);
    r.add(prefix + ".short.b", &short_b);
  }
}

void VisualFrontend::init(const VisualFrontendConfig& cfg, Rng& rng) {
  cfg.validate();
  cfg_ = cfg;
  const int64_t c0 = cfg.channels[0];
  const int64_t kt = cfg.stem_kernel[0], kh = cfg.stem_kernel[1], kw = cfg.stem_kernel[2];
  stem_w = xavier_uniform(kt * kh * kw, kt * kh * kw * c0, {c0, 1, kt, kh, kw}, rng);
  stem_b = Tensor::zeros({c0});

  blocks_.clear();
  int64_t in_ch = c0;
  for (int s = 0; s < cfg.n_res_blocks; ++s) {
    const int64_t out_ch = cfg.channels[static_cast<size_t>(s)];
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      ResBlock2d blk;
      blk.init(in_ch, out_ch, b == 0 ? 2 : 1, rng);  // stride-2 at each stage boundary
      blocks_.push_back(std::move(blk));
      in_ch = out_ch;
    }
  }
  proj_.init(in_ch, cfg.out_dim, rng);
}

Tensor VisualFrontend::stem(const VideoClip& clip) const {
  clip.validate();
  const int64_t T = clip.frames.shape()[0];
  const int64_t H = clip.frames.shape()[1];
  const int64_t W = clip.frames.shape()[2];
  Tensor x = reshape(clip.frames, {1, T, H, W});
  x = relu(conv3d(x, stem_w, stem_b, cfg_.stem_stride[0], cfg_.stem_stride[1], cfg_.stem_stride[2]));
  return transpose(x, 0, 1);  // [T, C0, H', W']
}

Tensor VisualFrontend::encode_frames(const Tensor& stem_out) const {
  Tensor x = stem_out;
  for (const ResBlock2d& blk : blocks_) x = blk.apply(x);
  // spatial global average pool
  x = mean_axis(mean_axis(x, 3, false), 2, false);  // [T, C]
  x = proj_.apply(x);                               // [T, out_dim]
  return avg_pool_time(x, cfg_.temporal_pool_stride);
}

void VisualFrontend::reg(const std::string& prefix, ParamRegistry& r) {
  r.add(prefix + ".stem.w", &stem_w);
  r.add(prefix + ".stem.b", &stem_b);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].reg(prefix + ".block" + std::to_string(i), r);
  }
  proj_.reg(prefix + ".proj", r);
}

}  // namespace dcim
