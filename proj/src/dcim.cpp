// Copyright 2026 DCIM-AVSR Authors
// Cross-modal interaction: purification and completion through adapters
//
// Licensed under the Apache License, Version 2.0

#include "dcim/dcim.hpp"

#include <stdexcept>

namespace dcim {

void Adapter::init(int64_t in, int64_t mid, int64_t out, Rng& rng) {
  in_dim = in;
  bottleneck = mid;
  out_dim = out;
  l1.init(in, mid, rng);
  l2.init(mid, mid, rng);
  l3.init_zero(mid, out);
}

Tensor Adapter::forward(const Tensor& x) const {
  if (x.shape().back() != in_dim) {
    throw std::invalid_argument("adapter: feature dim " + std::to_string(x.shape().back()) + " does not match " +
                                std::to_string(in_dim));
  }
  return l3.apply(swish(l2.apply(swish(l1.apply(x)))));
}

int64_t Adapter::param_count() const {
  return in_dim * bottleneck + bottleneck + bottleneck * bottleneck + bottleneck + bottleneck * out_dim + out_dim;
}

void Adapter::reg(const std::string& prefix, ParamRegistry& r) {
  l1.reg(prefix + ".l1", r);
  l2.reg(prefix + ".l2", r);
  l3.reg(prefix + ".l3", r);
}

DCIMLayer::Output DCIMLayer::forward(const Tensor& x_a, const Tensor& x_v, const DCIMMode& mode,
                                     const FwdCtx& ctx) const {
  if (x_a.shape()[0] != x_v.shape()[0]) {
    throw std::invalid_argument("dcim layer: stream lengths differ (" + std::to_string(x_a.shape()[0]) + " vs " +
                                std::to_string(x_v.shape()[0]) + "); trim upstream");
  }
  const bool self_on = wired && mode.purification_on;
  const bool into_audio = wired && mode.completion_on && mode.direction != FusionDirection::a_to_v;
  const bool into_visual = wired && mode.completion_on && mode.direction != FusionDirection::v_to_a;
  const Adapter& attn_cross = per_path ? adapter_attn_cross : adapter_attn;
  const Adapter& conv_cross = per_path ? adapter_conv_cross : adapter_conv;

  Tensor Xa = audio_block.pre(x_a, ctx);
  Tensor Xv = visual_block.pre(x_v, ctx);

  Tensor Ia = audio_block.att_res(Xa, nullptr, ctx);
  Tensor Iv = visual_block.att_res(Xv, nullptr, ctx);
  if (self_on) {
    Ia = add(Ia, adapter_attn.forward(Xa));
    Iv = add(Iv, adapter_attn.forward(Xv));
  }
  if (into_audio) Ia = add(Ia, attn_cross.forward(Xv));
  if (into_visual) Iv = add(Iv, attn_cross.forward(Xa));

  Tensor Ca = audio_block.conv_ffm(Ia, nullptr, ctx);
  Tensor Cv = visual_block.conv_ffm(Iv, nullptr, ctx);
  Output out;
  if (wired) out.audio_conv_adapter = adapter_conv.forward(Ia);
  Tensor Ia2 = Ca;
  Tensor Iv2 = Cv;
  if (self_on) {
    Ia2 = add(Ia2, out.audio_conv_adapter);
    Iv2 = add(Iv2, adapter_conv.forward(Iv));
  }
  if (into_audio) Ia2 = add(Ia2, conv_cross.forward(Iv));
  if (into_visual) Iv2 = add(Iv2, conv_cross.forward(Ia));

  out.audio = audio_block.final(Ia2);
  out.visual = visual_block.final(Iv2);
  return out;
}

void DCIMLayer::reg(const std::string& audio_prefix, const std::string& visual_prefix,
                    const std::string& adapter_prefix, ParamRegistry& r) {
  audio_block.reg(audio_prefix, r);
  visual_block.reg(visual_prefix, r);
  if (wired) {
    adapter_attn.reg(adapter_prefix + ".adapter_attn", r);
    adapter_conv.reg(adapter_prefix + ".adapter_conv", r);
    if (per_path) {
      adapter_attn_cross.reg(adapter_prefix + ".adapter_attn_cross", r);
      adapter_conv_cross.reg(adapter_prefix + ".adapter_conv_cross", r);
    }
  }
}

void DCIMStack::init(int n_layers, const ConformerBlockConfig& block_cfg, int64_t adapter_bottleneck,
                     const DCIMMode& mode_, Rng& rng) {
  mode = mode_;
  layers_.clear();
  layers_.resize(static_cast<size_t>(n_layers));
  for (int i = 0; i < n_layers; ++i) {
    DCIMLayer& layer = layers_[static_cast<size_t>(i)];
    layer.layer_index = i + 1;
    layer.per_path = mode.per_path_adapters;
    layer.wired = mode.layers == DcimLayerSpan::all || i + 1 > n_layers - 2;
    layer.audio_block.init(block_cfg, rng);
    layer.visual_block.init(block_cfg, rng);
    if (layer.wired) {
      const int64_t d = block_cfg.dim;
      layer.adapter_attn.init(d, adapter_bottleneck, d, rng);
      layer.adapter_conv.init(d, adapter_bottleneck, d, rng);
      if (layer.per_path) {
        layer.adapter_attn_cross.init(d, adapter_bottleneck, d, rng);
        layer.adapter_conv_cross.init(d, adapter_bottleneck, d, rng);
      }
    }
  }
}

DCIMStack::Output DCIMStack::forward(const Tensor& x_a, const Tensor& x_v, const FwdCtx& ctx) const {
  Output out;
  out.audio = x_a;
  out.visual = x_v;
  for (const DCIMLayer& layer : layers_) {
    DCIMLayer::Output lo = layer.forward(out.audio, out.visual, mode, ctx);
    out.audio = lo.audio;
    out.visual = lo.visual;
    if (layer.wired && layer.layer_index % 2 == 0) out.taps.push_back(lo.audio_conv_adapter);
  }
  return out;
}

Tensor DCIMStack::forward_audio_solo(const Tensor& x_a, const FwdCtx& ctx) const {
  Tensor y = x_a;
  for (const DCIMLayer& layer : layers_) y = layer.audio_block.forward_solo(y, nullptr, ctx);
  return y;
}

Tensor DCIMStack::forward_visual_solo(const Tensor& x_v, const FwdCtx& ctx) const {
  Tensor y = x_v;
  for (const DCIMLayer& layer : layers_) y = layer.visual_block.forward_solo(y, nullptr, ctx);
  return y;
}

std::vector<int> DCIMStack::tap_layer_indices(int n_layers, const DCIMMode& mode) {
  std::vector<int> out;
  for (int i = 1; i <= n_layers; ++i) {
    const bool wired = mode.layers == DcimLayerSpan::all || i > n_layers - 2;
    if (wired && i % 2 == 0) out.push_back(i);
  }
  return out;
}

void DCIMStack::reg(const std::string& audio_prefix, const std::string& visual_prefix,
                    const std::string& adapter_prefix, ParamRegistry& r) {
  for (size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].reg(audio_prefix + "." + std::to_string(i), visual_prefix + "." + std::to_string(i),
                   adapter_prefix + "." + std::to_string(i), r);
  }
}

}  // namespace dcim
