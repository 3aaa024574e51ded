// Copyright 2026 DCIM-AVSR Authors
// Conformer encoder blocks: feed-forward, self-attention, convolution
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

#include "dcim/nn.hpp"
#include "dcim/tensor.hpp"

namespace dcim {

// Threaded through every forward pass; dropout fires only when train is set.
struct FwdCtx {
  bool train = false;
  Rng* rng = nullptr;
};

struct ConformerBlockConfig {
  int64_t dim = 0;
  int n_heads = 4;
  int conv_kernel = 15;
  int ff_expansion = 4;
  int group_size = 1;  // attention over time folded into groups of this size
  int conv_stride = 1;
  double dropout_rate = 0.0;
  bool relative_positions = true;

  void validate() const;
};

// Relative sinusoid table for offsets -(T-1)..(T-1); row p encodes p-(T-1).
Tensor relative_sinusoid_table(int64_t t_len, int64_t dim);
Tensor absolute_sinusoid(int64_t t_len, int64_t dim);

// pad mask [T] (1 = padding) materialized to [T, D].
Tensor expand_time_mask(const Tensor& mask, int64_t dim);

// Half-step residual: x + 1/2 * lin2(dropout(swish(lin1(norm(x))))).
struct FeedForwardModule {
  NormLayer norm;
  LinearLayer lin1, lin2;
  double dropout_rate = 0.0;

  void init(int64_t dim, int expansion, double dropout, Rng& rng);
  Tensor forward(const Tensor& x, const FwdCtx& ctx) const;
  void reg(const std::string& prefix, ParamRegistry& r);
};

// Multi-head self-attention with shift-based relative position scores.
// group_size > 1 folds time into groups of g (features concatenated),
// attends over T/g positions, and unfolds, cutting attention cost by g^2.
// The residual connection is part of the module. When all positions are
// masked the module degenerates to the residual passthrough.
struct AttentionModule {
  ConformerBlockConfig cfg;
  bool pre_norm = true;  // interaction blocks norm outside and disable this
  NormLayer norm;
  LinearLayer wq, wk, wv, wo;
  Tensor wr;     // [gD, gD], projection of the relative sinusoids
  Tensor u, v;   // [H, gD/H] content/position biases

  void init(const ConformerBlockConfig& cfg_, bool pre_norm_, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx, Tensor* probs_out = nullptr) const;
  void reg(const std::string& prefix, ParamRegistry& r);
};

// pointwise -> GLU -> depthwise (declared stride) -> norm -> swish ->
// pointwise -> dropout; residual only when stride == 1.
struct ConvModule {
  NormLayer norm;
  LinearLayer pw1, pw2;
  Tensor dw_w, dw_b;
  NormLayer dnorm;
  int kernel = 15;
  int stride = 1;
  double dropout_rate = 0.0;

  void init(int64_t dim, int kernel_, int stride_, double dropout, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx) const;
  void reg(const std::string& prefix, ParamRegistry& r);
};

// Standard composition: ffm -> attention -> conv -> ffm -> final norm.
struct ConformerBlock {
  ConformerBlockConfig cfg;
  FeedForwardModule ffm1, ffm2;
  AttentionModule att;
  ConvModule conv;
  NormLayer final_norm;

  void init(const ConformerBlockConfig& cfg_, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx) const;
  void reg(const std::string& prefix, ParamRegistry& r);

  static int64_t out_len(const ConformerBlockConfig& cfg, int64_t len) {
    return cfg.conv_stride == 2 ? (len - 1) / 2 + 1 : len;
  }
};

// The block wiring used inside the interaction layers (and stand-alone by
// the single-modality encoders so that fused and unfused paths share
// parameters and arithmetic):
//   X  = PreNorm(ffm1(x))
//   I' = AttRes(X)   = X + attention(X)           [+ adapter terms outside]
//   I''= ffm2(ConvRes(I'))                        [+ adapter terms outside]
//   y  = FinalNorm(I'')
struct InteractionBlock {
  ConformerBlockConfig cfg;
  FeedForwardModule ffm1, ffm2;
  NormLayer pre_norm;
  AttentionModule att;
  ConvModule conv;
  NormLayer final_norm;

  void init(const ConformerBlockConfig& cfg_, Rng& rng);
  Tensor pre(const Tensor& x, const FwdCtx& ctx) const;
  Tensor att_res(const Tensor& x_normed, const Tensor* pad_mask, const FwdCtx& ctx,
                 Tensor* probs_out = nullptr) const;
  Tensor conv_ffm(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx) const;
  Tensor final(const Tensor& x) const { return final_norm.apply(x); }
  Tensor forward_solo(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx) const;
  void reg(const std::string& prefix, ParamRegistry& r);
};

// Affine projection between stages; a stride-2 depthwise conv over time when
// the transition also downsamples.
struct StageTransition {
  LinearLayer proj;
  Tensor dw_w, dw_b;
  int time_stride = 1;

  void init(int64_t in_dim, int64_t out_dim, int time_stride_, Rng& rng);
  Tensor apply(const Tensor& x) const;
  void reg(const std::string& prefix, ParamRegistry& r);

  int64_t out_len(int64_t len) const { return time_stride == 2 ? (len - 1) / 2 + 1 : len; }
};

}  // namespace dcim
