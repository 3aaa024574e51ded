// Copyright 2026 DCIM-AVSR Authors
// Conformer block internals
//
// Licensed under the Apache License, Version 2.0

#include "dcim/conformer.hpp"

#include <cmath>
#include <stdexcept>

namespace dcim {

namespace {

constexpr double kMaskScore = -1e30;

Tensor sinusoid_rows(const std::vector<double>& positions, int64_t dim) {
  const int64_t n = static_cast<int64_t>(positions.size());
  std::vector<double> d(static_cast<size_t>(n * dim));
  for (int64_t p = 0; p < n; ++p) {
    for (int64_t i = 0; i < dim; i += 2) {
      const double freq = std::exp(-static_cast<double>(i) * std::log(10000.0) / static_cast<double>(dim));
      const double a = positions[static_cast<size_t>(p)] * freq;
      d[static_cast<size_t>(p * dim + i)] = std::sin(a);
      if (i + 1 < dim) d[static_cast<size_t>(p * dim + i + 1)] = std::cos(a);
    }
  }
  return Tensor::from({n, dim}, std::move(d));
}

Tensor dropout_ctx(const Tensor& x, double rate, const FwdCtx& ctx) {
  if (!ctx.train || rate == 0.0) return x;
  if (!ctx.rng) throw std::logic_error("forward: train mode requires an rng");
  return dropout(x, rate, true, *ctx.rng);
}

// Fold [T, D] into [ceil(T/g), g*D], zero right-padding.
Tensor fold_groups(const Tensor& x, int g) {
  const int64_t T = x.shape()[0], D = x.shape()[1];
  const int64_t Tg = (T + g - 1) / g;
  Tensor padded = x;
  if (Tg * g != T) padded = concat({x, Tensor::zeros({Tg * g - T, D})}, 0);
  return reshape(padded, {Tg, static_cast<int64_t>(g) * D});
}

Tensor unfold_groups(const Tensor& x, int g, int64_t orig_t, int64_t dim) {
  Tensor flat = reshape(x, {x.shape()[0] * g, dim});
  if (flat.shape()[0] == orig_t) return flat;
  return slice(flat, 0, 0, orig_t);
}

// Group-level pad mask: a group is padding only when every frame in it is.
Tensor fold_mask(const Tensor& mask, int g, int64_t tg) {
  const int64_t T = mask.numel();
  std::vector<double> d(static_cast<size_t>(tg), 0.0);
  for (int64_t grp = 0; grp < tg; ++grp) {
    bool all_pad = true;
    for (int s = 0; s < g; ++s) {
      const int64_t t = grp * g + s;
      if (t < T && mask.flat(t) == 0.0) {
        all_pad = false;
        break;
      }
    }
    d[static_cast<size_t>(grp)] = all_pad ? 1.0 : 0.0;
  }
  return Tensor::from({tg}, std::move(d));
}

Tensor key_mask_scores(const Tensor& group_mask, int64_t heads, int64_t tq) {
  const int64_t tk = group_mask.numel();
  std::vector<double> d(static_cast<size_t>(heads * tq * tk));
  for (int64_t h = 0; h < heads; ++h)
    for (int64_t q = 0; q < tq; ++q)
      for (int64_t k = 0; k < tk; ++k) d[static_cast<size_t>((h * tq + q) * tk + k)] = group_mask.flat(k);
  return Tensor::from({heads, tq, tk}, std::move(d));
}

}  // namespace

void ConformerBlockConfig::validate() const {
  if (dim <= 0) throw std::invalid_argument("conformer block: dim must be positive");
  if (dim % n_heads != 0) throw std::invalid_argument("conformer block: dim must be divisible by n_heads");
  if ((dim * group_size) % n_heads != 0) {
    throw std::invalid_argument("conformer block: grouped dim must be divisible by n_heads");
  }
  if (conv_kernel % 2 == 0) throw std::invalid_argument("conformer block: conv kernel must be odd");
  if (group_size < 1) throw std::invalid_argument("conformer block: group size must be >= 1");
  if (conv_stride != 1 && conv_stride != 2) throw std::invalid_argument("conformer block: conv stride must be 1 or 2");
}

Tensor relative_sinusoid_table(int64_t t_len, int64_t dim) {
  std::vector<double> pos(static_cast<size_t>(2 * t_len - 1));
  for (int64_t p = 0; p < 2 * t_len - 1; ++p) pos[static_cast<size_t>(p)] = static_cast<double>(p - (t_len - 1));
  return sinusoid_rows(pos, dim);
}

Tensor absolute_sinusoid(int64_t t_len, int64_t dim) {
  std::vector<double> pos(static_cast<size_t>(t_len));
  for (int64_t p = 0; p < t_len; ++p) pos[static_cast<size_t>(p)] = static_cast<double>(p);
  return sinusoid_rows(pos, dim);
}

Tensor expand_time_mask(const Tensor& mask, int64_t dim) {
  const int64_t T = mask.numel();
  std::vector<double> d(static_cast<size_t>(T * dim));
  for (int64_t t = 0; t < T; ++t) {
    const double v = mask.flat(t);
    for (int64_t i = 0; i < dim; ++i) d[static_cast<size_t>(t * dim + i)] = v;
  }
  return Tensor::from({T, dim}, std::move(d));
}

void FeedForwardModule::init(int64_t dim, int expansion, double dropout, Rng& rng) {
  dropout_rate = dropout;
  norm.init(dim);
  lin1.init(dim, dim * expansion, rng);
  lin2.init(dim * expansion, dim, rng);
}

Tensor FeedForwardModule::forward(const Tensor& x, const FwdCtx& ctx) const {
  Tensor y = lin2.apply(dropout_ctx(swish(lin1.apply(norm.apply(x))), dropout_rate, ctx));
  return add(x, scale(y, 0.5));
}

void FeedForwardModule::reg(const std::string& prefix, ParamRegistry& r) {
  norm.reg(prefix + ".norm", r);
  lin1.reg(prefix + ".lin1", r);
  lin2.reg(prefix + ".lin2", r);
}

void AttentionModule::init(const ConformerBlockConfig& cfg_, bool pre_norm_, Rng& rng) {
  cfg = cfg_;
  cfg.validate();
  pre_norm = pre_norm_;
  const int64_t d = cfg.dim;
  if (pre_norm) norm.init(d);
  wq.init(d, d, rng);
  wk.init(d, d, rng);
  wv.init(d, d, rng);
  wo.init(d, d, rng);
  if (cfg.relative_positions) {
    const int64_t gd = d * cfg.group_size;
    wr = xavier_uniform(gd, gd, {gd, gd}, rng);
    u = Tensor::zeros({static_cast<int64_t>(cfg.n_heads), gd / cfg.n_heads});
    v = Tensor::zeros({static_cast<int64_t>(cfg.n_heads), gd / cfg.n_heads});
  }
}

Tensor AttentionModule::forward(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx,
                                Tensor* probs_out) const {
  const int64_t T = x.shape()[0];
  const int64_t D = cfg.dim;
  const int g = cfg.group_size;
  const int64_t H = cfg.n_heads;

  if (pad_mask) {
    bool all_masked = true;
    for (int64_t t = 0; t < T && all_masked; ++t) all_masked = pad_mask->flat(t) != 0.0;
    if (all_masked) return x;  // residual passthrough, no keys to attend to
  }

  Tensor y = pre_norm ? norm.apply(x) : x;
  if (!cfg.relative_positions) y = add(y, absolute_sinusoid(T, D));
  Tensor y_proj_in = y;
  if (g > 1 && pad_mask) {
    // padded frames would bleed into their group's features
    y_proj_in = masked_fill(y, expand_time_mask(*pad_mask, D), 0.0);
  }

  Tensor q = fold_groups(wq.apply(y_proj_in), g);
  Tensor k = fold_groups(wk.apply(y_proj_in), g);
  Tensor vv = fold_groups(wv.apply(y_proj_in), g);
  const int64_t Tg = q.shape()[0];
  const int64_t gd = q.shape()[1];
  const int64_t hd = gd / H;

  auto to_heads = [&](const Tensor& t) { return transpose(reshape(t, {Tg, H, hd}), 0, 1); };
  Tensor qh = to_heads(q), kh = to_heads(k), vh = to_heads(vv);

  Tensor scores;
  if (cfg.relative_positions) {
    auto add_head_bias = [&](const Tensor& heads, const Tensor& bias) {
      return transpose(add(transpose(heads, 0, 1), bias), 0, 1);
    };
    Tensor content = matmul(add_head_bias(qh, u), transpose(kh, 1, 2));
    Tensor rel = matmul(relative_sinusoid_table(Tg, gd), wr);  // [2Tg-1, gd]
    Tensor rel_h = transpose(reshape(rel, {2 * Tg - 1, H, hd}), 0, 1);
    Tensor pos = rel_shift(matmul(add_head_bias(qh, v), transpose(rel_h, 1, 2)));
    scores = scale(add(content, pos), 1.0 / std::sqrt(static_cast<double>(hd)));
  } else {
    scores = scale(matmul(qh, transpose(kh, 1, 2)), 1.0 / std::sqrt(static_cast<double>(hd)));
  }

  if (pad_mask) {
    Tensor gmask = fold_mask(*pad_mask, g, Tg);
    scores = masked_fill(scores, key_mask_scores(gmask, H, Tg), kMaskScore);
  }
  Tensor probs = softmax(scores, -1);
  if (probs_out) *probs_out = probs.detached();

  Tensor ctxv = matmul(probs, vh);                                   // [H, Tg, hd]
  Tensor merged = reshape(transpose(ctxv, 0, 1), {Tg, gd});          // concat heads
  Tensor out = wo.apply(unfold_groups(merged, g, T, D));
  return add(x, dropout_ctx(out, cfg.dropout_rate, ctx));
}

void AttentionModule::reg(const std::string& prefix, ParamRegistry& r) {
  if (pre_norm) norm.reg(prefix + ".norm", r);
  wq.reg(prefix + ".wq", r);
  wk.reg(prefix + ".wk", r);
  wv.reg(prefix + ".wv", r);
  wo.reg(prefix + ".wo", r);
  if (cfg.relative_positions) {
    r.add(prefix + ".wr", &wr);
    r.add(prefix + ".u", &u);
    r.add(prefix + ".v", &v);
  }
}

void ConvModule::init(int64_t dim, int kernel_, int stride_, double dropout, Rng& rng) {
  kernel = kernel_;
  stride = stride_;
  dropout_rate = dropout;
  norm.init(dim);
  pw1.init(dim, 2 * dim, rng);
  dw_w = xavier_uniform(kernel, kernel, {dim, static_cast<int64_t>(kernel)}, rng);
  dw_b = Tensor::zeros({dim});
  dnorm.init(dim);
  pw2.init(dim, dim, rng);
}

Tensor ConvModule::forward(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx) const {
  Tensor y = glu(pw1.apply(norm.apply(x)));
  if (pad_mask) {
    // keep the depthwise window from reading padded values
    y = masked_fill(y, expand_time_mask(*pad_mask, y.shape()[1]), 0.0);
  }
  y = conv1d_depthwise(y, dw_w, dw_b, stride);
  y = pw2.apply(swish(dnorm.apply(y)));
  y = dropout_ctx(y, dropout_rate, ctx);
  return stride == 1 ? add(x, y) : y;
}

void ConvModule::reg(const std::string& prefix, ParamRegistry& r) {
  norm.reg(prefix + ".norm", r);
  pw1.reg(prefix + ".pw1", r);
  r.add(prefix + ".dw.w", &dw_w);
  r.add(prefix + ".dw.b", &dw_b);
  dnorm.reg(prefix + ".dnorm", r);
  pw2.reg(prefix + ".pw2", r);
}

void ConformerBlock::init(const ConformerBlockConfig& cfg_, Rng& rng) {
  cfg = cfg_;
  cfg.validate();
  ffm1.init(cfg.dim, cfg.ff_expansion, cfg.dropout_rate, rng);
  ffm2.init(cfg.dim, cfg.ff_expansion, cfg.dropout_rate, rng);
  att.init(cfg, /*pre_norm=*/true, rng);
  conv.init(cfg.dim, cfg.conv_kernel, cfg.conv_stride, cfg.dropout_rate, rng);
  final_norm.init(cfg.dim);
}

Tensor ConformerBlock::forward(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx) const {
  Tensor y = ffm1.forward(x, ctx);
  y = att.forward(y, pad_mask, ctx);
  // everything past the conv is per-position, so the (possibly downsampled)
  // mask is only the caller's concern
  y = conv.forward(y, pad_mask, ctx);
  y = ffm2.forward(y, ctx);
  return final_norm.apply(y);
}

void ConformerBlock::reg(const std::string& prefix, ParamRegistry& r) {
  ffm1.reg(prefix + ".ffm1", r);
  att.reg(prefix + ".att", r);
  conv.reg(prefix + ".conv", r);
  ffm2.reg(prefix + ".ffm2", r);
  final_norm.reg(prefix + ".out_norm", r);
}

void InteractionBlock::init(const ConformerBlockConfig& cfg_, Rng& rng) {
  cfg = cfg_;
  cfg.validate();
  ffm1.init(cfg.dim, cfg.ff_expansion, cfg.dropout_rate, rng);
  ffm2.init(cfg.dim, cfg.ff_expansion, cfg.dropout_rate, rng);
  pre_norm.init(cfg.dim);
  att.init(cfg, /*pre_norm=*/false, rng);
  conv.init(cfg.dim, cfg.conv_kernel, cfg.conv_stride, cfg.dropout_rate, rng);
  final_norm.init(cfg.dim);
}

Tensor InteractionBlock::pre(const Tensor& x, const FwdCtx& ctx) const {
  return pre_norm.apply(ffm1.forward(x, ctx));
}

Tensor InteractionBlock::att_res(const Tensor& x_normed, const Tensor* pad_mask, const FwdCtx& ctx,
                                 Tensor* probs_out) const {
  return att.forward(x_normed, pad_mask, ctx, probs_out);
}

Tensor InteractionBlock::conv_ffm(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx) const {
  return ffm2.forward(conv.forward(x, pad_mask, ctx), ctx);
}

Tensor InteractionBlock::forward_solo(const Tensor& x, const Tensor* pad_mask, const FwdCtx& ctx) const {
  return final(conv_ffm(att_res(pre(x, ctx), pad_mask, ctx), pad_mask, ctx));
}

void InteractionBlock::reg(const std::string& prefix, ParamRegistry& r) {
  ffm1.reg(prefix + ".ffm1", r);
  pre_norm.reg(prefix + ".pre_norm", r);
  att.reg(prefix + ".att", r);
  conv.reg(prefix + ".conv", r);
  ffm2.reg(prefix + ".ffm2", r);
  final_norm.reg(prefix + ".out_norm", r);
}

void StageTransition::init(int64_t in_dim, int64_t out_dim, int time_stride_, Rng& rng) {
  time_stride = time_stride_;
  proj.init(in_dim, out_dim, rng);
  if (time_stride == 2) {
    dw_w = xavier_uniform(3, 3, {out_dim, 3}, rng);
    dw_b = Tensor::zeros({out_dim});
  }
}

Tensor StageTransition::apply(const Tensor& x) const {
  Tensor y = proj.apply(x);
  if (time_stride == 2) y = conv1d_depthwise(y, dw_w, dw_b, 2);
  return y;
}

void StageTransition::reg(const std::string& prefix, ParamRegistry& r) {
  proj.reg(prefix + ".proj", r);
  if (time_stride == 2) {
    r.add(prefix + ".dw.w", &dw_w);
    r.add(prefix + ".dw.b", &dw_b);
  }
}

}  // namespace dcim
