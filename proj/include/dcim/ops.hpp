// Copyright 2026 DCIM-AVSR Authors
// Primitive tensor operations with exact vector-Jacobian products
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <vector>

#include "dcim/tensor.hpp"

namespace dcim {

// Elementwise binary ops accept equal shapes, or one operand whose shape is
// a suffix of the other's; the smaller operand broadcasts over the leading
// axes (per-axis size-1 broadcasting is deliberately not supported).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);
Tensor relu(const Tensor& x);

// Inverted scaling: kept positions are multiplied by 1/(1-rate) at train
// time so evaluation is the identity.
Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng);

// a: [..., m, k], b: [..., k, n]. Leading batch axes follow the suffix
// broadcast rule. In Float32 mode results are rounded after accumulation.
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [..., in], w: [in, out], b: [out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor transpose(const Tensor& x, int axis_a, int axis_b);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);

// mask must match x's shape exactly; positions where mask != 0 are replaced
// by `value` and receive zero gradient. The mask itself is never tracked.
Tensor masked_fill(const Tensor& x, const Tensor& mask, double value);

// [..., T, 2T-1] -> [..., T, T]; out[i][j] = in[i][T-1 + i - j].
// Row i of the input holds scores against relative offsets -(T-1)..(T-1).
Tensor rel_shift(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

// Normalization over the last axis; gain/bias have that axis's extent.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Last axis split in half: out = first ⊙ sigmoid(second).
Tensor glu(const Tensor& x);

// x: [T, C], w: [C, k] (k odd), b: [C]. Same padding; out length
// floor((T-1)/stride)+1.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& w, const Tensor& b, int stride);

// x: [Cin, H, W] or [B, Cin, H, W]; w: [Cout, Cin, kh, kw]; same padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride_h, int stride_w);

// x: [Cin, T, H, W]; w: [Cout, Cin, kt, kh, kw]; same padding.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride_t, int stride_h, int stride_w);

// x: [T, D] -> [floor(T/stride), D], averaging non-overlapping windows;
// trailing remainder frames are dropped.
Tensor avg_pool_time(const Tensor& x, int stride);

// CTC loss for one utterance. logp: [T, V] row-normalized log-probabilities
// with blank at index 0; labels exclude blank. Returns -log P(labels|x),
// +inf when no frame labeling collapses to the target. The gradient is the
// exact forward-backward posterior.
Tensor ctc_loss(const Tensor& logp, const std::vector<int>& labels);

}  // namespace dcim
