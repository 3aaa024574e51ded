// Copyright 2026 DCIM-AVSR Authors
// Decoding and scoring around the CTC loss primitive
//
// Licensed under the Apache License, Version 2.0

#include "dcim/ctc.hpp"

#include <algorithm>
#include <stdexcept>

namespace dcim {

Tensor inter_ctc_combine(const Tensor& final_loss, const std::vector<Tensor>& tap_losses, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) {
    throw std::invalid_argument("inter_ctc_combine: lambda must lie in [0,1], got " + std::to_string(lambda));
  }
  if (lambda == 0.0) return final_loss;
  if (tap_losses.empty()) {
    throw std::invalid_argument("inter_ctc_combine: no intermediate losses but lambda > 0");
  }
  Tensor tap_sum = tap_losses[0];
  for (size_t i = 1; i < tap_losses.size(); ++i) tap_sum = add(tap_sum, tap_losses[i]);
  Tensor tap_mean = scale(tap_sum, 1.0 / static_cast<double>(tap_losses.size()));
  return add(scale(final_loss, 1.0 - lambda), scale(tap_mean, lambda));
}

LabelSequence greedy_decode(const Tensor& logp) {
  if (logp.rank() != 2) throw std::invalid_argument("greedy_decode: expected logp [T,V]");
  const int64_t T = logp.shape()[0], V = logp.shape()[1];
  LabelSequence out;
  int64_t prev = 0;
  for (int64_t t = 0; t < T; ++t) {
    int64_t best = 0;
    double best_v = logp.at({t, 0});
    for (int64_t k = 1; k < V; ++k) {
      const double v = logp.at({t, k});
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    if (best != 0 && best != prev) out.push_back(static_cast<int>(best));
    prev = best;
  }
  return out;
}

int64_t edit_distance(const LabelSequence& a, const LabelSequence& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1]) {
        cur[j] = prev[j - 1];
      } else {
        cur[j] = 1 + std::min({prev[j - 1], prev[j], cur[j - 1]});
      }
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double wer(const std::vector<LabelSequence>& refs, const std::vector<LabelSequence>& hyps) {
  if (refs.size() != hyps.size()) throw std::invalid_argument("wer: reference/hypothesis count mismatch");
  int64_t edits = 0, ref_tokens = 0;
  for (size_t i = 0; i < refs.size(); ++i) {
    edits += edit_distance(refs[i], hyps[i]);
    ref_tokens += static_cast<int64_t>(refs[i].size());
  }
  if (ref_tokens == 0) throw std::invalid_argument("wer: reference corpus has no tokens, rate undefined");
  return static_cast<double>(edits) / static_cast<double>(ref_tokens);
}

}  // namespace dcim
