// Copyright 2026 DCIM-AVSR Authors
// Brute-force CTC enumeration and collapse references
//
// Licensed under the Apache License, Version 2.0

#include "dcim/oracles.hpp"

#include <cmath>
#include <limits>

namespace dcim::oracle {

LabelSequence collapse_frames(const std::vector<int>& frames) {
  std::vector<int> dedup;
  for (int f : frames) {
    if (dedup.empty() || dedup.back() != f) dedup.push_back(f);
  }
  LabelSequence out;
  for (int f : dedup) {
    if (f != 0) out.push_back(f);
  }
  return out;
}

GradCheckResult finite_diff_check(const std::vector<Tensor*>& slots, const std::function<double()>& forward_value,
                                  const std::function<std::vector<Tensor>()>& analytic_grads, double h, double rtol,
                                  double atol, double skip_below) {
  GradCheckResult res;
  const std::vector<Tensor> grads = analytic_grads();
  for (size_t s = 0; s < slots.size(); ++s) {
    Tensor original = *slots[s];
    for (int64_t i = 0; i < original.numel(); ++i) {
      const double x0 = original.flat(i);
      *slots[s] = original.with_flat(i, x0 + h);
      const double fp = forward_value();
      *slots[s] = original.with_flat(i, x0 - h);
      const double fm = forward_value();
      *slots[s] = original;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = grads[s].flat(i);
      if (std::abs(ana) <= skip_below && std::abs(num) <= skip_below) continue;
      const double ratio = std::abs(ana - num) / (atol + rtol * std::max(std::abs(ana), std::abs(num)));
      ++res.checked;
      if (ratio > res.max_ratio) {
        res.max_ratio = ratio;
        res.worst = "slot " + std::to_string(s) + " idx " + std::to_string(i) + " analytic " + std::to_string(ana) +
                    " numeric " + std::to_string(num);
      }
    }
  }
  return res;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.flat(i) - b.flat(i)));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a.flat(i) != b.flat(i)) return false;
  }
  return true;
}

double ctc_loss_by_enumeration(const Tensor& logp, const LabelSequence& target) {
  const int64_t T = logp.shape()[0], V = logp.shape()[1];
  std::vector<int> frames(static_cast<size_t>(T), 0);
  double total = 0.0;
  while (true) {
    if (collapse_frames(frames) == target) {
      double lp = 0.0;
      for (int64_t t = 0; t < T; ++t) lp += logp.at({t, frames[static_cast<size_t>(t)]});
      total += std::exp(lp);
    }
    // odometer over the V^T labelings
    int64_t pos = T - 1;
    while (pos >= 0) {
      if (++frames[static_cast<size_t>(pos)] < V) break;
      frames[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  if (total <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(total);
}

}  // namespace dcim::oracle
