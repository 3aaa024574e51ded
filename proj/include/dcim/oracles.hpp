// Copyright 2026 DCIM-AVSR Authors
// Independent reference routes used to cross-check the main implementations
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dcim/ctc.hpp"
#include "dcim/tensor.hpp"

namespace dcim::oracle {

// Two-pass collapse: drop adjacent repeats, then drop blanks.
LabelSequence collapse_frames(const std::vector<int>& frames);

// -log of the summed probability over all V^T frame labelings whose collapse
// equals `target`. Exponential in T; only usable at tiny sizes, which is the
// point: it shares no code with the forward recursion.
double ctc_loss_by_enumeration(const Tensor& logp, const LabelSequence& target);

// --- finite-difference gradient harness -----------------------------------

struct GradCheckResult {
  // |analytic - numeric| / (atol + rtol * max(|analytic|, |numeric|));
  // a check passes while this stays <= 1.
  double max_ratio = 0.0;
  int64_t checked = 0;
  std::string worst;
};

// Central differences against the analytic gradient. `forward_value` must
// rebuild the computation from the current slot values; `analytic_grads`
// returns gradients aligned with `slots`. The absolute tolerance absorbs
// truncation noise on near-zero gradients (~1e-10 at h=1e-5 in 64-bit).
GradCheckResult finite_diff_check(const std::vector<Tensor*>& slots, const std::function<double()>& forward_value,
                                  const std::function<std::vector<Tensor>()>& analytic_grads, double h = 1e-5,
                                  double rtol = 1e-6, double atol = 1e-9, double skip_below = 1e-8);

double max_abs_diff(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace dcim::oracle
