// Copyright 2026 DCIM-AVSR Authors
// CTC loss combination, greedy decoding, and edit-distance scoring
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <vector>

#include "dcim/ops.hpp"
#include "dcim/tensor.hpp"

namespace dcim {

// Token indices excluding blank; blank is always index 0.
using LabelSequence = std::vector<int>;

// (1-lambda) * final + lambda * mean(taps). Rejects an empty tap list when
// lambda > 0.
Tensor inter_ctc_combine(const Tensor& final_loss, const std::vector<Tensor>& tap_losses, double lambda);

// Per-frame argmax, collapse repeats, drop blanks. Ties break toward the
// lower index.
LabelSequence greedy_decode(const Tensor& logp);

// Levenshtein distance with unit costs.
int64_t edit_distance(const LabelSequence& a, const LabelSequence& b);

// Corpus WER: total edits / total reference tokens. Throws when the
// reference corpus is empty.
double wer(const std::vector<LabelSequence>& refs, const std::vector<LabelSequence>& hyps);

}  // namespace dcim
