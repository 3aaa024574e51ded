// Copyright 2026 DCIM-AVSR Authors
// Property suite runnable without trained checkpoints
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

namespace dcim {

struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  bool all_pass() const {
    for (const auto& c : checks) {
      if (!c.pass) return false;
    }
    return true;
  }
};

// Gradient checks (primitives, one standard block, one interaction layer
// with both streams, CTC end-to-end), the CTC enumeration grid, the
// rate-alignment audit, warm-start no-regression, and a checkpoint
// round-trip. Random-init models at toy dims throughout.
VerifyReport run_verification();

}  // namespace dcim
