// Copyright 2026 DCIM-AVSR Authors
// On-disk waveform (DWV1) and video clip (DVC1) formats
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

#include "dcim/tensor.hpp"

namespace dcim {

// DWV1: {magic "DWV1", u32 sample_rate, u32 sample_count} then 16-bit
// little-endian mono PCM. Samples map to [-1, 1) via /32768.
struct WaveFile {
  int sample_rate = 0;
  std::vector<double> samples;
};

WaveFile read_dwv(const std::string& path);
void write_dwv(const std::string& path, const WaveFile& wav);

// DVC1: {magic "DVC1", u32 T, u32 H, u32 W} then T*H*W little-endian f32,
// values clamped to [0,1] on read.
Tensor read_dvc(const std::string& path);
void write_dvc(const std::string& path, const Tensor& frames);

}  // namespace dcim
