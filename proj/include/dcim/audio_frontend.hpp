// Copyright 2026 DCIM-AVSR Authors
// Log-mel extraction, SpecAugment, and the 2D convolutional subsampler
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <vector>

#include "dcim/nn.hpp"
#include "dcim/tensor.hpp"

namespace dcim {

struct SpecAugmentConfig {
  int n_freq_masks = 0;
  int max_freq_width = 0;
  int n_time_masks = 0;
  int max_time_width = 0;
};

struct AudioFrontendConfig {
  int sample_rate_hz = 16000;
  int window_ms = 25;
  int hop_ms = 10;
  int dft_size = 512;
  int n_mels = 80;
  double log_floor = 1e-10;
  SpecAugmentConfig specaug;
  int subsample_out_dim = 180;

  int window_samples() const { return sample_rate_hz * window_ms / 1000; }
  int hop_samples() const { return sample_rate_hz * hop_ms / 1000; }
  void validate() const;
};

// Hann window, direct DFT power spectrum, HTK-scale triangular mel
// filterbank, natural log with a floor. Deliberately O(n^2) per frame.
class MelExtractor {
 public:
  explicit MelExtractor(AudioFrontendConfig cfg);

  // [frames, n_mels]; throws when the waveform is shorter than one window.
  Tensor log_mel(const std::vector<double>& waveform) const;

  static int64_t num_frames(int64_t samples, const AudioFrontendConfig& cfg);

  const std::vector<double>& mel_center_hz() const { return centers_hz_; }
  const std::vector<std::vector<double>>& filterbank() const { return filters_; }

  // One-sided power spectrum (bins 0..dft/2) of one windowed frame; used by
  // the energy-conservation test.
  std::vector<double> frame_power_spectrum(const std::vector<double>& waveform, int64_t frame) const;
  const std::vector<double>& window() const { return window_; }
  const AudioFrontendConfig& config() const { return cfg_; }

 private:
  AudioFrontendConfig cfg_;
  std::vector<double> window_;
  std::vector<double> dft_cos_, dft_sin_;  // [bins][n] flattened
  std::vector<std::vector<double>> filters_;
  std::vector<double> centers_hz_;
};

// Zeroes up to n_freq_masks frequency bands and n_time_masks time bands,
// widths uniform in [0, max]; widths clamp to the axis, never an error.
// Callers apply this at train time only.
Tensor spec_augment(const Tensor& mel, const SpecAugmentConfig& cfg, Rng& rng);

// Two stride-2 2D convolutions over (time, frequency) with swish, frequency
// axis flattened into a linear projection to the first stage width.
struct ConvSubsampler {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  LinearLayer proj;
  int n_mels = 0;
  int out_dim = 0;

  void init(const AudioFrontendConfig& cfg, Rng& rng);
  Tensor apply(const Tensor& mel) const;  // [F, n_mels] -> [out_len(F), out_dim]
  void reg(const std::string& prefix, ParamRegistry& r);

  static int64_t out_len(int64_t frames) {
    const int64_t l1 = (frames - 1) / 2 + 1;
    return (l1 - 1) / 2 + 1;
  }
  static int64_t freq_out(int64_t mels) {
    const int64_t f1 = (mels - 1) / 2 + 1;
    return (f1 - 1) / 2 + 1;
  }
};

}  // namespace dcim
