// Copyright 2026 DCIM-AVSR Authors
// Mel spectrogram pipeline and subsampler
//
// Licensed under the Apache License, Version 2.0

#include "dcim/audio_frontend.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcim {

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

void AudioFrontendConfig::validate() const {
  if (hop_ms > window_ms) throw std::invalid_argument("audio frontend: hop must not exceed the window");
  if (n_mels > dft_size / 2 + 1) {
    throw std::invalid_argument("audio frontend: n_mels exceeds the number of spectrum bins");
  }
  if (window_samples() > dft_size) {
    throw std::invalid_argument("audio frontend: window longer than the DFT size");
  }
  if (log_floor <= 0.0) throw std::invalid_argument("audio frontend: log floor must be positive");
}

MelExtractor::MelExtractor(AudioFrontendConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int win = cfg_.window_samples();
  window_.resize(static_cast<size_t>(win));
  for (int n = 0; n < win; ++n) {
    window_[static_cast<size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / (win - 1));
  }

  const int N = cfg_.dft_size;
  const int bins = N / 2 + 1;
  dft_cos_.resize(static_cast<size_t>(bins) * N);
  dft_sin_.resize(static_cast<size_t>(bins) * N);
  for (int k = 0; k < bins; ++k) {
    for (int n = 0; n < N; ++n) {
      const double a = 2.0 * kPi * k * n / N;
      dft_cos_[static_cast<size_t>(k) * N + n] = std::cos(a);
      dft_sin_[static_cast<size_t>(k) * N + n] = std::sin(a);
    }
  }

  // HTK mel triangles over the bin center frequencies, 0 .. Nyquist.
  const double mel_hi = hz_to_mel(cfg_.sample_rate_hz / 2.0);
  const int M = cfg_.n_mels;
  std::vector<double> edges(static_cast<size_t>(M) + 2);
  for (int m = 0; m < M + 2; ++m) edges[static_cast<size_t>(m)] = mel_to_hz(mel_hi * m / (M + 1));
  centers_hz_.assign(edges.begin() + 1, edges.end() - 1);

  filters_.assign(static_cast<size_t>(M), std::vector<double>(static_cast<size_t>(bins), 0.0));
  for (int m = 0; m < M; ++m) {
    const double lo = edges[static_cast<size_t>(m)];
    const double mid = edges[static_cast<size_t>(m) + 1];
    const double hi = edges[static_cast<size_t>(m) + 2];
    bool any = false;
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg_.sample_rate_hz / N;
      double w = 0.0;
      if (f > lo && f <= mid) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      if (w > 0.0) any = true;
      filters_[static_cast<size_t>(m)][static_cast<size_t>(k)] = w;
    }
    if (!any) {
      throw std::invalid_argument("audio frontend: mel filter " + std::to_string(m) +
                                  " covers no spectrum bin; reduce n_mels or enlarge the DFT");
    }
  }
}

int64_t MelExtractor::num_frames(int64_t samples, const AudioFrontendConfig& cfg) {
  const int64_t win = cfg.window_samples();
  if (samples < win) return 0;
  return 1 + (samples - win) / cfg.hop_samples();
}

std::vector<double> MelExtractor::frame_power_spectrum(const std::vector<double>& waveform, int64_t frame) const {
  const int win = cfg_.window_samples();
  const int hop = cfg_.hop_samples();
  const int N = cfg_.dft_size;
  const int bins = N / 2 + 1;
  const int64_t start = frame * hop;
  if (start + win > static_cast<int64_t>(waveform.size())) {
    throw std::invalid_argument("frame_power_spectrum: frame out of range");
  }
  std::vector<double> buf(static_cast<size_t>(N), 0.0);
  for (int n = 0; n < win; ++n) {
    buf[static_cast<size_t>(n)] = waveform[static_cast<size_t>(start + n)] * window_[static_cast<size_t>(n)];
  }
  std::vector<double> power(static_cast<size_t>(bins));
  for (int k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    const double* ck = dft_cos_.data() + static_cast<size_t>(k) * N;
    const double* sk = dft_sin_.data() + static_cast<size_t>(k) * N;
    for (int n = 0; n < N; ++n) {
      re += buf[static_cast<size_t>(n)] * ck[n];
      im -= buf[static_cast<size_t>(n)] * sk[n];
    }
    power[static_cast<size_t>(k)] = re * re + im * im;
  }
  return power;
}

Tensor MelExtractor::log_mel(const std::vector<double>& waveform) const {
  const int64_t frames = num_frames(static_cast<int64_t>(waveform.size()), cfg_);
  if (frames < 1) {
    throw std::invalid_argument("log_mel: waveform shorter than one window (" +
                                std::to_string(waveform.size()) + " < " +
                                std::to_string(cfg_.window_samples()) + " samples)");
  }
  const int M = cfg_.n_mels;
  const int bins = cfg_.dft_size / 2 + 1;
  std::vector<double> out(static_cast<size_t>(frames) * M);
  for (int64_t t = 0; t < frames; ++t) {
    const std::vector<double> power = frame_power_spectrum(waveform, t);
    for (int m = 0; m < M; ++m) {
      double acc = 0.0;
      const std::vector<double>& filt = filters_[static_cast<size_t>(m)];
      for (int k = 0; k < bins; ++k) acc += filt[static_cast<size_t>(k)] * power[static_cast<size_t>(k)];
      out[static_cast<size_t>(t * M + m)] = std::log(std::max(acc, cfg_.log_floor));
    }
  }
  return Tensor::from({frames, M}, std::move(out));
}

Tensor spec_augment(const Tensor& mel, const SpecAugmentConfig& cfg, Rng& rng) {
  const int64_t F = mel.shape()[0], M = mel.shape()[1];
  std::vector<double> d = mel.to_vector();
  for (int i = 0; i < cfg.n_freq_masks; ++i) {
    int64_t width = rng.uniform_int(0, cfg.max_freq_width);
    width = std::min<int64_t>(width, M);
    const int64_t start = rng.uniform_int(0, M - width);
    for (int64_t t = 0; t < F; ++t) {
      for (int64_t m = start; m < start + width; ++m) d[static_cast<size_t>(t * M + m)] = 0.0;
    }
  }
  for (int i = 0; i < cfg.n_time_masks; ++i) {
    int64_t width = rng.uniform_int(0, cfg.max_time_width);
    width = std::min<int64_t>(width, F);
    const int64_t start = rng.uniform_int(0, F - width);
    for (int64_t t = start; t < start + width; ++t) {
      for (int64_t m = 0; m < M; ++m) d[static_cast<size_t>(t * M + m)] = 0.0;
    }
  }
  return Tensor::from(mel.shape(), std::move(d));
}

void ConvSubsampler::init(const AudioFrontendConfig& cfg, Rng& rng) {
  n_mels = cfg.n_mels;
  out_dim = cfg.subsample_out_dim;
  const int64_t C = out_dim;
  conv1_w = xavier_uniform(9, 9 * C, {C, 1, 3, 3}, rng);
  conv1_b = Tensor::zeros({C});
  conv2_w = xavier_uniform(9 * C, 9 * C, {C, C, 3, 3}, rng);
  conv2_b = Tensor::zeros({C});
  proj.init(C * freq_out(n_mels), out_dim, rng);
}

Tensor ConvSubsampler::apply(const Tensor& mel) const {
  const int64_t F = mel.shape()[0];
  if (F < 4) {
    throw std::invalid_argument("conv_subsample: need at least 4 frames, got " + std::to_string(F));
  }
  Tensor x = reshape(mel, {1, F, mel.shape()[1]});
  x = swish(conv2d(x, conv1_w, conv1_b, 2, 2));
  x = swish(conv2d(x, conv2_w, conv2_b, 2, 2));
  // [C, F', M'] -> [F', C*M']
  const int64_t C = x.shape()[0], Fo = x.shape()[1], Mo = x.shape()[2];
  x = transpose(x, 0, 1);
  x = reshape(x, {Fo, C * Mo});
  return proj.apply(x);
}

void ConvSubsampler::reg(const std::string& prefix, ParamRegistry& r) {
  r.add(prefix + ".conv1.w", &conv1_w);
  r.add(prefix + ".conv1.b", &conv1_b);
  r.add(prefix + ".conv2.w", &conv2_w);
  r.add(prefix + ".conv2.b", &conv2_b);
  proj.reg(prefix + ".proj", r);
}

}  // namespace dcim
