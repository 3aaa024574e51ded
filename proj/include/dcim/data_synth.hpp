// Copyright 2026 DCIM-AVSR Authors
// Paired audio-visual synthetic corpora with exact transcripts
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

#include "dcim/audio_frontend.hpp"
#include "dcim/ctc.hpp"
#include "dcim/tensor.hpp"

namespace dcim {

// Each token owns a fixed two-formant tone pair and a fixed mouth-like glyph;
// audio and video cover exactly token_ms per token so the two streams stay
// duration-aligned.
struct SynthSpec {
  int vocab_size = 16;  // tokens excluding blank
  int min_tokens = 2;
  int max_tokens = 4;
  int token_ms = 160;
  int sample_rate = 16000;
  int fps = 25;
  int canvas = 32;
  uint64_t seed = 1;

  void validate() const;
  int samples_per_token() const { return sample_rate * token_ms / 1000; }
  int frames_per_token() const { return fps * token_ms / 1000; }
};

struct Utterance {
  std::string id;
  std::vector<double> waveform;
  Tensor video;  // [T, H, W]
  LabelSequence tokens;
};

struct NoiseSpec {
  double snr_db = 0.0;
  uint64_t seed = 0;
};

// The evaluation sweep grid.
const std::vector<double>& snr_grid();

// Formant pair (hz) of one token; tokens sit close enough in mel space that
// heavy noise makes neighbours confusable while clean audio stays separable.
std::pair<double, double> token_formants(int token);

Utterance synth_utterance(const SynthSpec& spec, const LabelSequence& tokens, const std::string& id);
std::vector<Utterance> generate_corpus(const SynthSpec& spec, int n_utterances);

// White Gaussian noise scaled for an exact signal/noise power ratio.
std::vector<double> mix_noise(const std::vector<double>& signal, const NoiseSpec& spec);
double measure_snr_db(const std::vector<double>& signal, const std::vector<double>& mixed);

// Corpus directory: NNNN.dwv / NNNN.dvc / NNNN.txt plus manifest.csv.
void write_corpus(const std::string& dir, const std::vector<Utterance>& utts, int sample_rate);
std::vector<Utterance> load_corpus(const std::string& dir);

// 1-NN token classification on per-slot mean mel vectors against isolated
// token prototypes; returns accuracy in [0,1].
double token_separability(const SynthSpec& spec, const AudioFrontendConfig& audio_cfg, int n_probe_utts);

}  // namespace dcim
