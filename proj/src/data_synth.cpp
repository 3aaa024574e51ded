// Copyright 2026 DCIM-AVSR Authors
// Token tone/glyph synthesis, noise injection, corpus IO
//
// Licensed under the Apache License, Version 2.0

#include "dcim/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dcim/fileio.hpp"

namespace dcim {

namespace {

constexpr double kPi = 3.14159265358979323846;

// crossfade half-width: 5 ms each side gives a 10 ms linear blend
int fade_samples(const SynthSpec& spec) { return spec.sample_rate / 200; }

}  // namespace

void SynthSpec::validate() const {
  if (vocab_size < 1 || vocab_size > 16) {
    throw std::invalid_argument("synth: vocab_size must lie in [1,16] (distinct tone/glyph pairs)");
  }
  if (min_tokens < 1 || max_tokens < min_tokens) throw std::invalid_argument("synth: bad token count range");
  if (token_ms * fps % 1000 != 0 || token_ms * sample_rate % 1000 != 0) {
    throw std::invalid_argument("synth: token duration must align to whole frames and samples");
  }
  if (canvas < 16) throw std::invalid_argument("synth: canvas must be at least 16");
}

const std::vector<double>& snr_grid() {
  static const std::vector<double> grid = {-5, 0, 5, 10, 15, 20};
  return grid;
}

std::pair<double, double> token_formants(int token) {
  // 4x4 grid of formant centers a few mel bins apart: separable when clean,
  // confusable once broadband noise masks the spectral envelope
  static const double low[4] = {450, 700, 1000, 1350};
  static const double high[4] = {1700, 2100, 2600, 3200};
  const int idx = token - 1;
  return {low[idx % 4], high[(idx / 4) % 4]};
}

namespace {

// Mouth-shaped glyph: bright lip ellipse around a dark aperture whose height
// animates over the token's frames.
void draw_glyph(std::vector<double>& canvas_data, int canvas, int token, int frame, int frames_per_token) {
  const int idx = token - 1;
  const double half_w = 6.0 + 2.0 * ((idx / 4) % 4);
  const double half_h_max = 3.0 + 2.0 * (idx % 4);
  const double open = std::sin(kPi * (frame + 0.5) / frames_per_token);
  const double half_h = std::max(1.0, half_h_max * open);
  const double cx = canvas / 2.0 - 0.5, cy = canvas / 2.0 - 0.5;
  for (int y = 0; y < canvas; ++y) {
    for (int x = 0; x < canvas; ++x) {
      const double rx = (x - cx) / half_w;
      const double ry = (y - cy) / half_h;
      const double r = rx * rx + ry * ry;
      double v = 0.1;
      if (r <= 1.3 && r >= 0.7) {
        v = 0.9;  // lips
      } else if (r < 0.7) {
        v = 0.35;  // aperture
      }
      canvas_data[static_cast<size_t>(y * canvas + x)] = v;
    }
  }
}

}  // namespace

Utterance synth_utterance(const SynthSpec& spec, const LabelSequence& tokens, const std::string& id) {
  spec.validate();
  for (int t : tokens) {
    if (t < 1 || t > spec.vocab_size) throw std::invalid_argument("synth: token out of range");
  }
  const int64_t U = static_cast<int64_t>(tokens.size());
  const int64_t S = spec.samples_per_token();
  const int64_t F = fade_samples(spec);
  Utterance utt;
  utt.id = id;
  utt.tokens = tokens;
  utt.waveform.assign(static_cast<size_t>(U * S), 0.0);

  // Harmonic source with a token-specific two-formant envelope, so energy
  // spreads over the band the way vowels do and broadband noise genuinely
  // masks the token identity at low SNR.
  const double f0 = 120.0;
  const double bw = 120.0;
  const double f_max = std::min(7600.0, spec.sample_rate / 2.0 - 200.0);
  for (int64_t u = 0; u < U; ++u) {
    const auto [f1, f2] = token_formants(tokens[static_cast<size_t>(u)]);
    std::vector<double> amp;
    std::vector<double> phase;
    double power = 0.0;
    for (int k = 1; k * f0 < f_max; ++k) {
      const double f = k * f0;
      const double d1 = (f - f1) / bw;
      const double d2 = (f - f2) / bw;
      const double a = 1.0 / (1.0 + d1 * d1) + 1.0 / (1.0 + d2 * d2) + 0.02;
      amp.push_back(a);
      phase.push_back(2.399963229728653 * k);  // fixed spread, avoids an impulse train
      power += 0.5 * a * a;
    }
    const double gain = 0.22 / std::sqrt(power);

    const int64_t start = u * S;
    const int64_t lo = std::max<int64_t>(0, start - F);
    const int64_t hi = std::min<int64_t>(U * S, start + S + F);
    for (int64_t n = lo; n < hi; ++n) {
      // linear crossfade ramps centered on the slot boundaries
      double env = 1.0;
      const int64_t from_start = n - (start - F);
      const int64_t to_end = (start + S + F) - 1 - n;
      if (from_start < 2 * F) env = std::min(env, (from_start + 0.5) / (2.0 * F));
      if (to_end < 2 * F) env = std::min(env, (to_end + 0.5) / (2.0 * F));
      const double ph = static_cast<double>(n - start) / spec.sample_rate;
      double s = 0.0;
      for (size_t k = 0; k < amp.size(); ++k) {
        s += amp[k] * std::sin(2.0 * kPi * f0 * static_cast<double>(k + 1) * ph + phase[k]);
      }
      utt.waveform[static_cast<size_t>(n)] += env * gain * s;
    }
  }

  const int64_t fpt = spec.frames_per_token();
  const int64_t T = U * fpt;
  std::vector<double> video(static_cast<size_t>(T * spec.canvas * spec.canvas));
  std::vector<double> frame_buf(static_cast<size_t>(spec.canvas * spec.canvas));
  for (int64_t u = 0; u < U; ++u) {
    for (int64_t f = 0; f < fpt; ++f) {
      draw_glyph(frame_buf, spec.canvas, tokens[static_cast<size_t>(u)], static_cast<int>(f), static_cast<int>(fpt));
      std::copy(frame_buf.begin(), frame_buf.end(),
                video.begin() + (u * fpt + f) * spec.canvas * spec.canvas);
    }
  }
  utt.video = Tensor::from({T, spec.canvas, spec.canvas}, std::move(video));
  return utt;
}

std::vector<Utterance> generate_corpus(const SynthSpec& spec, int n_utterances) {
  spec.validate();
  std::vector<Utterance> out;
  out.reserve(static_cast<size_t>(n_utterances));
  Rng base(spec.seed);
  for (int i = 0; i < n_utterances; ++i) {
    Rng rng = base.fork(static_cast<uint64_t>(i));
    const int64_t U = rng.uniform_int(spec.min_tokens, spec.max_tokens);
    LabelSequence tokens;
    for (int64_t u = 0; u < U; ++u) tokens.push_back(static_cast<int>(rng.uniform_int(1, spec.vocab_size)));
    char id[16];
    std::snprintf(id, sizeof(id), "%04d", i);
    out.push_back(synth_utterance(spec, tokens, id));
  }
  return out;
}

std::vector<double> mix_noise(const std::vector<double>& signal, const NoiseSpec& spec) {
  double p_signal = 0.0;
  for (double v : signal) p_signal += v * v;
  p_signal /= static_cast<double>(signal.size());
  if (p_signal <= 0.0) throw std::invalid_argument("mix_noise: zero-power signal, SNR undefined");

  Rng rng(spec.seed);
  std::vector<double> noise(signal.size());
  double p_noise = 0.0;
  for (double& v : noise) {
    v = rng.normal();
    p_noise += v * v;
  }
  p_noise /= static_cast<double>(noise.size());
  const double target = std::pow(10.0, spec.snr_db / 10.0);
  const double scale = std::sqrt(p_signal / (p_noise * target));
  std::vector<double> out(signal.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = signal[i] + scale * noise[i];
  return out;
}

double measure_snr_db(const std::vector<double>& signal, const std::vector<double>& mixed) {
  double p_signal = 0.0, p_noise = 0.0;
  for (size_t i = 0; i < signal.size(); ++i) {
    p_signal += signal[i] * signal[i];
    const double n = mixed[i] - signal[i];
    p_noise += n * n;
  }
  return 10.0 * std::log10(p_signal / p_noise);
}

void write_corpus(const std::string& dir, const std::vector<Utterance>& utts, int sample_rate) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write " + dir + "/manifest.csv");
  manifest << "id,n_tokens,duration_ms\n";
  for (const Utterance& u : utts) {
    WaveFile wav{sample_rate, u.waveform};
    write_dwv(dir + "/" + u.id + ".dwv", wav);
    write_dvc(dir + "/" + u.id + ".dvc", u.video);
    std::ofstream txt(dir + "/" + u.id + ".txt");
    for (size_t i = 0; i < u.tokens.size(); ++i) {
      if (i) txt << " ";
      txt << u.tokens[i];
    }
    txt << "\n";
    manifest << u.id << "," << u.tokens.size() << ","
             << (1000 * u.waveform.size() / static_cast<size_t>(sample_rate)) << "\n";
  }
}

std::vector<Utterance> load_corpus(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.csv");
  if (!manifest) throw std::runtime_error("corpus: cannot open " + dir + "/manifest.csv");
  std::string line;
  std::getline(manifest, line);  // header
  std::vector<Utterance> out;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const std::string id = line.substr(0, line.find(','));
    Utterance u;
    u.id = id;
    u.waveform = read_dwv(dir + "/" + id + ".dwv").samples;
    u.video = read_dvc(dir + "/" + id + ".dvc");
    std::ifstream txt(dir + "/" + id + ".txt");
    if (!txt) throw std::runtime_error("corpus: missing transcript for " + id);
    int tok;
    while (txt >> tok) u.tokens.push_back(tok);
    out.push_back(std::move(u));
  }
  if (out.empty()) throw std::runtime_error("corpus: no utterances listed in " + dir);
  return out;
}

double token_separability(const SynthSpec& spec, const AudioFrontendConfig& audio_cfg, int n_probe_utts) {
  MelExtractor mel(audio_cfg);
  const int64_t M = audio_cfg.n_mels;
  const int64_t frames_per_slot = spec.samples_per_token() / audio_cfg.hop_samples();

  auto slot_mean = [&](const Tensor& m, int64_t slot) {
    std::vector<double> v(static_cast<size_t>(M), 0.0);
    const int64_t lo = slot * frames_per_slot;
    const int64_t hi = std::min<int64_t>(m.shape()[0], (slot + 1) * frames_per_slot);
    for (int64_t t = lo; t < hi; ++t) {
      for (int64_t k = 0; k < M; ++k) v[static_cast<size_t>(k)] += m.at({t, k});
    }
    for (double& x : v) x /= static_cast<double>(hi - lo);
    return v;
  };

  std::vector<std::vector<double>> prototypes;
  SynthSpec proto_spec = spec;
  proto_spec.min_tokens = proto_spec.max_tokens = 1;
  for (int tok = 1; tok <= spec.vocab_size; ++tok) {
    Utterance u = synth_utterance(proto_spec, {tok}, "p");
    prototypes.push_back(slot_mean(mel.log_mel(u.waveform), 0));
  }

  int64_t correct = 0, total = 0;
  std::vector<Utterance> probes = generate_corpus(spec, n_probe_utts);
  for (const Utterance& u : probes) {
    Tensor m = mel.log_mel(u.waveform);
    for (size_t slot = 0; slot < u.tokens.size(); ++slot) {
      const std::vector<double> feat = slot_mean(m, static_cast<int64_t>(slot));
      int best = 0;
      double best_d = 1e300;
      for (int tok = 1; tok <= spec.vocab_size; ++tok) {
        double d = 0.0;
        const auto& p = prototypes[static_cast<size_t>(tok - 1)];
        for (int64_t k = 0; k < M; ++k) {
          const double diff = feat[static_cast<size_t>(k)] - p[static_cast<size_t>(k)];
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = tok;
        }
      }
      total += 1;
      correct += best == u.tokens[slot] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace dcim
