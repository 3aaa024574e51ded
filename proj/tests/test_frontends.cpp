// Copyright 2026 DCIM-AVSR Authors
// Audio and visual frontend behavior: spectra, masking, shapes, gradients
//
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dcim/audio_frontend.hpp"
#include "dcim/visual_frontend.hpp"
#include "test_util.hpp"

using namespace dcim;
using namespace dcim::testutil;

namespace {

std::vector<double> tone(double hz, double seconds, int sr, double amp = 0.4) {
  std::vector<double> w(static_cast<size_t>(seconds * sr));
  for (size_t n = 0; n < w.size(); ++n) {
    w[n] = amp * std::sin(2.0 * 3.14159265358979323846 * hz * static_cast<double>(n) / sr);
  }
  return w;
}

}  // namespace

TEST_CASE("log_mel values") {
  PrecisionGuard guard(Precision::Float64);
  AudioFrontendConfig cfg;
  MelExtractor mel(cfg);

  SUBCASE("frame count formula and too-short input") {
    CHECK(MelExtractor::num_frames(400, cfg) == 1);
    CHECK(MelExtractor::num_frames(16000, cfg) == 98);
    CHECK_THROWS_AS(mel.log_mel(std::vector<double>(399, 0.0)), std::invalid_argument);
  }

  SUBCASE("all-zero waveform hits the log floor everywhere") {
    Tensor m = mel.log_mel(std::vector<double>(1600, 0.0));
    const double floor_val = std::log(cfg.log_floor);
    for (int64_t i = 0; i < m.numel(); ++i) CHECK(m.flat(i) == floor_val);
  }

  SUBCASE("pure 440 Hz tone peaks at the nearest mel bin") {
    Tensor m = mel.log_mel(tone(440.0, 0.5, cfg.sample_rate_hz));
    int64_t nearest = 0;
    double best = 1e18;
    const auto& centers = mel.mel_center_hz();
    for (size_t i = 0; i < centers.size(); ++i) {
      const double d = std::abs(centers[i] - 440.0);
      if (d < best) {
        best = d;
        nearest = static_cast<int64_t>(i);
      }
    }
    for (int64_t t = 0; t < m.shape()[0]; ++t) {
      int64_t argmax = 0;
      for (int64_t k = 1; k < m.shape()[1]; ++k) {
        if (m.at({t, k}) > m.at({t, argmax})) argmax = k;
      }
      CHECK(argmax == nearest);
    }
  }

  SUBCASE("power spectrum conserves windowed-frame energy") {
    Rng rng(21);
    std::vector<double> w(2000);
    for (double& v : w) v = rng.uniform(-0.5, 0.5);
    const auto power = mel.frame_power_spectrum(w, 3);
    const int N = cfg.dft_size;
    // one-sided spectrum: interior bins count twice
    double spec_energy = power.front() + power.back();
    for (size_t k = 1; k + 1 < power.size(); ++k) spec_energy += 2.0 * power[k];
    spec_energy /= N;
    double frame_energy = 0.0;
    const auto& win = mel.window();
    const int hop = cfg.hop_samples();
    for (int n = 0; n < cfg.window_samples(); ++n) {
      const double s = w[static_cast<size_t>(3 * hop + n)] * win[static_cast<size_t>(n)];
      frame_energy += s * s;
    }
    CHECK(std::abs(spec_energy - frame_energy) <= 1e-6 * frame_energy);
  }

  SUBCASE("scaling the waveform shifts log-mel by 2 ln c") {
    std::vector<double> w = tone(700.0, 0.2, cfg.sample_rate_hz);
    const double c = 1.7;
    std::vector<double> w2 = w;
    for (double& v : w2) v *= c;
    Tensor a = mel.log_mel(w);
    Tensor b = mel.log_mel(w2);
    const double shift = 2.0 * std::log(c);
    for (int64_t i = 0; i < a.numel(); ++i) {
      if (a.flat(i) > std::log(cfg.log_floor) + 1.0) {
        CHECK(std::abs(b.flat(i) - a.flat(i) - shift) <= 1e-9);
      }
    }
  }

  SUBCASE("every mel filter is non-negative and non-empty") {
    for (const auto& f : mel.filterbank()) {
      double total = 0.0;
      for (double v : f) {
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(total > 0.0);
    }
  }
}

TEST_CASE("spec_augment") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(22);
  Tensor mel = Tensor::uniform({40, 30}, rng, 1.0, 2.0);  // strictly positive so zeros are visible

  SUBCASE("zero masks is the identity") {
    SpecAugmentConfig cfg;
    Rng r(1);
    CHECK(bitwise_equal(spec_augment(mel, cfg, r), mel));
  }

  SUBCASE("mask width clamped to the whole axis") {
    SpecAugmentConfig cfg;
    cfg.n_freq_masks = 1;
    cfg.max_freq_width = 30;
    Rng r(2);
    Tensor out = spec_augment(mel, cfg, r);
    CHECK(out.shape() == mel.shape());
  }

  SUBCASE("only zeros are written, shape unchanged") {
    SpecAugmentConfig cfg{2, 8, 2, 10};
    Rng r(3);
    Tensor out = spec_augment(mel, cfg, r);
    CHECK(out.shape() == mel.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
      const bool untouched = out.flat(i) == mel.flat(i);
      CHECK((untouched || out.flat(i) == 0.0));
    }
  }

  SUBCASE("fixed seed reproduces identical masks") {
    SpecAugmentConfig cfg{2, 8, 2, 10};
    Rng r1(7), r2(7);
    CHECK(bitwise_equal(spec_augment(mel, cfg, r1), spec_augment(mel, cfg, r2)));
  }
}

TEST_CASE("conv subsampler") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(23);
  AudioFrontendConfig cfg;
  cfg.n_mels = 8;
  cfg.subsample_out_dim = 6;
  ConvSubsampler sub;
  sub.init(cfg, rng);

  SUBCASE("length formula: 100 frames -> 25") {
    CHECK(ConvSubsampler::out_len(100) == 25);
    Tensor mel = Tensor::uniform({100, 8}, rng, -1, 1);
    Tensor y = sub.apply(mel);
    CHECK(y.shape() == Shape{25, 6});
  }

  SUBCASE("output dim fixed for any valid input") {
    for (int64_t f : {4, 7, 31}) {
      Tensor mel = Tensor::uniform({f, 8}, rng, -1, 1);
      CHECK(sub.apply(mel).shape()[1] == 6);
    }
    CHECK_THROWS_AS(sub.apply(Tensor::zeros({3, 8})), std::invalid_argument);
  }

  SUBCASE("gradient through the subsampler") {
    Tensor mel = Tensor::uniform({8, 8}, rng, -1, 1);
    Tensor proj = Tensor::uniform({2, 6}, rng, -1, 1);
    auto forward_value = [&]() { return sum(mul(sub.apply(mel), proj)).flat(0); };
    auto analytic = [&]() {
      Tape tape;
      mel = tape.watch(mel);
      sub.conv1_w = tape.watch(sub.conv1_w);
      sub.proj.w = tape.watch(sub.proj.w);
      GradMap gm = tape.backward(sum(mul(sub.apply(mel), proj)));
      std::vector<Tensor> g{gm.grad_of(mel), gm.grad_of(sub.conv1_w), gm.grad_of(sub.proj.w)};
      mel = mel.detached();
      sub.conv1_w = sub.conv1_w.detached();
      sub.proj.w = sub.proj.w.detached();
      return g;
    };
    auto res = finite_diff_check({&mel, &sub.conv1_w, &sub.proj.w}, forward_value, analytic);
    CHECK_MESSAGE(res.max_ratio <= 1.0, res.worst);
  }
}

TEST_CASE("visual frontend") {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(24);
  VisualFrontendConfig cfg;
  cfg.channels = {4, 6, 8, 10};
  cfg.out_dim = 12;
  VisualFrontend vf;
  vf.init(cfg, rng);

  SUBCASE("all-zero clip gives time-constant outputs") {
    VideoClip clip{Tensor::zeros({6, 16, 16}), 25};
    Tensor y = vf.forward(clip);
    CHECK(y.shape() == Shape{3, 12});
    for (int64_t t = 1; t < y.shape()[0]; ++t) {
      for (int64_t d = 0; d < y.shape()[1]; ++d) {
        CHECK(y.at({t, d}) == y.at({0, d}));
      }
    }
  }

  SUBCASE("temporal stride arithmetic: 24 frames -> 12") {
    CHECK(VisualFrontend::out_len(24, cfg) == 12);
    VideoClip clip{Tensor::uniform({24, 16, 16}, rng, 0, 1), 25};
    CHECK(vf.forward(clip).shape()[0] == 12);
  }

  SUBCASE("2D stages are temporally equivariant after the stem") {
    VideoClip clip{Tensor::uniform({4, 16, 16}, rng, 0, 1), 25};
    Tensor s = vf.stem(clip);
    // permute frames of the stem output: reverse order
    const int64_t T = s.shape()[0];
    std::vector<Tensor> rows;
    for (int64_t t = T - 1; t >= 0; --t) rows.push_back(slice(s, 0, t, 1));
    Tensor everted = concat(rows, 0);
    // compare per-frame features before the temporal pool (pool mixes frames)
    VisualFrontendConfig nopool = cfg;
    nopool.temporal_pool_stride = 1;
    VisualFrontend vf2;
    Rng rng2(24);
    vf2.init(nopool, rng2);  // same seed, so identical parameters as vf up to the pool
    Tensor a = vf2.encode_frames(s);
    Tensor b = vf2.encode_frames(everted);
    for (int64_t t = 0; t < T; ++t) {
      for (int64_t d = 0; d < a.shape()[1]; ++d) {
        CHECK(a.at({t, d}) == b.at({T - 1 - t, d}));
      }
    }
  }

  SUBCASE("invalid clips are rejected") {
    VideoClip tiny{Tensor::zeros({2, 8, 8}), 25};
    CHECK_THROWS_AS(vf.forward(tiny), std::invalid_argument);
    VisualFrontendConfig bad = cfg;
    bad.channels = {4, 6};
    VisualFrontend vbad;
    CHECK_THROWS_AS(vbad.init(bad, rng), std::invalid_argument);
  }

  SUBCASE("gradient through stem and blocks at toy dims") {
    VisualFrontendConfig small;
    small.channels = {2, 3};
    small.n_res_blocks = 2;
    small.out_dim = 4;
    small.stem_kernel = {3, 3, 3};
    VisualFrontend vs;
    vs.init(small, rng);
    VideoClip clip{Tensor::uniform({2, 16, 16}, rng, 0, 1), 25};
    Tensor proj = Tensor::uniform({1, 4}, rng, -1, 1);

    std::vector<Tensor*> slots = {&clip.frames};
    ParamRegistry reg;
    vs.reg("vf", reg);
    // check a representative subset of parameters (full set is slow here)
    std::vector<std::string> names = {"vf.stem.w", "vf.block0.conv1.w", "vf.block1.short.w", "vf.proj.w"};
    for (const auto& n : names) slots.push_back(reg.find(n));

    auto forward_value = [&]() { return sum(mul(vs.forward(clip), proj)).flat(0); };
    auto analytic = [&]() {
      Tape tape;
      for (Tensor* s : slots) *s = tape.watch(*s);
      GradMap gm = tape.backward(sum(mul(vs.forward(clip), proj)));
      std::vector<Tensor> g;
      for (Tensor* s : slots) {
        g.push_back(gm.grad_of(*s));
        *s = s->detached();
      }
      return g;
    };
    auto res = finite_diff_check(slots, forward_value, analytic, 1e-5, 1e-4, 1e-7);
    CHECK_MESSAGE(res.max_ratio <= 1.0, res.worst);
  }
}
