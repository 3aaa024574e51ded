// Copyright 2026 DCIM-AVSR Authors
// The verification checks behind the verify command
//
// Licensed under the Apache License, Version 2.0

#include "dcim/verify.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "dcim/data_synth.hpp"
#include "dcim/model.hpp"
#include "dcim/oracles.hpp"

namespace dcim {

namespace {

using oracle::bitwise_equal;
using oracle::finite_diff_check;
using oracle::GradCheckResult;

ModelConfig tiny_cfg() {
  ModelConfig cfg = ModelConfig::toy_preset();
  cfg.audio_stage_dims = {8, 8, 12};
  cfg.audio_stage_layers = {2, 2, 1};
  cfg.visual_layers = 2;
  cfg.n_heads = 2;
  cfg.conv_kernel = 3;
  cfg.ff_expansion = 2;
  cfg.vocab = 5;
  cfg.adapter_bottleneck = 4;
  cfg.fusion_bottleneck = 4;
  cfg.audio.subsample_out_dim = 8;
  cfg.audio.n_mels = 16;
  cfg.visual.out_dim = 8;
  cfg.visual.channels = {2, 3};
  cfg.visual.n_res_blocks = 2;
  return cfg;
}

GradCheckResult check_params(const std::vector<Tensor*>& slots, const std::function<Tensor()>& loss, double rtol,
                             double atol) {
  auto forward_value = [&]() { return loss().flat(0); };
  auto analytic = [&]() {
    Tape tape;
    for (Tensor* s : slots) *s = tape.watch(*s);
    GradMap gm = tape.backward(loss());
    std::vector<Tensor> g;
    for (Tensor* s : slots) {
      g.push_back(gm.grad_of(*s));
      *s = s->detached();
    }
    return g;
  };
  return finite_diff_check(slots, forward_value, analytic, 1e-5, rtol, atol);
}

VerifyCheck gradient_integrity() {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(1234);
  double worst = 0.0;
  std::string worst_site = "none";
  auto track = [&](const std::string& site, const GradCheckResult& r) {
    if (r.max_ratio > worst) {
      worst = r.max_ratio;
      worst_site = site + ": " + r.worst;
    }
  };

  // primitives through a generic projection loss
  {
    Tensor x = Tensor::uniform({4, 6}, rng, -1, 1);
    Tensor w = Tensor::uniform({6, 6}, rng, -1, 1);
    Tensor b = Tensor::uniform({6}, rng, -0.5, 0.5);
    Tensor proj = Tensor::uniform({4, 6}, rng, -1, 1);
    Tensor mask = Tensor::from({4, 6}, [&] {
      std::vector<double> m(24, 0.0);
      for (int i = 0; i < 24; i += 5) m[static_cast<size_t>(i)] = 1.0;
      return m;
    }());
    track("primitives.mix", check_params({&x, &w, &b}, [&]() {
            Tensor y = linear(x, w, b);
            y = add(mul(sigmoid(y), swish(y)), relu(y));
            y = masked_fill(y, mask, 0.5);
            y = layernorm(y, b, b, 1e-5);
            Tensor s = softmax(y, -1);
            Tensor ls = log_softmax(y, -1);
            Tensor g = glu(concat({y, s}, -1));
            Tensor t = transpose(reshape(mean_axis(g, 1, true), {4, 1}), 0, 1);
            return add(sum(mul(g, proj)), add(sum(mul(s, ls)), sum(t)));
          }, 1e-6, 1e-9));

    Tensor dw = Tensor::uniform({6, 3}, rng, -1, 1);
    Tensor db = Tensor::uniform({6}, rng, -0.5, 0.5);
    track("primitives.conv1d", check_params({&x, &dw, &db}, [&]() {
            return sum(mul(conv1d_depthwise(x, dw, db, 2), Tensor::ones({2, 6})));
          }, 1e-6, 1e-9));

    Tensor img = Tensor::uniform({2, 1, 5, 5}, rng, -1, 1);
    Tensor kw = Tensor::uniform({2, 1, 3, 3}, rng, -1, 1);
    Tensor kb = Tensor::uniform({2}, rng, -0.5, 0.5);
    track("primitives.conv2d", check_params({&img, &kw, &kb}, [&]() {
            return sum(swish(conv2d(img, kw, kb, 2, 2)));
          }, 1e-6, 1e-9));

    Tensor vol = Tensor::uniform({1, 3, 4, 4}, rng, -1, 1);
    Tensor vw = Tensor::uniform({2, 1, 3, 3, 3}, rng, -1, 1);
    Tensor vb = Tensor::uniform({2}, rng, -0.5, 0.5);
    track("primitives.conv3d", check_params({&vol, &vw, &vb}, [&]() {
            return sum(avg_pool_time(reshape(conv3d(vol, vw, vb, 1, 2, 2), {2 * 3, 4}), 2));
          }, 1e-6, 1e-9));

    Tensor rs = Tensor::uniform({2, 3, 5}, rng, -1, 1);
    track("primitives.rel_shift", check_params({&rs}, [&]() { return sum(rel_shift(rs)); }, 1e-6, 1e-9));
  }

  // one standard conformer block
  {
    ConformerBlockConfig bc;
    bc.dim = 8;
    bc.n_heads = 2;
    bc.conv_kernel = 3;
    bc.ff_expansion = 2;
    ConformerBlock blk;
    blk.init(bc, rng);
    Tensor x = Tensor::uniform({4, 8}, rng, -1, 1);
    Tensor proj = Tensor::uniform({4, 8}, rng, -1, 1);
    ParamRegistry reg;
    blk.reg("b", reg);
    std::vector<Tensor*> slots = {&x};
    for (const auto& [n, t] : reg.entries()) slots.push_back(t);
    const FwdCtx ev{};
    track("conformer_block",
          check_params(slots, [&]() { return sum(mul(blk.forward(x, nullptr, ev), proj)); }, 1e-4, 1e-7));
  }

  // one full interaction layer, both streams
  {
    ConformerBlockConfig bc;
    bc.dim = 8;
    bc.n_heads = 2;
    bc.conv_kernel = 3;
    bc.ff_expansion = 2;
    DCIMMode mode;
    DCIMStack stack;
    stack.init(1, bc, 4, mode, rng);
    DCIMLayer& layer = stack.layers_[0];
    layer.adapter_attn.l3.w = Tensor::uniform(layer.adapter_attn.l3.w.shape(), rng, -0.3, 0.3);
    layer.adapter_conv.l3.w = Tensor::uniform(layer.adapter_conv.l3.w.shape(), rng, -0.3, 0.3);
    Tensor xa = Tensor::uniform({4, 8}, rng, -1, 1);
    Tensor xv = Tensor::uniform({4, 8}, rng, -1, 1);
    Tensor pa = Tensor::uniform({4, 8}, rng, -1, 1);
    Tensor pv = Tensor::uniform({4, 8}, rng, -1, 1);
    ParamRegistry reg;
    layer.reg("a", "v", "d", reg);
    std::vector<Tensor*> slots = {&xa, &xv};
    for (const auto& [n, t] : reg.entries()) slots.push_back(t);
    const FwdCtx ev{};
    track("dcim_layer", check_params(slots, [&]() {
            auto out = layer.forward(xa, xv, mode, ev);
            return add(sum(mul(out.audio, pa)), sum(mul(out.visual, pv)));
          }, 1e-4, 1e-7));
  }

  // ctc end-to-end through log-softmax
  {
    Tensor logits = Tensor::uniform({5, 4}, rng, -1, 1);
    track("ctc_end_to_end",
          check_params({&logits}, [&]() { return ctc_loss(log_softmax(logits, -1), {2, 1}); }, 1e-4, 1e-7));
  }

  VerifyCheck c;
  c.name = "gradient integrity";
  c.pass = worst <= 1.0;
  std::ostringstream os;
  os << "worst tolerance ratio " << worst << " (<= 1 passes) at " << worst_site;
  c.detail = os.str();
  return c;
}

VerifyCheck ctc_oracle_grid() {
  PrecisionGuard guard(Precision::Float64);
  Rng rng(777);
  double worst = 0.0;
  int64_t cells = 0;
  for (int64_t T = 1; T <= 6; ++T) {
    for (int64_t U = 0; U <= 3; ++U) {
      for (int64_t V = 2; V <= 4; ++V) {
        for (int rep = 0; rep < 50; ++rep) {
          Tensor logp = log_softmax(Tensor::uniform({T, V}, rng, -2, 2), -1);
          LabelSequence y;
          for (int64_t u = 0; u < U; ++u) y.push_back(static_cast<int>(rng.uniform_int(1, V - 1)));
          const double dp = ctc_loss(logp, y).flat(0);
          const double brute = oracle::ctc_loss_by_enumeration(logp, y);
          ++cells;
          if (std::isinf(dp) || std::isinf(brute)) {
            if (std::isinf(dp) != std::isinf(brute)) worst = 1e9;
            continue;
          }
          worst = std::max(worst, std::abs(dp - brute));
        }
      }
    }
  }
  VerifyCheck c;
  c.name = "ctc dp vs enumeration";
  c.pass = worst <= 1e-9;
  std::ostringstream os;
  os << cells << " draws, max |dp - enumeration| = " << worst;
  c.detail = os.str();
  return c;
}

VerifyCheck rate_alignment() {
  PrecisionGuard guard(Precision::Float64);
  SynthSpec spec;
  spec.vocab_size = 16;
  spec.min_tokens = 1;
  spec.max_tokens = 6;
  spec.seed = 99;
  Model m = Model::build(ModelConfig::toy_preset(), ModelKind::avsr, 5);
  int64_t worst = 0;
  bool ctc_ok = true;
  for (const Utterance& u : generate_corpus(spec, 20)) {
    const int64_t frames = MelExtractor::num_frames(static_cast<int64_t>(u.waveform.size()), m.config().audio);
    const int64_t la = m.audio_len_after_stage1(frames);
    const int64_t lv = m.visual_out_len(u.video.shape()[0]);
    worst = std::max(worst, std::abs(la - lv));
    int64_t repeats = 0;
    for (size_t i = 1; i < u.tokens.size(); ++i) repeats += u.tokens[i] == u.tokens[i - 1] ? 1 : 0;
    ctc_ok = ctc_ok && std::min(la, lv) >= static_cast<int64_t>(u.tokens.size()) + repeats;
  }
  VerifyCheck c;
  c.name = "rate alignment";
  c.pass = worst <= 1 && ctc_ok;
  c.detail = "max |audio_len - visual_len| = " + std::to_string(worst) +
             (ctc_ok ? ", label paths feasible" : ", INFEASIBLE label path found");
  return c;
}

VerifyCheck warm_start_no_regression() {
  PrecisionGuard guard(Precision::Float64);
  ModelConfig cfg = tiny_cfg();
  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string asr_path = dir + "/dcim_verify_asr.ckpt";
  const std::string vsr_path = dir + "/dcim_verify_vsr.ckpt";
  {
    Model asr = Model::build(cfg, ModelKind::asr, 61);
    asr.save(asr_path);
    Model vsr = Model::build(cfg, ModelKind::vsr, 62);
    vsr.save(vsr_path);
  }
  Model asr = Model::load(asr_path);
  Model avsr = Model::build(cfg, ModelKind::avsr, 63);
  avsr.load_matching(asr_path);
  avsr.load_matching(vsr_path);

  Rng rng(64);
  Tensor mel = Tensor::uniform({34, 16}, rng, -2, 2);
  VideoClip clip{Tensor::uniform({10, 16, 16}, rng, 0, 1), 25};
  const FwdCtx ev{};
  Tensor a = asr.forward_audio_only(mel, ev);
  Tensor f = avsr.forward_fused(mel, clip, ev).logp;
  std::filesystem::remove(asr_path);
  std::filesystem::remove(vsr_path);

  VerifyCheck c;
  c.name = "warm-start no-regression";
  c.pass = bitwise_equal(a, f);
  c.detail = c.pass ? "fused logits equal the audio-only model exactly"
                    : "fused logits deviate, max diff " + std::to_string(oracle::max_abs_diff(a, f));
  return c;
}

VerifyCheck checkpoint_round_trip() {
  PrecisionGuard guard(Precision::Float32);
  ModelConfig cfg = tiny_cfg();
  Model m = Model::build(cfg, ModelKind::avsr, 71);
  Rng rng(72);
  Tensor mel = Tensor::uniform({34, 16}, rng, -2, 2);
  VideoClip clip{Tensor::uniform({10, 16, 16}, rng, 0, 1), 25};
  const FwdCtx ev{};
  Tensor before = m.forward_fused(mel, clip, ev).logp;
  const std::string path = std::filesystem::temp_directory_path().string() + "/dcim_verify_rt.ckpt";
  m.save(path);
  Model loaded = Model::load(path);
  Tensor after = loaded.forward_fused(mel, clip, ev).logp;
  std::filesystem::remove(path);

  VerifyCheck c;
  c.name = "checkpoint round-trip";
  c.pass = bitwise_equal(before, after);
  c.detail = c.pass ? "forward outputs bit-identical after save/load" : "outputs differ after reload";
  return c;
}

}  // namespace

VerifyReport run_verification() {
  VerifyReport report;
  report.checks.push_back(gradient_integrity());
  report.checks.push_back(ctc_oracle_grid());
  report.checks.push_back(rate_alignment());
  report.checks.push_back(warm_start_no_regression());
  report.checks.push_back(checkpoint_round_trip());
  return report;
}

}  // namespace dcim
