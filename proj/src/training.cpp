// Copyright 2026 DCIM-AVSR Authors
// Optimization loop for the three training stages
//
// Licensed under the Apache License, Version 2.0

#include "dcim/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace dcim {

double lr_at(int64_t step, const OptimizerConfig& cfg) {
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.base_scale * std::pow(static_cast<double>(cfg.schedule_dim), -0.5) *
         std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

bool Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter/gradient count mismatch");
  for (const Tensor& g : grads) {
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (!std::isfinite(g.flat(i))) {
        std::cerr << "warning: non-finite gradient, step rejected\n";
        return false;
      }
    }
  }
  if (m_.empty()) {
    for (const Tensor& g : grads) {
      m_.push_back(Tensor::zeros(g.shape()));
      v_.push_back(Tensor::zeros(g.shape()));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter set changed between steps");

  ++step_;
  const double lr = lr_at(step_, cfg_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t p = 0; p < params.size(); ++p) {
    const Tensor& g = grads[p];
    std::vector<double> m = m_[p].to_vector();
    std::vector<double> v = v_[p].to_vector();
    std::vector<double> w(static_cast<size_t>(params[p]->numel()));
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double gi = g.flat(i);
      m[static_cast<size_t>(i)] = cfg_.beta1 * m[static_cast<size_t>(i)] + (1.0 - cfg_.beta1) * gi;
      v[static_cast<size_t>(i)] = cfg_.beta2 * v[static_cast<size_t>(i)] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[static_cast<size_t>(i)] / bc1;
      const double vhat = v[static_cast<size_t>(i)] / bc2;
      w[static_cast<size_t>(i)] = params[p]->flat(i) - lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    m_[p] = Tensor::from(g.shape(), std::move(m));
    v_[p] = Tensor::from(g.shape(), std::move(v));
    *params[p] = Tensor::from(params[p]->shape(), std::move(w));
  }
  return true;
}

namespace {

Tensor utterance_loss(Model& model, const Utterance& utt, const Tensor& mel, ModelKind stage, const FwdCtx& ctx) {
  switch (stage) {
    case ModelKind::asr:
      return ctc_loss(model.forward_audio_only(mel, ctx), utt.tokens);
    case ModelKind::vsr: {
      VideoClip clip{utt.video, 25};
      return ctc_loss(model.forward_visual_only(clip, ctx), utt.tokens);
    }
    case ModelKind::avsr: {
      VideoClip clip{utt.video, 25};
      AvsrOut out = model.forward_fused(mel, clip, ctx);
      Tensor final_loss = ctc_loss(out.logp, utt.tokens);
      std::vector<Tensor> tap_losses;
      tap_losses.reserve(out.taps.size());
      for (const Tensor& tap : out.taps) tap_losses.push_back(ctc_loss(tap, utt.tokens));
      const double lambda = tap_losses.empty() ? 0.0 : model.config().inter_ctc_lambda;
      return inter_ctc_combine(final_loss, tap_losses, lambda);
    }
  }
  throw std::logic_error("unreachable stage");
}

double corpus_wer(Model& model, const std::vector<Utterance>& corpus, const std::vector<Tensor>& mels,
                  ModelKind stage, std::vector<LabelSequence>* hyps_out) {
  const FwdCtx eval_ctx{};
  std::vector<LabelSequence> refs, hyps;
  for (size_t i = 0; i < corpus.size(); ++i) {
    Tensor logp;
    switch (stage) {
      case ModelKind::asr:
        logp = model.forward_audio_only(mels[i], eval_ctx);
        break;
      case ModelKind::vsr: {
        VideoClip clip{corpus[i].video, 25};
        logp = model.forward_visual_only(clip, eval_ctx);
        break;
      }
      case ModelKind::avsr: {
        VideoClip clip{corpus[i].video, 25};
        logp = model.forward_fused(mels[i], clip, eval_ctx).logp;
        break;
      }
    }
    refs.push_back(corpus[i].tokens);
    hyps.push_back(greedy_decode(logp));
  }
  if (hyps_out) *hyps_out = hyps;
  return wer(refs, hyps);
}

}  // namespace

double evaluate_wer(Model& model, const std::vector<Utterance>& corpus, std::optional<double> snr_db,
                    uint64_t noise_seed, std::vector<LabelSequence>* hyps_out) {
  std::vector<Tensor> mels;
  mels.reserve(corpus.size());
  Rng base(noise_seed);
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (model.kind() == ModelKind::vsr) {
      mels.push_back(Tensor());  // unused
      continue;
    }
    std::vector<double> wav = corpus[i].waveform;
    if (snr_db.has_value()) {
      wav = mix_noise(wav, NoiseSpec{*snr_db, base.fork(i).next_u64()});
    }
    mels.push_back(model.mel_of(wav));
  }
  return corpus_wer(model, corpus, mels, model.kind(), hyps_out);
}

StageResult run_stage(Model& model, const StagePlan& plan, const OptimizerConfig& opt_cfg,
                      const std::vector<Utterance>& train_set, const std::vector<Utterance>* eval_set,
                      const std::string& out_dir) {
  if (train_set.empty()) throw std::invalid_argument("run_stage: empty training corpus");
  if (plan.stage != model.kind()) throw std::invalid_argument("run_stage: plan stage does not match the model kind");
  if (plan.stage == ModelKind::avsr && (plan.init_asr.has_value() != plan.init_vsr.has_value())) {
    throw std::invalid_argument("run_stage: warm-started avsr needs both asr and vsr checkpoints");
  }
  if (plan.init_asr) model.load_matching(*plan.init_asr);
  if (plan.init_vsr) model.load_matching(*plan.init_vsr);

  StageResult result;
  const bool want_files = !out_dir.empty();
  std::string csv_path, ckpt_path;
  if (want_files) {
    std::filesystem::create_directories(out_dir);
    csv_path = out_dir + "/metrics.csv";
    ckpt_path = out_dir + "/" + to_string(plan.stage) + ".ckpt";
    std::ofstream csv(csv_path, std::ios::trunc);
    csv << "epoch,loss,train_wer,eval_wer,lr\n";
  }

  // parameter slots; names matching a freeze prefix are excluded from
  // watching and updates
  ParamRegistry reg = model.registry();
  std::vector<Tensor*> slots;
  for (const auto& [name, t] : reg.entries()) {
    bool frozen = false;
    for (const std::string& pat : plan.freeze) {
      if (name.rfind(pat, 0) == 0) {
        frozen = true;
        break;
      }
    }
    if (!frozen) slots.push_back(t);
  }

  // clean mel features are reused across epochs; noisy variants cached per
  // (utterance, grid index) with a fixed per-pair realization
  const bool needs_audio = plan.stage != ModelKind::vsr;
  std::vector<Tensor> train_mels(train_set.size());
  std::map<std::pair<size_t, size_t>, Tensor> noisy_cache;
  if (needs_audio) {
    for (size_t i = 0; i < train_set.size(); ++i) train_mels[i] = model.mel_of(train_set[i].waveform);
  }
  std::vector<Tensor> eval_mels;
  if (eval_set && needs_audio) {
    for (const Utterance& u : *eval_set) eval_mels.push_back(model.mel_of(u.waveform));
  } else if (eval_set) {
    eval_mels.resize(eval_set->size());
  }

  auto mel_for = [&](size_t utt_idx, size_t variant) -> const Tensor& {
    if (variant == plan.noise_snrs.size()) return train_mels[utt_idx];  // clean
    auto key = std::make_pair(utt_idx, variant);
    auto it = noisy_cache.find(key);
    if (it != noisy_cache.end()) return it->second;
    const uint64_t nseed = fnv1a64(std::to_string(plan.seed) + ":" + std::to_string(utt_idx) + ":" +
                                   std::to_string(variant));
    std::vector<double> wav = mix_noise(train_set[utt_idx].waveform,
                                        NoiseSpec{plan.noise_snrs[variant], nseed});
    return noisy_cache.emplace(key, model.mel_of(wav)).first->second;
  };

  Adam adam(opt_cfg);
  const SpecAugmentConfig& aug = model.config().audio.specaug;
  const bool use_specaug = aug.n_freq_masks > 0 || aug.n_time_masks > 0;

  for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
    Rng erng = Rng(plan.seed).fork(static_cast<uint64_t>(epoch));
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<size_t>(erng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    }

    double epoch_loss = 0.0;
    int64_t n_batches = 0;
    bool finite = true;
    for (size_t start = 0; start < order.size() && finite; start += static_cast<size_t>(plan.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(plan.batch_size));
      Tape tape;
      for (Tensor* s : slots) *s = tape.watch(*s);
      FwdCtx ctx{true, &erng};

      Tensor batch_loss;
      for (size_t bi = start; bi < end; ++bi) {
        const size_t idx = order[bi];
        Tensor mel;
        if (needs_audio) {
          const size_t variant = plan.noise_snrs.empty()
                                     ? plan.noise_snrs.size()
                                     : static_cast<size_t>(erng.uniform_int(0, static_cast<int64_t>(plan.noise_snrs.size())));
          mel = mel_for(idx, variant);
          if (use_specaug) mel = spec_augment(mel, aug, erng);
        }
        Tensor l = utterance_loss(model, train_set[idx], mel, plan.stage, ctx);
        batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      const double loss_value = batch_loss.flat(0);
      if (!std::isfinite(loss_value)) {
        finite = false;
        for (Tensor* s : slots) *s = s->detached();
        break;
      }
      epoch_loss += loss_value;
      ++n_batches;

      GradMap gm = tape.backward(batch_loss);
      std::vector<Tensor> grads;
      grads.reserve(slots.size());
      double sq_norm = 0.0;
      for (Tensor* s : slots) {
        Tensor g = gm.grad_of(*s);
        for (int64_t i = 0; i < g.numel(); ++i) sq_norm += g.flat(i) * g.flat(i);
        grads.push_back(std::move(g));
      }
      if (opt_cfg.clip_norm > 0 && std::isfinite(sq_norm)) {
        const double norm = std::sqrt(sq_norm);
        if (norm > opt_cfg.clip_norm) {
          const double factor = opt_cfg.clip_norm / norm;
          for (Tensor& g : grads) g = scale(g, factor);
        }
      }
      if (!adam.step(slots, grads)) {
        for (Tensor* s : slots) *s = s->detached();  // rejected step: keep old values
      }
    }

    if (!finite) {
      std::cerr << "warning: non-finite loss in epoch " << epoch << ", aborting stage\n";
      result.diverged = true;
      break;
    }

    EpochMetrics row;
    row.epoch = epoch;
    row.loss = epoch_loss / static_cast<double>(n_batches);
    row.train_wer = corpus_wer(model, train_set, train_mels, plan.stage, nullptr);
    row.eval_wer = eval_set ? corpus_wer(model, *eval_set, eval_mels, plan.stage, nullptr)
                            : std::numeric_limits<double>::quiet_NaN();
    row.lr = lr_at(std::max<int64_t>(1, adam.step_count()), opt_cfg);
    result.history.push_back(row);

    if (want_files) {
      std::ofstream csv(csv_path, std::ios::app);
      csv << row.epoch << "," << row.loss << "," << row.train_wer << "," << row.eval_wer << "," << row.lr << "\n";
      csv.flush();
      model.save(ckpt_path);
      result.checkpoint_path = ckpt_path;
    }

    if (plan.stop_at_train_loss > 0 && row.loss <= plan.stop_at_train_loss && row.train_wer == 0.0) break;
  }
  return result;
}

}  // namespace dcim
