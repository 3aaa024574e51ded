// Copyright 2026 DCIM-AVSR Authors
// Building, running, counting, and serializing the recognizer variants
//
// Licensed under the Apache License, Version 2.0

#include "dcim/model.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dcim {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_int_list(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::vector<int64_t> w(v.begin(), v.end());
  return fmt_int_list(w);
}

std::vector<int64_t> parse_int_list(const std::string& s) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config: expected a boolean, got '" + s + "'");
}

std::string direction_str(FusionDirection d) {
  switch (d) {
    case FusionDirection::dual: return "dual";
    case FusionDirection::v_to_a: return "v_to_a";
    case FusionDirection::a_to_v: return "a_to_v";
  }
  return "dual";
}

FusionDirection direction_from(const std::string& s) {
  if (s == "dual") return FusionDirection::dual;
  if (s == "v_to_a") return FusionDirection::v_to_a;
  if (s == "a_to_v") return FusionDirection::a_to_v;
  throw std::invalid_argument("config: unknown fusion direction '" + s + "'");
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::asr: return "asr";
    case ModelKind::vsr: return "vsr";
    case ModelKind::avsr: return "avsr";
  }
  return "asr";
}

ModelKind model_kind_from(const std::string& s) {
  if (s == "asr") return ModelKind::asr;
  if (s == "vsr") return ModelKind::vsr;
  if (s == "avsr") return ModelKind::avsr;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

ModelConfig ModelConfig::paper_preset() {
  ModelConfig cfg;
  cfg.visual.channels = {64, 128, 256, 512};
  cfg.visual.blocks_per_stage = 2;  // ResNet-18 stage layout
  cfg.visual.out_dim = 256;
  cfg.audio.specaug = {2, 27, 2, 40};
  return cfg;
}

ModelConfig ModelConfig::toy_preset() {
  ModelConfig cfg;
  cfg.audio_stage_dims = {24, 32, 40};
  cfg.audio.subsample_out_dim = 24;
  cfg.adapter_bottleneck = 24;
  cfg.fusion_bottleneck = 32;
  cfg.vocab = 17;  // 16 tokens + blank
  cfg.dropout = 0.0;
  cfg.visual.channels = {8, 16, 32, 64};
  cfg.visual.blocks_per_stage = 1;
  cfg.visual.out_dim = 32;
  return cfg;
}

void ModelConfig::validate() const {
  if (audio_stage_dims.size() != 3 || audio_stage_layers.size() != 3) {
    throw std::invalid_argument("model config: exactly three audio stages are required");
  }
  if (visual.out_dim != audio_stage_dims[1]) {
    throw std::invalid_argument("model config: the visual stage width (" + std::to_string(visual.out_dim) +
                                ") must equal the middle audio stage width (" + std::to_string(audio_stage_dims[1]) +
                                ") for pairing");
  }
  if (visual_layers != audio_stage_layers[1]) {
    throw std::invalid_argument("model config: the visual stage must have the same layer count as the middle audio "
                                "stage for pairing");
  }
  if (audio.subsample_out_dim != audio_stage_dims[0]) {
    throw std::invalid_argument("model config: the subsampler output width must equal the first audio stage width");
  }
  for (int64_t d : audio_stage_dims) {
    if (d % n_heads != 0) {
      throw std::invalid_argument("model config: stage width " + std::to_string(d) +
                                  " is not divisible by the head count");
    }
  }
  if ((audio_stage_dims[0] * stage1_group_size) % n_heads != 0) {
    throw std::invalid_argument("model config: grouped attention width is not divisible by the head count");
  }
  if (conv_kernel % 2 == 0) throw std::invalid_argument("model config: conv kernel must be odd");
  if (vocab < 2) throw std::invalid_argument("model config: vocabulary must hold blank plus at least one token");
  if (inter_ctc_lambda < 0.0 || inter_ctc_lambda > 1.0) {
    throw std::invalid_argument("model config: inter-ctc lambda must lie in [0,1]");
  }
  if (tap_stream != "audio" && tap_stream != "visual") {
    throw std::invalid_argument("model config: tap_stream must be 'audio' or 'visual'");
  }
  if (fusion_point != "stage3_entry" && fusion_point != "stage3_exit") {
    throw std::invalid_argument("model config: fusion_point must be 'stage3_entry' or 'stage3_exit'");
  }
  audio.validate();
  visual.validate();
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> p;
  p.emplace_back("audio_dims", fmt_int_list(audio_stage_dims));
  p.emplace_back("audio_layers", fmt_int_list(audio_stage_layers));
  p.emplace_back("stage1_group", std::to_string(stage1_group_size));
  p.emplace_back("stage1_downsample", stage1_downsample ? "true" : "false");
  p.emplace_back("visual_layers", std::to_string(visual_layers));
  p.emplace_back("heads", std::to_string(n_heads));
  p.emplace_back("conv_kernel", std::to_string(conv_kernel));
  p.emplace_back("ff_expansion", std::to_string(ff_expansion));
  p.emplace_back("vocab", std::to_string(vocab));
  p.emplace_back("adapter_bottleneck", std::to_string(adapter_bottleneck));
  p.emplace_back("fusion_bottleneck", std::to_string(fusion_bottleneck));
  p.emplace_back("dcim_direction", direction_str(dcim_mode.direction));
  p.emplace_back("dcim_purification", dcim_mode.purification_on ? "true" : "false");
  p.emplace_back("dcim_completion", dcim_mode.completion_on ? "true" : "false");
  p.emplace_back("dcim_layers", dcim_mode.layers == DcimLayerSpan::all ? "all" : "last_two");
  p.emplace_back("dcim_per_path", dcim_mode.per_path_adapters ? "true" : "false");
  p.emplace_back("tap_stream", tap_stream);
  p.emplace_back("fusion_point", fusion_point);
  p.emplace_back("inter_lambda", fmt_double(inter_ctc_lambda));
  p.emplace_back("dropout", fmt_double(dropout));
  p.emplace_back("relative_positions", relative_positions ? "true" : "false");
  p.emplace_back("audio_sample_rate", std::to_string(audio.sample_rate_hz));
  p.emplace_back("audio_window_ms", std::to_string(audio.window_ms));
  p.emplace_back("audio_hop_ms", std::to_string(audio.hop_ms));
  p.emplace_back("audio_dft", std::to_string(audio.dft_size));
  p.emplace_back("audio_mels", std::to_string(audio.n_mels));
  p.emplace_back("audio_log_floor", fmt_double(audio.log_floor));
  p.emplace_back("specaug_freq_masks", std::to_string(audio.specaug.n_freq_masks));
  p.emplace_back("specaug_freq_width", std::to_string(audio.specaug.max_freq_width));
  p.emplace_back("specaug_time_masks", std::to_string(audio.specaug.n_time_masks));
  p.emplace_back("specaug_time_width", std::to_string(audio.specaug.max_time_width));
  p.emplace_back("subsample_dim", std::to_string(audio.subsample_out_dim));
  p.emplace_back("visual_stem_kernel",
                 fmt_int_list(std::vector<int>{visual.stem_kernel[0], visual.stem_kernel[1], visual.stem_kernel[2]}));
  p.emplace_back("visual_stem_stride",
                 fmt_int_list(std::vector<int>{visual.stem_stride[0], visual.stem_stride[1], visual.stem_stride[2]}));
  p.emplace_back("visual_blocks", std::to_string(visual.n_res_blocks));
  p.emplace_back("visual_channels", fmt_int_list(visual.channels));
  p.emplace_back("visual_blocks_per_stage", std::to_string(visual.blocks_per_stage));
  p.emplace_back("visual_out_dim", std::to_string(visual.out_dim));
  p.emplace_back("visual_pool_stride", std::to_string(visual.temporal_pool_stride));
  return p;
}

void ModelConfig::set_field(const std::string& key, const std::string& value) {
  auto as_i64_list = [&]() { return parse_int_list(value); };
  if (key == "audio_dims") {
    audio_stage_dims = as_i64_list();
  } else if (key == "audio_layers") {
    audio_stage_layers.clear();
    for (int64_t v : as_i64_list()) audio_stage_layers.push_back(static_cast<int>(v));
  } else if (key == "stage1_group") {
    stage1_group_size = std::stoi(value);
  } else if (key == "stage1_downsample") {
    stage1_downsample = parse_bool(value);
  } else if (key == "visual_layers") {
    visual_layers = std::stoi(value);
  } else if (key == "heads") {
    n_heads = std::stoi(value);
  } else if (key == "conv_kernel") {
    conv_kernel = std::stoi(value);
  } else if (key == "ff_expansion") {
    ff_expansion = std::stoi(value);
  } else if (key == "vocab") {
    vocab = std::stoll(value);
  } else if (key == "adapter_bottleneck") {
    adapter_bottleneck = std::stoll(value);
  } else if (key == "fusion_bottleneck") {
    fusion_bottleneck = std::stoll(value);
  } else if (key == "dcim_direction") {
    dcim_mode.direction = direction_from(value);
  } else if (key == "dcim_purification") {
    dcim_mode.purification_on = parse_bool(value);
  } else if (key == "dcim_completion") {
    dcim_mode.completion_on = parse_bool(value);
  } else if (key == "dcim_layers") {
    if (value == "all") {
      dcim_mode.layers = DcimLayerSpan::all;
    } else if (value == "last_two") {
      dcim_mode.layers = DcimLayerSpan::last_two;
    } else {
      throw std::invalid_argument("config: dcim_layers must be 'all' or 'last_two'");
    }
  } else if (key == "dcim_per_path") {
    dcim_mode.per_path_adapters = parse_bool(value);
  } else if (key == "tap_stream") {
    tap_stream = value;
  } else if (key == "fusion_point") {
    fusion_point = value;
  } else if (key == "inter_lambda") {
    inter_ctc_lambda = std::stod(value);
  } else if (key == "dropout") {
    dropout = std::stod(value);
  } else if (key == "relative_positions") {
    relative_positions = parse_bool(value);
  } else if (key == "audio_sample_rate") {
    audio.sample_rate_hz = std::stoi(value);
  } else if (key == "audio_window_ms") {
    audio.window_ms = std::stoi(value);
  } else if (key == "audio_hop_ms") {
    audio.hop_ms = std::stoi(value);
  } else if (key == "audio_dft") {
    audio.dft_size = std::stoi(value);
  } else if (key == "audio_mels") {
    audio.n_mels = std::stoi(value);
  } else if (key == "audio_log_floor") {
    audio.log_floor = std::stod(value);
  } else if (key == "specaug_freq_masks") {
    audio.specaug.n_freq_masks = std::stoi(value);
  } else if (key == "specaug_freq_width") {
    audio.specaug.max_freq_width = std::stoi(value);
  } else if (key == "specaug_time_masks") {
    audio.specaug.n_time_masks = std::stoi(value);
  } else if (key == "specaug_time_width") {
    audio.specaug.max_time_width = std::stoi(value);
  } else if (key == "subsample_dim") {
    audio.subsample_out_dim = std::stoi(value);
  } else if (key == "visual_stem_kernel") {
    auto v = as_i64_list();
    if (v.size() != 3) throw std::invalid_argument("config: visual_stem_kernel needs three values");
    visual.stem_kernel = {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
  } else if (key == "visual_stem_stride") {
    auto v = as_i64_list();
    if (v.size() != 3) throw std::invalid_argument("config: visual_stem_stride needs three values");
    visual.stem_stride = {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
  } else if (key == "visual_blocks") {
    visual.n_res_blocks = std::stoi(value);
  } else if (key == "visual_channels") {
    visual.channels.clear();
    for (int64_t v : as_i64_list()) visual.channels.push_back(static_cast<int>(v));
  } else if (key == "visual_blocks_per_stage") {
    visual.blocks_per_stage = std::stoi(value);
  } else if (key == "visual_out_dim") {
    visual.out_dim = std::stoi(value);
  } else if (key == "visual_pool_stride") {
    visual.temporal_pool_stride = std::stoi(value);
  } else {
    throw std::invalid_argument("config: unknown model key '" + key + "'");
  }
}

std::string ModelConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : to_pairs()) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

uint64_t ModelConfig::digest() const { return fnv1a64(canonical_text()); }

ModelConfig ModelConfig::from_canonical_text(const std::string& text) {
  ModelConfig cfg;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find(" = ");
    if (eq == std::string::npos) throw std::invalid_argument("config text: malformed line '" + line + "'");
    cfg.set_field(line.substr(0, eq), line.substr(eq + 3));
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Assembly

Model Model::build(const ModelConfig& cfg, ModelKind kind, uint64_t init_seed) {
  cfg.validate();
  Model m;
  m.kind_ = kind;
  m.cfg_ = cfg;
  m.mel_ = std::make_shared<MelExtractor>(cfg.audio);
  Rng rng(init_seed);

  m.has_audio_ = kind != ModelKind::vsr;
  m.has_visual_ = kind != ModelKind::asr;
  m.has_fusion_ = kind == ModelKind::avsr;

  auto block_cfg = [&](int64_t dim) {
    ConformerBlockConfig bc;
    bc.dim = dim;
    bc.n_heads = cfg.n_heads;
    bc.conv_kernel = cfg.conv_kernel;
    bc.ff_expansion = cfg.ff_expansion;
    bc.dropout_rate = cfg.dropout;
    bc.relative_positions = cfg.relative_positions;
    return bc;
  };

  if (m.has_audio_) {
    m.sub_.init(cfg.audio, rng);
    for (int i = 0; i < cfg.audio_stage_layers[0]; ++i) {
      ConformerBlockConfig bc = block_cfg(cfg.audio_stage_dims[0]);
      bc.group_size = cfg.stage1_group_size;
      bc.conv_stride = (i == 0 && cfg.stage1_downsample) ? 2 : 1;
      ConformerBlock blk;
      blk.init(bc, rng);
      m.stage1_.push_back(std::move(blk));
    }
    m.trans1_.init(cfg.audio_stage_dims[0], cfg.audio_stage_dims[1], 1, rng);
    if (kind == ModelKind::asr) {
      for (int i = 0; i < cfg.audio_stage_layers[1]; ++i) {
        InteractionBlock blk;
        blk.init(block_cfg(cfg.audio_stage_dims[1]), rng);
        m.stage2_solo_.push_back(std::move(blk));
      }
    }
    m.trans2_.init(cfg.audio_stage_dims[1], cfg.audio_stage_dims[2], 1, rng);
    for (int i = 0; i < cfg.audio_stage_layers[2]; ++i) {
      ConformerBlock blk;
      blk.init(block_cfg(cfg.audio_stage_dims[2]), rng);
      m.stage3_.push_back(std::move(blk));
    }
    m.head_.init(cfg.audio_stage_dims[2], cfg.vocab, rng);
  }

  if (m.has_visual_) {
    m.vf_.init(cfg.visual, rng);
    if (kind == ModelKind::vsr) {
      for (int i = 0; i < cfg.visual_layers; ++i) {
        InteractionBlock blk;
        blk.init(block_cfg(cfg.audio_stage_dims[1]), rng);
        m.visual_solo_.push_back(std::move(blk));
      }
    }
    m.inter_head_.init(cfg.audio_stage_dims[1], cfg.vocab, rng);
  }

  if (m.has_fusion_) {
    m.dcim_.init(cfg.audio_stage_layers[1], block_cfg(cfg.audio_stage_dims[1]), cfg.adapter_bottleneck, cfg.dcim_mode,
                 rng);
    m.fusion_adapter_.init(cfg.audio_stage_dims[1], cfg.fusion_bottleneck, cfg.audio_stage_dims[2], rng);
  }
  return m;
}

const InteractionBlock& Model::stage2_block(size_t i) const {
  return kind_ == ModelKind::avsr ? dcim_.layers_[i].audio_block : stage2_solo_[i];
}

const InteractionBlock& Model::visual_block(size_t i) const {
  return kind_ == ModelKind::avsr ? dcim_.layers_[i].visual_block : visual_solo_[i];
}

Tensor Model::run_audio_front(const Tensor& mel, const FwdCtx& ctx) const {
  Tensor x = sub_.apply(mel);
  for (const ConformerBlock& blk : stage1_) x = blk.forward(x, nullptr, ctx);
  return trans1_.apply(x);
}

Tensor Model::run_audio_tail(const Tensor& x, const Tensor* fused_visual, const FwdCtx& ctx) const {
  Tensor y = trans2_.apply(x);
  if (fused_visual && cfg_.fusion_point == "stage3_entry") y = add(y, *fused_visual);
  for (const ConformerBlock& blk : stage3_) y = blk.forward(y, nullptr, ctx);
  if (fused_visual && cfg_.fusion_point == "stage3_exit") y = add(y, *fused_visual);
  return log_softmax(head_.apply(y), -1);
}

Tensor Model::forward_audio_only(const Tensor& mel, const FwdCtx& ctx) const {
  if (!has_audio_) throw std::invalid_argument("model: this variant has no audio branch");
  Tensor x = run_audio_front(mel, ctx);
  if (kind_ == ModelKind::avsr) {
    x = dcim_.forward_audio_solo(x, ctx);
  } else {
    for (const InteractionBlock& blk : stage2_solo_) x = blk.forward_solo(x, nullptr, ctx);
  }
  return run_audio_tail(x, nullptr, ctx);
}

Tensor Model::forward_visual_only(const VideoClip& clip, const FwdCtx& ctx) const {
  if (!has_visual_) throw std::invalid_argument("model: this variant has no visual branch");
  Tensor x = vf_.forward(clip);
  if (kind_ == ModelKind::avsr) {
    x = dcim_.forward_visual_solo(x, ctx);
  } else {
    for (const InteractionBlock& blk : visual_solo_) x = blk.forward_solo(x, nullptr, ctx);
  }
  return log_softmax(inter_head_.apply(x), -1);
}

AvsrOut Model::forward_fused(const Tensor& mel, const VideoClip& clip, const FwdCtx& ctx) const {
  if (kind_ != ModelKind::avsr) throw std::invalid_argument("model: fused forward needs the avsr variant");
  Tensor xa = run_audio_front(mel, ctx);
  Tensor xv = vf_.forward(clip);
  const int64_t len = std::min(xa.shape()[0], xv.shape()[0]);
  if (len == 0) throw std::invalid_argument("model: post-trim length is zero, inputs too short");
  if (xa.shape()[0] != len) xa = slice(xa, 0, 0, len);
  if (xv.shape()[0] != len) xv = slice(xv, 0, 0, len);

  DCIMStack::Output inter = dcim_.forward(xa, xv, ctx);
  Tensor fused = fusion_adapter_.forward(inter.visual);

  AvsrOut out;
  out.logp = run_audio_tail(inter.audio, &fused, ctx);
  for (const Tensor& tap : inter.taps) {
    out.taps.push_back(log_softmax(inter_head_.apply(tap), -1));
  }
  return out;
}

int64_t Model::audio_len_after_stage1(int64_t mel_frames) const {
  int64_t len = ConvSubsampler::out_len(mel_frames);
  if (cfg_.stage1_downsample) len = (len - 1) / 2 + 1;
  return len;
}

int64_t Model::visual_out_len(int64_t video_frames) const {
  return video_frames / cfg_.visual.temporal_pool_stride;
}

ParamRegistry Model::registry() {
  ParamRegistry r;
  if (has_audio_) {
    sub_.reg("audio_frontend.sub", r);
    for (size_t i = 0; i < stage1_.size(); ++i) stage1_[i].reg("audio.stage1." + std::to_string(i), r);
    trans1_.reg("audio.trans1", r);
    if (kind_ == ModelKind::asr) {
      for (size_t i = 0; i < stage2_solo_.size(); ++i) stage2_solo_[i].reg("audio.stage2." + std::to_string(i), r);
    }
  }
  if (kind_ == ModelKind::avsr) dcim_.reg("audio.stage2", "visual.enc", "dcim", r);
  if (has_audio_) {
    trans2_.reg("audio.trans2", r);
    for (size_t i = 0; i < stage3_.size(); ++i) stage3_[i].reg("audio.stage3." + std::to_string(i), r);
    head_.reg("head", r);
  }
  if (has_visual_) {
    vf_.reg("visual_frontend", r);
    if (kind_ == ModelKind::vsr) {
      for (size_t i = 0; i < visual_solo_.size(); ++i) visual_solo_[i].reg("visual.enc." + std::to_string(i), r);
    }
    inter_head_.reg("inter_head", r);
  }
  if (has_fusion_) fusion_adapter_.reg("fusion_adapter", r);
  return r;
}

int64_t Model::param_count() { return registry().total_count(); }

std::vector<std::pair<std::string, int64_t>> Model::param_count_by_module() {
  ParamRegistry r = registry();
  const std::vector<std::string> prefixes = {"audio_frontend", "audio.stage1", "audio.trans1", "audio.stage2",
                                             "audio.trans2",   "audio.stage3", "head",         "visual_frontend",
                                             "visual.enc",     "inter_head",   "dcim",         "fusion_adapter"};
  std::vector<std::pair<std::string, int64_t>> out;
  for (const std::string& p : prefixes) {
    const int64_t n = r.count_with_prefix(p);
    if (n > 0) out.emplace_back(p, n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated header in " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is, const std::string& path) {
  const uint64_t lo = get_u32(is, path);
  const uint64_t hi = get_u32(is, path);
  return lo | (hi << 32);
}

struct CkptEntry {
  std::string name;
  Shape shape;
  uint64_t offset = 0;
};

struct CkptFile {
  uint64_t digest = 0;
  ModelKind kind = ModelKind::asr;
  std::string config_text;
  std::vector<CkptEntry> entries;
  std::vector<float> payload;
};

CkptFile read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "DCIM", 4) != 0) {
    throw std::runtime_error("checkpoint: corrupt header (bad magic) in " + path);
  }
  const uint32_t format = get_u32(is, path);
  if (format != 1) {
    throw std::runtime_error("checkpoint: unknown format version " + std::to_string(format) + " in " + path);
  }
  CkptFile f;
  f.digest = get_u64(is, path);
  char kind_byte;
  if (!is.read(&kind_byte, 1)) throw std::runtime_error("checkpoint: truncated header in " + path);
  f.kind = static_cast<ModelKind>(kind_byte);
  const uint32_t cfg_len = get_u32(is, path);
  f.config_text.resize(cfg_len);
  if (!is.read(f.config_text.data(), cfg_len)) throw std::runtime_error("checkpoint: truncated header in " + path);
  if (fnv1a64(f.config_text) != f.digest) {
    throw std::runtime_error("checkpoint: corrupt header (config digest mismatch) in " + path);
  }
  const uint32_t n_entries = get_u32(is, path);
  uint64_t total = 0;
  for (uint32_t i = 0; i < n_entries; ++i) {
    CkptEntry e;
    const uint32_t name_len = get_u32(is, path);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len)) throw std::runtime_error("checkpoint: truncated manifest in " + path);
    const uint32_t rank = get_u32(is, path);
    for (uint32_t d = 0; d < rank; ++d) e.shape.push_back(static_cast<int64_t>(get_u32(is, path)));
    e.offset = get_u64(is, path);
    total += static_cast<uint64_t>(shape_numel(e.shape));
    f.entries.push_back(std::move(e));
  }
  const uint64_t payload_len = get_u64(is, path);
  if (payload_len != total) throw std::runtime_error("checkpoint: manifest/payload length mismatch in " + path);
  f.payload.resize(payload_len);
  std::vector<char> raw(payload_len * 4);
  if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
    throw std::runtime_error("checkpoint: truncated payload in " + path);
  }
  for (uint64_t i = 0; i < payload_len; ++i) {
    uint32_t bits = static_cast<uint32_t>(static_cast<unsigned char>(raw[4 * i])) |
                    (static_cast<uint32_t>(static_cast<unsigned char>(raw[4 * i + 1])) << 8) |
                    (static_cast<uint32_t>(static_cast<unsigned char>(raw[4 * i + 2])) << 16) |
                    (static_cast<uint32_t>(static_cast<unsigned char>(raw[4 * i + 3])) << 24);
    std::memcpy(&f.payload[i], &bits, 4);
  }
  return f;
}

}  // namespace

void Model::save(const std::string& path) {
  ParamRegistry r = registry();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write("DCIM", 4);
  put_u32(os, 1);
  const std::string cfg_text = cfg_.canonical_text();
  put_u64(os, fnv1a64(cfg_text));
  const char kind_byte = static_cast<char>(kind_);
  os.write(&kind_byte, 1);
  put_u32(os, static_cast<uint32_t>(cfg_text.size()));
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

  put_u32(os, static_cast<uint32_t>(r.entries().size()));
  uint64_t offset = 0;
  for (const auto& [name, t] : r.entries()) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(t->rank()));
    for (int64_t d : t->shape()) put_u32(os, static_cast<uint32_t>(d));
    put_u64(os, offset);
    offset += static_cast<uint64_t>(t->numel());
  }
  put_u64(os, offset);
  for (const auto& [name, t] : r.entries()) {
    for (int64_t i = 0; i < t->numel(); ++i) {
      const float f = static_cast<float>(t->flat(i));
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(os, bits);
    }
  }
}

Model Model::load(const std::string& path) {
  const CkptFile f = read_checkpoint(path);
  Model m = build(ModelConfig::from_canonical_text(f.config_text), f.kind, /*init_seed=*/0);
  ParamRegistry r = m.registry();
  if (r.entries().size() != f.entries.size()) {
    throw std::runtime_error("checkpoint: parameter set mismatch for " + path + " (" +
                             std::to_string(f.entries.size()) + " stored, " + std::to_string(r.entries().size()) +
                             " expected); use the warm-start path for partial loads");
  }
  for (const CkptEntry& e : f.entries) {
    Tensor* slot = r.find(e.name);
    if (!slot) throw std::runtime_error("checkpoint: unknown parameter '" + e.name + "' in " + path);
    if (slot->shape() != e.shape) throw std::runtime_error("checkpoint: shape mismatch for '" + e.name + "'");
    std::vector<double> d(static_cast<size_t>(shape_numel(e.shape)));
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(f.payload[e.offset + i]);
    *slot = Tensor::from(e.shape, std::move(d));
  }
  return m;
}

int64_t Model::load_matching(const std::string& path) {
  const CkptFile f = read_checkpoint(path);
  ParamRegistry r = registry();
  int64_t loaded = 0;
  for (const CkptEntry& e : f.entries) {
    Tensor* slot = r.find(e.name);
    if (!slot) continue;
    if (slot->shape() != e.shape) {
      throw std::runtime_error("checkpoint: shape mismatch for shared parameter '" + e.name + "' in " + path);
    }
    std::vector<double> d(static_cast<size_t>(shape_numel(e.shape)));
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(f.payload[e.offset + i]);
    *slot = Tensor::from(e.shape, std::move(d));
    ++loaded;
  }
  return loaded;
}

}  // namespace dcim
