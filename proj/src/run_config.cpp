// Copyright 2026 DCIM-AVSR Authors
// Parsing, overriding, and echoing run configurations
//
// Licensed under the Apache License, Version 2.0

#include "dcim/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dcim {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

std::vector<std::pair<std::string, std::string>> parse_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: malformed line " + std::to_string(line_no) + " in " + path);
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  std::vector<std::pair<std::string, std::string>> kv = path.empty()
                                                            ? std::vector<std::pair<std::string, std::string>>{}
                                                            : parse_lines(path);
  for (const std::string& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos) throw std::runtime_error("config: override '" + ov + "' is not key=value");
    kv.emplace_back(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }

  RunConfig cfg;
  // presets first so later keys override bundle values regardless of order
  for (const auto& [k, v] : kv) {
    if (k == "model.preset") cfg.apply(k, v);
  }
  for (const auto& [k, v] : kv) {
    if (k != "model.preset") cfg.apply(k, v);
  }
  return cfg;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "model.preset") {
    model_preset = value;
    if (value == "toy") {
      model = ModelConfig::toy_preset();
    } else if (value == "paper") {
      model = ModelConfig::paper_preset();
    } else {
      throw std::invalid_argument("config: unknown model preset '" + value + "'");
    }
    return;
  }
  if (key.rfind("model.", 0) == 0) {
    model.set_field(key.substr(6), value);
    return;
  }
  if (key.rfind("synth.", 0) == 0) {
    const std::string k = key.substr(6);
    if (k == "vocab") {
      synth.vocab_size = std::stoi(value);
    } else if (k == "min_tokens") {
      synth.min_tokens = std::stoi(value);
    } else if (k == "max_tokens") {
      synth.max_tokens = std::stoi(value);
    } else if (k == "token_ms") {
      synth.token_ms = std::stoi(value);
    } else if (k == "sample_rate") {
      synth.sample_rate = std::stoi(value);
    } else if (k == "canvas") {
      synth.canvas = std::stoi(value);
    } else if (k == "seed") {
      synth.seed = std::stoull(value);
    } else {
      throw std::invalid_argument("config: unknown synth key '" + key + "'");
    }
    return;
  }
  if (key.rfind("train.", 0) == 0) {
    const std::string k = key.substr(6);
    if (k == "stage") {
      train_stage = value;
      model_kind_from(value);  // validation
    } else if (k == "epochs") {
      train_epochs = std::stoi(value);
    } else if (k == "batch_size") {
      train_batch = std::stoi(value);
    } else if (k == "seed") {
      train_seed = std::stoull(value);
    } else if (k == "base_lr") {
      train_base_lr = std::stod(value);
    } else if (k == "warmup") {
      train_warmup = std::stoll(value);
    } else if (k == "schedule_dim") {
      train_schedule_dim = std::stoll(value);
    } else if (k == "clip_norm") {
      train_clip = std::stod(value);
    } else if (k == "precision") {
      if (value != "f32" && value != "f64") throw std::invalid_argument("config: precision must be f32 or f64");
      train_precision = value;
    } else if (k == "corpus") {
      train_corpus = value;
    } else if (k == "eval_corpus") {
      train_eval_corpus = value;
    } else if (k == "init_asr") {
      train_init_asr = value;
    } else if (k == "init_vsr") {
      train_init_vsr = value;
    } else if (k == "freeze") {
      train_freeze = value;
    } else if (k == "stop_at_loss") {
      train_stop_loss = std::stod(value);
    } else if (k == "noise_snrs") {
      train_noise_snrs = value;
      parse_double_list(value);  // validation
    } else {
      throw std::invalid_argument("config: unknown train key '" + key + "'");
    }
    return;
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  os << "model.preset = " << model_preset << "\n";
  for (const auto& [k, v] : model.to_pairs()) os << "model." << k << " = " << v << "\n";
  os << "synth.vocab = " << synth.vocab_size << "\n";
  os << "synth.min_tokens = " << synth.min_tokens << "\n";
  os << "synth.max_tokens = " << synth.max_tokens << "\n";
  os << "synth.token_ms = " << synth.token_ms << "\n";
  os << "synth.sample_rate = " << synth.sample_rate << "\n";
  os << "synth.canvas = " << synth.canvas << "\n";
  os << "synth.seed = " << synth.seed << "\n";
  os << "train.stage = " << train_stage << "\n";
  os << "train.epochs = " << train_epochs << "\n";
  os << "train.batch_size = " << train_batch << "\n";
  os << "train.seed = " << train_seed << "\n";
  os << "train.base_lr = " << train_base_lr << "\n";
  os << "train.warmup = " << train_warmup << "\n";
  os << "train.schedule_dim = " << train_schedule_dim << "\n";
  os << "train.clip_norm = " << train_clip << "\n";
  os << "train.precision = " << train_precision << "\n";
  os << "train.corpus = " << train_corpus << "\n";
  os << "train.eval_corpus = " << train_eval_corpus << "\n";
  os << "train.init_asr = " << train_init_asr << "\n";
  os << "train.init_vsr = " << train_init_vsr << "\n";
  os << "train.freeze = " << train_freeze << "\n";
  os << "train.stop_at_loss = " << train_stop_loss << "\n";
  os << "train.noise_snrs = " << train_noise_snrs << "\n";
  return os.str();
}

StagePlan RunConfig::stage_plan() const {
  StagePlan plan;
  plan.stage = model_kind_from(train_stage);
  plan.epochs = train_epochs;
  plan.batch_size = train_batch;
  plan.seed = train_seed;
  if (!train_init_asr.empty()) plan.init_asr = train_init_asr;
  if (!train_init_vsr.empty()) plan.init_vsr = train_init_vsr;
  std::stringstream ss(train_freeze);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) plan.freeze.push_back(item);
  }
  plan.stop_at_train_loss = train_stop_loss;
  plan.noise_snrs = parse_double_list(train_noise_snrs);
  return plan;
}

OptimizerConfig RunConfig::opt_config() const {
  OptimizerConfig cfg;
  cfg.base_scale = train_base_lr;
  cfg.warmup_steps = train_warmup;
  cfg.schedule_dim = train_schedule_dim;
  cfg.clip_norm = train_clip;
  return cfg;
}

Precision RunConfig::precision() const {
  return train_precision == "f64" ? Precision::Float64 : Precision::Float32;
}

void echo_resolved(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream os(out_dir + "/config.resolved");
  if (!os) throw std::runtime_error("config: cannot write " + out_dir + "/config.resolved");
  os << cfg.resolved_text();
}

}  // namespace dcim
