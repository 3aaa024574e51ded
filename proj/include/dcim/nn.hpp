// Copyright 2026 DCIM-AVSR Authors
// Parameter registry and the small trainable building blocks
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dcim/ops.hpp"
#include "dcim/tensor.hpp"

namespace dcim {

// Ordered list of named parameter slots. Modules register pointers to their
// member tensors; the trainer swaps tracked/updated values through the
// pointers. Order is registration order and is the serialization order.
class ParamRegistry {
 public:
  void add(const std::string& name, Tensor* t) { entries_.emplace_back(name, t); }

  const std::vector<std::pair<std::string, Tensor*>>& entries() const { return entries_; }

  Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries_) {
      if (n == name) return t;
    }
    return nullptr;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t->numel();
    return n;
  }

  int64_t count_with_prefix(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& [name, t] : entries_) {
      if (name.rfind(prefix, 0) == 0) n += t->numel();
    }
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor*>> entries_;
};

inline Tensor xavier_uniform(int64_t fan_in, int64_t fan_out, Shape shape, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform(std::move(shape), rng, -a, a);
}

struct LinearLayer {
  Tensor w, b;

  void init(int64_t in, int64_t out, Rng& rng) {
    w = xavier_uniform(in, out, {in, out}, rng);
    b = Tensor::zeros({out});
  }

  void init_zero(int64_t in, int64_t out) {
    w = Tensor::zeros({in, out});
    b = Tensor::zeros({out});
  }

  Tensor apply(const Tensor& x) const { return linear(x, w, b); }

  void reg(const std::string& prefix, ParamRegistry& r) {
    r.add(prefix + ".w", &w);
    r.add(prefix + ".b", &b);
  }
};

struct NormLayer {
  Tensor gain, bias;
  double eps = 1e-5;

  void init(int64_t d) {
    gain = Tensor::ones({d});
    bias = Tensor::zeros({d});
  }

  Tensor apply(const Tensor& x) const { return layernorm(x, gain, bias, eps); }

  void reg(const std::string& prefix, ParamRegistry& r) {
    r.add(prefix + ".g", &gain);
    r.add(prefix + ".b", &bias);
  }
};

}  // namespace dcim
