// Copyright 2026 DCIM-AVSR Authors
// Tensor storage, precision mode, and the reverse-mode tape
//
// Licensed under the Apache License, Version 2.0

#include "dcim/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace dcim {

namespace {
Precision g_precision = Precision::Float64;
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::make(Shape shape, std::vector<double>&& data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                std::to_string(data.size()));
  }
  if (precision() == Precision::Float32) {
    for (double& v : data) v = static_cast<double>(static_cast<float>(v));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<const std::vector<double>>(std::move(data));
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)), 0.0);
  return make(std::move(shape), std::move(d));
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)), value);
  return make(std::move(shape), std::move(d));
}

Tensor Tensor::scalar(double value) { return full({}, value); }

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  return make(std::move(shape), std::move(data));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (double& v : d) v = rng.uniform(lo, hi);
  return make(std::move(shape), std::move(d));
}

Tensor Tensor::normal(Shape shape, Rng& rng, double stddev) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (double& v : d) v = rng.normal() * stddev;
  return make(std::move(shape), std::move(d));
}

int64_t Tensor::extent(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[static_cast<size_t>(axis)];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw std::invalid_argument("tensor: index rank mismatch");
  }
  int64_t off = 0;
  int a = 0;
  for (int64_t i : idx) {
    off = off * shape_[static_cast<size_t>(a)] + i;
    ++a;
  }
  return (*data_)[static_cast<size_t>(off)];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.data_ = data_;
  t.shape_ = shape_;
  return t;
}

Tensor Tensor::with_flat(int64_t i, double v) const {
  std::vector<double> d = *data_;
  d[static_cast<size_t>(i)] = v;
  return make(shape_, std::move(d));
}

Tensor Tensor::tracked_as(std::shared_ptr<TapeCore> core, int node) const {
  Tensor t;
  t.data_ = data_;
  t.shape_ = shape_;
  t.tape_ = std::move(core);
  t.node_ = node;
  return t;
}

Tensor Tape::watch(const Tensor& t) const {
  if (!t.defined()) throw std::invalid_argument("tape: cannot watch an undefined tensor");
  core_->nodes.push_back(TapeNode{});
  return t.tracked_as(core_, static_cast<int>(core_->nodes.size()) - 1);
}

GradMap Tape::backward(const Tensor& loss) const {
  if (!loss.tracked()) throw std::invalid_argument("backward: loss is detached from any tape");
  if (loss.tape() != core_) throw std::invalid_argument("backward: loss belongs to a different tape");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (core_->backward_done) {
    throw std::runtime_error("backward: already run on this tape; call reset() first");
  }
  core_->backward_done = true;

  const int n = static_cast<int>(core_->nodes.size());
  std::vector<Tensor> grads(static_cast<size_t>(n));
  grads[static_cast<size_t>(loss.node())] = Tensor::ones(loss.shape());

  for (int i = n - 1; i >= 0; --i) {
    const TapeNode& node = core_->nodes[static_cast<size_t>(i)];
    Tensor& g = grads[static_cast<size_t>(i)];
    if (!g.defined() || !node.vjp) continue;
    std::vector<Tensor> parent_grads = node.vjp(g);
    for (size_t p = 0; p < node.parents.size(); ++p) {
      if (!parent_grads[p].defined()) continue;
      detail::accumulate(grads[static_cast<size_t>(node.parents[p])], parent_grads[p]);
    }
  }

  std::unordered_map<int, Tensor> out;
  for (int i = 0; i < n; ++i) {
    if (grads[static_cast<size_t>(i)].defined()) out.emplace(i, grads[static_cast<size_t>(i)].detached());
  }
  return GradMap(std::move(out));
}

Tensor GradMap::grad_of(const Tensor& t) const {
  if (!t.tracked()) throw std::invalid_argument("grad_of: tensor is not tracked on any tape");
  auto it = grads_.find(t.node());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return it->second;
}

bool GradMap::has(const Tensor& t) const { return t.tracked() && grads_.count(t.node()) > 0; }

namespace detail {

Tensor record(Tensor value, const std::vector<const Tensor*>& inputs,
              std::function<std::vector<Tensor>(const Tensor&)> vjp) {
  std::shared_ptr<TapeCore> core;
  for (const Tensor* in : inputs) {
    if (!in->tracked()) continue;
    if (!core) {
      core = in->tape();
    } else if (core != in->tape()) {
      throw std::invalid_argument("op: operands recorded on different tapes");
    }
  }
  if (!core) return value;

  // Parents aligned with the tracked inputs, in argument order. The vjp is
  // wrapped so it only reports gradients for tracked parents.
  std::vector<int> parents;
  std::vector<size_t> tracked_idx;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i]->tracked()) {
      parents.push_back(inputs[i]->node());
      tracked_idx.push_back(i);
    }
  }
  const size_t n_inputs = inputs.size();
  auto wrapped = [vjp = std::move(vjp), tracked_idx, n_inputs](const Tensor& g) {
    std::vector<Tensor> all = vjp(g);
    if (all.size() != n_inputs) throw std::logic_error("op vjp: arity mismatch");
    std::vector<Tensor> out;
    out.reserve(tracked_idx.size());
    for (size_t i : tracked_idx) out.push_back(std::move(all[i]));
    return out;
  };
  core->nodes.push_back(TapeNode{std::move(parents), std::move(wrapped)});
  return value.tracked_as(core, static_cast<int>(core->nodes.size()) - 1);
}

void accumulate(Tensor& into, const Tensor& g) {
  if (!into.defined()) {
    into = g.detached();
    return;
  }
  if (into.shape() != g.shape()) throw std::logic_error("gradient accumulation: shape mismatch");
  std::vector<double> d = into.to_vector();
  const double* src = g.data();
  const bool f32 = precision() == Precision::Float32;
  for (size_t i = 0; i < d.size(); ++i) {
    d[i] += src[i];
    if (f32) d[i] = static_cast<double>(static_cast<float>(d[i]));
  }
  into = Tensor::from(into.shape(), std::move(d));
}

}  // namespace detail

}  // namespace dcim
