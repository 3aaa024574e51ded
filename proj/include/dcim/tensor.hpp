// Copyright 2026 DCIM-AVSR Authors
// Dense tensors with reverse-mode autodiff over a dynamically recorded tape
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcim/rng.hpp"

namespace dcim {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Compute precision. Storage is always double; in Float32 mode every op
// result (and gradient accumulation) is rounded to the nearest float, so
// training runs at 32-bit semantics while verification keeps full 64-bit.
// Tests pin the mode explicitly; set it before spawning worker threads.
enum class Precision { Float32, Float64 };

void set_precision(Precision p);
Precision precision();

struct PrecisionGuard {
  explicit PrecisionGuard(Precision p) : prev_(precision()) { set_precision(p); }
  ~PrecisionGuard() { set_precision(prev_); }
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision prev_;
};

inline double round_to_precision(double v) {
  return precision() == Precision::Float32 ? static_cast<double>(static_cast<float>(v)) : v;
}

class Tensor;

// One recorded primitive application. `vjp` maps the node's output gradient
// to gradients for each parent, aligned with `parents`; an undefined Tensor
// in the result means "no gradient for that parent".
struct TapeNode {
  std::vector<int> parents;
  std::function<std::vector<Tensor>(const Tensor& grad)> vjp;
};

// Confined to one thread for its lifetime. Nodes are stored in recording
// order; the backward pass walks them exactly once in reverse.
struct TapeCore {
  std::vector<TapeNode> nodes;
  bool backward_done = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
  static Tensor normal(Shape shape, Rng& rng, double stddev);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  int64_t extent(int axis) const;

  const double* data() const { return data_->data(); }
  double flat(int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
  double at(std::initializer_list<int64_t> idx) const;
  std::vector<double> to_vector() const { return *data_; }

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }
  const std::shared_ptr<TapeCore>& tape() const { return tape_; }
  Tensor detached() const;

  // Copy with a single element replaced; used by tests and the
  // finite-difference harness.
  Tensor with_flat(int64_t i, double v) const;

  // Construction of op results (values pass through the precision filter).
  static Tensor make(Shape shape, std::vector<double>&& data);
  Tensor tracked_as(std::shared_ptr<TapeCore> core, int node) const;

 private:
  std::shared_ptr<const std::vector<double>> data_;
  Shape shape_;
  std::shared_ptr<TapeCore> tape_;
  int node_ = -1;
};

// Gradients keyed by tape node, produced by Tape::backward.
class GradMap {
 public:
  GradMap() = default;
  explicit GradMap(std::unordered_map<int, Tensor> grads) : grads_(std::move(grads)) {}

  // Zero tensor when the value did not influence the loss.
  Tensor grad_of(const Tensor& t) const;
  bool has(const Tensor& t) const;

 private:
  std::unordered_map<int, Tensor> grads_;
};

class Tape {
 public:
  Tape() : core_(std::make_shared<TapeCore>()) {}

  // Registers a leaf; the returned tensor shares the input's data and
  // participates in gradient recording on this tape.
  Tensor watch(const Tensor& t) const;

  // Reverse pass from a scalar loss. A second call without reset() throws.
  GradMap backward(const Tensor& loss) const;

  // Clears the backward-done flag so the same recording can be replayed.
  void reset() const { core_->backward_done = false; }

  size_t size() const { return core_->nodes.size(); }
  const std::shared_ptr<TapeCore>& core() const { return core_; }

 private:
  std::shared_ptr<TapeCore> core_;
};

namespace detail {

// Shared by all ops: pick the tape of the tracked operands (verifying they
// agree) and record a node. Returns the result unchanged when untracked.
Tensor record(Tensor value, const std::vector<const Tensor*>& inputs,
              std::function<std::vector<Tensor>(const Tensor&)> vjp);

void accumulate(Tensor& into, const Tensor& g);

}  // namespace detail

}  // namespace dcim
