// Copyright 2026 The blockseq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Tape records every op of one forward pass together with a closure that
// propagates the output gradient to its inputs. Parameters are bound to a
// named ParameterStore; backward() adds dloss/dparam into the store's
// gradient buffers, so repeated backward passes accumulate.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blockseq/tensor.hpp"

namespace blockseq {

/// Named parameter tensors with a gradient buffer of identical shape.
class ParameterStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;

  void zero_grad();
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  /// Largest absolute gradient entry over all parameters.
  double max_abs_grad() const;

  /// Overwrites values of every shared name; shapes must agree.
  void copy_values_from(const ParameterStore& other);

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  std::map<std::string, Entry> entries_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  /// A non-recording tape computes values only; nothing requires grad.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Free leaf that requires grad; its gradient is read back with grad().
  Var variable(Tensor value);
  /// Leaf bound to store[name]. One node per (store, name) per tape.
  Var parameter(ParameterStore& store, const std::string& name);
  /// Constant copy of store[name]; gradients never reach the store.
  Var frozen(const ParameterStore& store, const std::string& name);

  /// Appends an op result. `fn` is dropped when no parent requires grad.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of node `id`, zero-initialised on first use.
  Tensor& grad_buffer(std::size_t id);
  /// Gradient from the most recent backward pass; empty if never reached.
  const Tensor& grad(Var v) const { return nodes_[v.id()].grad; }

  /// Reverse sweep from a scalar loss. Accumulates into bound stores.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  struct Binding {
    std::size_t node;
    ParameterStore* store;
    std::string name;
  };

  Var push(Tensor value, bool requires_grad);

  bool recording_;
  std::deque<Node> nodes_;  // deque keeps value() references valid as the tape grows
  std::vector<Binding> bindings_;
  std::map<std::pair<const void*, std::string>, std::size_t> bound_;
  std::map<std::pair<const void*, std::string>, std::size_t> frozen_;
};

/// Convenience for the documented call shape backward(loss).
inline void backward(Var loss) { loss.tape().backward(loss); }

/// Resolves parameter names against a store for one forward pass.
class Params {
 public:
  enum class Mode { trainable, frozen };

  Params(Tape& tape, ParameterStore& store, Mode mode = Mode::trainable)
      : tape_(&tape), store_(&store), mode_(mode) {}

  Var operator()(const std::string& name) const;
  Tape& tape() const { return *tape_; }
  ParameterStore& store() const { return *store_; }
  Mode mode() const { return mode_; }

 private:
  Tape* tape_;
  ParameterStore* store_;
  Mode mode_;
};

namespace ops {

Var matmul(Var a, Var b, bool transpose_b = false);
Var transpose(Var a);

// Elementwise binaries. `b` may be the same shape as `a`, a 1 x n row,
// an m x 1 column or a 1 x 1 scalar; it is broadcast against `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var minimum(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var relu(Var a);
/// Exact GELU, x * Phi(x).
Var gelu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
/// Gradient is zero where the input lies outside [lo, hi].
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
/// m x n -> m x 1.
Var row_sum(Var a);
/// m x n -> 1 x n.
Var col_sum(Var a);

Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var a, std::span<const std::size_t> rows);
/// Row-major reinterpretation.
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// 1 x n -> count x n.
Var repeat_rows(Var a, std::size_t count);

/// Multiplies by a precomputed mask (already scaled by 1/(1-rate)).
Var dropout_with_mask(Var a, const Tensor& mask);
Var stop_gradient(Var a);

/// Row-wise diagonal Gaussian log-density: x is K x D, mu and sigma are
/// K x D or 1 x D; the result is K x 1.
Var gaussian_log_density(Var x, Var mu, Var sigma);

}  // namespace ops

/// Outcome of comparing taped gradients against central differences.
struct FiniteDifferenceReport {
  std::map<std::string, double> max_relative_error;
  double worst = 0.0;
  std::string worst_parameter;
  std::size_t entries_checked = 0;
};

struct FiniteDifferenceOptions {
  /// 0 checks every entry; otherwise an evenly strided subset per parameter.
  std::size_t max_entries_per_parameter = 0;
  /// Denominator floor in |g - fd| / max(|g|, |fd|, floor).
  double relative_floor = 1e-5;
};

/// Checks the gradient of `loss_fn` with respect to every entry of `store`.
///
/// `loss_fn` must bind its parameters through `store` and return a 1 x 1
/// loss. It is evaluated twice up front; differing values raise
/// DeterminismError. The store's gradient buffers are left zeroed.
FiniteDifferenceReport finite_difference_check(const std::function<Var(Tape&)>& loss_fn, ParameterStore& store,
                                               double step, FiniteDifferenceOptions options = {});

}  // namespace blockseq
