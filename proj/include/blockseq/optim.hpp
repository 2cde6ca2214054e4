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

#pragma once

#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>

#include "blockseq/autodiff.hpp"

namespace blockseq {

/// Adam over every entry of a ParameterStore; minimises.
class Adam {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update from the store's current gradients. Gradients are left as is.
  void step(ParameterStore& store);
  /// One update over several stores that share a single step counter.
  void step(std::initializer_list<ParameterStore*> stores);

  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return t_; }

  /// Optimiser state flattened to named tensors for checkpoints.
  std::map<std::string, Tensor> export_state() const;
  void import_state(const std::map<std::string, Tensor>& state);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace blockseq
