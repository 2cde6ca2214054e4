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

#include "blockseq/optim.hpp"

#include <cmath>

#include "blockseq/errors.hpp"

namespace blockseq {

void Adam::step(ParameterStore& store) { step({&store}); }

void Adam::step(std::initializer_list<ParameterStore*> stores) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (ParameterStore* store : stores) {
    for (auto& [name, e] : *store) {
      auto it = moments_.find(name);
      if (it == moments_.end()) {
        it = moments_.emplace(name, Moments{Tensor(e.value.shape()), Tensor(e.value.shape())}).first;
      }
      Tensor& m = it->second.m;
      Tensor& v = it->second.v;
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        e.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }
}

std::map<std::string, Tensor> Adam::export_state() const {
  std::map<std::string, Tensor> out;
  out.emplace("t", Tensor::scalar(static_cast<double>(t_)));
  for (const auto& [name, mo] : moments_) {
    out.emplace("m/" + name, mo.m);
    out.emplace("v/" + name, mo.v);
  }
  return out;
}

void Adam::import_state(const std::map<std::string, Tensor>& state) {
  moments_.clear();
  auto t = state.find("t");
  if (t == state.end()) throw FormatError("optimizer state lacks step count");
  t_ = static_cast<std::uint64_t>(t->second.item());
  for (const auto& [key, tensor] : state) {
    if (key.rfind("m/", 0) == 0) {
      const std::string name = key.substr(2);
      auto v = state.find("v/" + name);
      if (v == state.end()) throw FormatError("optimizer state lacks second moment for " + name);
      moments_.emplace(name, Moments{tensor, v->second});
    }
  }
}

}  // namespace blockseq
