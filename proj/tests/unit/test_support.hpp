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

#include <cmath>
#include <functional>

#include "blockseq/autodiff.hpp"
#include "blockseq/random.hpp"

namespace blockseq::testing {

/// Contracts a tensor-valued output with a fixed random weighting so the
/// scalar loss exercises every output entry.
inline Var probe_loss(Var out, std::uint64_t seed = 99) {
  RandomStream rng(seed, "probe");
  Tensor w = rng.uniform_matrix(out.rows(), out.cols(), -1.0, 1.0);
  return ops::sum(ops::mul(out, out.tape().constant(std::move(w))));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace blockseq::testing
