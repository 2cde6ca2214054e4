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

// Finite-difference checks over every trainable network, on small instances.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace blockseq {

struct GradcheckEntry {
  std::string network;
  std::size_t entries = 0;
  double worst = 0.0;  ///< max relative error over the network's entries
  bool passed = false;
};

/// Central differences with `step` on 64-bit parameters; an entry passes
/// when its worst relative error is below `tolerance`.
std::vector<GradcheckEntry> run_gradcheck(std::uint64_t seed, double step = 1e-5, double tolerance = 1e-4);

}  // namespace blockseq
