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
#include <map>
#include <random>
#include <string>
#include <vector>

#include "blockseq/tensor.hpp"

namespace blockseq {

/// One named pseudorandom stream. Distributions are constructed per draw so
/// the engine state alone determines every future value.
class RandomStream {
 public:
  RandomStream() = default;
  RandomStream(std::uint64_t seed, const std::string& name);

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);
  /// Uniform in [0, n).
  std::size_t index(std::size_t n);
  Tensor normal_matrix(std::size_t rows, std::size_t cols);
  Tensor uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi);
  /// `count` distinct indices from [0, n), ascending.
  std::vector<std::size_t> choose_sorted(std::size_t n, std::size_t count);

  std::string serialize() const;
  void deserialize(const std::string& state);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Independent streams derived from one run seed, so that drawing from one
/// consumer never perturbs another.
class RandomStreams {
 public:
  explicit RandomStreams(std::uint64_t seed = 0);

  RandomStream& operator[](const std::string& name);
  std::uint64_t seed() const { return seed_; }
  const std::map<std::string, RandomStream>& all() const { return streams_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, RandomStream> streams_;
};

}  // namespace blockseq
