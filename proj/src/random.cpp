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

#include "blockseq/random.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "blockseq/errors.hpp"

namespace blockseq {

RandomStream::RandomStream(std::uint64_t seed, const std::string& name) {
  std::vector<std::uint32_t> material{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (char c : name) material.push_back(static_cast<std::uint8_t>(c));
  std::seed_seq seq(material.begin(), material.end());
  engine_.seed(seq);
}

double RandomStream::uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

double RandomStream::normal(double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(engine_);
}

bool RandomStream::bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

std::size_t RandomStream::index(std::size_t n) {
  if (n == 0) throw BoundsError("index() over an empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

Tensor RandomStream::normal_matrix(std::size_t rows, std::size_t cols) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = normal();
  return t;
}

Tensor RandomStream::uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = uniform(lo, hi);
  return t;
}

std::vector<std::size_t> RandomStream::choose_sorted(std::size_t n, std::size_t count) {
  if (count > n) throw BoundsError("cannot choose more elements than available");
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + index(n - i);
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

std::string RandomStream::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void RandomStream::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw FormatError("corrupt random stream state");
}

RandomStreams::RandomStreams(std::uint64_t seed) : seed_(seed) {}

RandomStream& RandomStreams::operator[](const std::string& name) {
  auto it = streams_.find(name);
  if (it == streams_.end()) it = streams_.emplace(name, RandomStream(seed_, name)).first;
  return it->second;
}

}  // namespace blockseq
