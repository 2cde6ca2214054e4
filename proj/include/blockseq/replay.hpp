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

// Episode-structured replay. Each episode keeps o_0 and the rows
// x_{t+1} = [a_t; r_t; o_{t+1}], so a window of T rows never crosses an
// episode boundary.

#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "blockseq/random.hpp"
#include "blockseq/tensor.hpp"

namespace blockseq {

struct Window {
  std::uint64_t episode = 0;
  std::size_t start = 0;       ///< s: rows cover x_{s+1} .. x_{s+T}
  std::vector<double> o0;      ///< o_s
  double r_prev = 0.0;         ///< r_{s-1}, zero at the episode start
  Tensor rows;                 ///< T x (act + 1 + obs)
  std::vector<double> terminal;  ///< per row, 1 when o_{s+j+1} is absorbing

  std::size_t length() const { return rows.rows(); }
};

class ReplayMemory {
 public:
  ReplayMemory(std::size_t obs_dim, std::size_t act_dim, std::size_t window, std::size_t capacity_episodes);

  void begin_episode(const std::vector<double>& o0);
  /// Saves x_{t+1}. `done` closes the episode.
  void append(const std::vector<double>& action, double reward, const std::vector<double>& next_obs, bool done,
              bool terminal);

  std::size_t window_length() const { return T_; }
  std::size_t x_dim() const { return act_dim_ + 1 + obs_dim_; }
  /// Number of T-row windows that lie inside a single episode.
  std::size_t eligible() const { return eligible_; }
  std::size_t episodes() const { return episodes_.size(); }
  std::size_t transitions() const;
  std::uint64_t oldest_episode() const;

  /// Window by global index in [0, eligible()).
  Window window(std::size_t index) const;
  /// Uniform draws over eligible windows, with replacement.
  std::vector<Window> sample(std::size_t count, RandomStream& rng) const;

  std::string serialize() const;
  void deserialize(const std::string& blob);

 private:
  struct Episode {
    std::uint64_t id = 0;
    std::vector<double> o0;
    std::vector<double> rows;  // flattened, x_dim per step
    std::vector<double> terminal;
    bool closed = false;

    std::size_t steps(std::size_t x_dim) const { return rows.size() / x_dim; }
  };

  std::size_t windows_in(const Episode& e) const;
  void evict();

  std::size_t obs_dim_, act_dim_, T_, capacity_;
  std::deque<Episode> episodes_;
  std::uint64_t next_id_ = 0;
  std::size_t eligible_ = 0;
};

}  // namespace blockseq
