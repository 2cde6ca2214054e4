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

// Training configuration. Text form is flat `key = value` lines with dotted
// namespaces; `#` starts a comment.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "blockseq/agent.hpp"
#include "blockseq/block_model.hpp"
#include "blockseq/envs.hpp"

namespace blockseq {

enum class Preset { paper, desk };

Preset parse_preset(const std::string& s);
std::string to_string(Preset p);

struct Schedule {
  std::size_t I_pre = 1000;
  std::size_t S_pre = 500;
  std::size_t I_RL = 1;
  std::size_t I_model = 5;
  std::size_t max_steps = 30000;
  std::size_t T = 64;
  std::size_t N_mini = 4;
  std::size_t replay_episodes = 1000;
};

struct TrainConfig {
  Preset preset = Preset::desk;
  EnvParams env;
  std::optional<std::uint64_t> env_seed;  ///< defaults to the run seed
  ModelConfig model;
  AgentConfig agent;
  Schedule schedule;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  bool wall_time = true;  ///< false writes 0 in wall_time_s so CSVs compare byte for byte
  std::size_t eval_episodes = 100;
  std::size_t checkpoint_every = 0;  ///< env steps between checkpoints, 0 for final only

  /// Sizes the model and agent from the environment. Called by load paths.
  void resolve_dims();
  void validate() const;
  std::uint64_t effective_env_seed() const { return env_seed.value_or(seed); }

  /// Every key, sorted; parse(to_text()) reproduces the config.
  std::string to_text() const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Preset defaults for an environment, including its block length and k.
TrainConfig preset_config(Preset preset, EnvKind env);

/// `key = value` lines, in file order. Throws ConfigError on malformed lines.
Overrides parse_overrides(const std::string& text);
Overrides read_overrides_file(const std::string& path);

/// Builds a config: preset defaults for the chosen env, then the overrides in
/// order. Unknown keys and bad values throw ConfigError.
TrainConfig build_config(const Overrides& overrides);
TrainConfig parse_config(const std::string& text);

/// All recognised keys.
std::vector<std::string> config_keys();

}  // namespace blockseq
