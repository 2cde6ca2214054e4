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

// Soft actor-critic with a learned value function and target value, fed by
// a recurrent RL input z_t.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "blockseq/autodiff.hpp"
#include "blockseq/block_model.hpp"
#include "blockseq/nn.hpp"
#include "blockseq/optim.hpp"
#include "blockseq/replay.hpp"

namespace blockseq {

enum class AgentKind { proposed, sac_raw, lstm, attention_only, blockwise_rnn_only };

AgentKind parse_agent_kind(const std::string& s);
std::string to_string(AgentKind k);
bool uses_block_model(AgentKind k);
/// Block model mode an agent kind runs with.
ModelMode model_mode_for(AgentKind k);

struct AgentConfig {
  AgentKind kind = AgentKind::proposed;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  double action_bound = 1.0;
  std::size_t z_hidden = 256;
  std::size_t hidden = 256;
  std::size_t lstm_embed = 256;  ///< width of the LSTM agent's own embedding
  double gamma = 0.99;
  double tau = 0.005;
  double alpha = 0.2;
  double lr = 3e-4;
  double log_std_min = -20.0;
  double log_std_max = 2.0;

  void validate() const;
};

/// Per-episode recurrent state used while acting.
struct EpisodeState {
  Tensor z;     ///< 1 x z_hidden, zero at the episode start
  Tensor c;     ///< LSTM cell
  Tensor h;     ///< blockwise hidden state
  Tensor cond;  ///< [mu; sigma] of the latest block, or its Y for attention_only
  std::vector<double> block_rows;
  std::vector<double> obs;
  double r_prev = 0.0;
  std::size_t t = 0;
  std::size_t blocks = 0;
};

struct ActionSample {
  std::vector<double> action;
  double log_prob = 0.0;
};

/// Loss graph of one update. Tensors hold per-transition values for tests.
struct SacGraph {
  Var critic_loss;
  Var value_loss;
  Var actor_loss;
  Var total;
  Tensor q_target;
  Tensor v_target;
  Tensor q1_pi;
  Tensor q2_pi;
  Tensor log_pi;
};

struct SacStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double value_loss = 0.0;
};

class Agent {
 public:
  /// `model` must outlive the agent; it is required for block-model kinds.
  Agent(AgentConfig cfg, BlockModel* model, RandomStream& init_rng);

  const AgentConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  ParameterStore& target() { return target_; }
  const ParameterStore& target() const { return target_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  std::size_t z_dim() const;

  EpisodeState begin_episode(const std::vector<double>& o0) const;
  /// a ~ pi(. | z_t, o_t, r_{t-1}); deterministic returns the squashed mean.
  ActionSample act(const EpisodeState& state, bool deterministic, RandomStream* rng) const;
  /// Records x_{t+1} = [a_t; r_t; o_{t+1}], steps z, and closes a block every L steps.
  void observe(EpisodeState& state, const std::vector<double>& action, double reward,
               const std::vector<double>& next_obs, RandomStream* rng = nullptr) const;

  /// Builds all three losses on one tape. With `bind_model` the block model
  /// parameters are bound as trainable so a probe can read their gradients.
  SacGraph build_losses(Tape& tape, std::span<const Window> windows, RandomStream& rng, bool bind_model = false);
  /// Weighted sum of every agent network output on the batch with no
  /// stop-gradient inside the agent; used by finite-difference checks.
  Var probe_loss(Tape& tape, std::span<const Window> windows, std::uint64_t seed);
  /// One optimiser step on the losses followed by the soft target update.
  SacStats update(std::span<const Window> windows, RandomStream& rng);
  /// Values of z_0..z_T for each window, time-major ((T + 1) N x z_dim).
  Tensor replay_z(std::span<const Window> windows) const;
  /// target <- (1 - tau) target + tau V.
  void soft_update(double tau);

 private:
  struct Batch {
    Tensor obs, next_obs, r_prev, reward, act, not_terminal;
  };
  Batch assemble(std::span<const Window> windows) const;
  struct Policy {
    Var mean;
    Var log_std;
  };
  Policy policy(const Params& p, Var state) const;
  Var q_value(const Params& p, const std::string& net, Var state, Var action) const;
  Var project_z(const Params& p, Var inputs) const;
  Var step_z(const Params& p, Var projected, Var z, Var* c) const;
  /// Time-major z_0..z_T for a batch of windows.
  Var unroll(const Params& agent, const Params& phi, std::span<const Window> windows, RandomStream* rng) const;

  AgentConfig cfg_;
  BlockModel* model_;
  ParameterStore store_;
  ParameterStore target_;
  nn::Mlp pi_, q1_, q2_, v_, v_target_;
  nn::GruCell z_gru_;
  nn::LstmCell z_lstm_;
  nn::Mlp lstm_embed_;
  Adam adam_;
};

}  // namespace blockseq
