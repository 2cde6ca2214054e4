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

#include <span>
#include <string>
#include <vector>

#include "blockseq/autodiff.hpp"
#include "blockseq/nn.hpp"
#include "blockseq/optim.hpp"
#include "blockseq/random.hpp"

namespace blockseq {

enum class ModelMode { full, attention_only, blockwise_rnn_only };

ModelMode parse_model_mode(const std::string& s);
std::string to_string(ModelMode m);

/// Fixed term added to the learned log-joint. A tanh energy is bounded in b,
/// so without a prior the joint is improper in b and q's scale grows without
/// limit under the inference update.
enum class LatentPrior { none, standard_normal };

LatentPrior parse_latent_prior(const std::string& s);
std::string to_string(LatentPrior p);

struct ModelConfig {
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  std::size_t L = 32;
  std::size_t k = 2;
  std::size_t K_sp = 50;
  std::size_t d = 256;
  std::size_t latent = 64;
  std::size_t heads = 4;
  std::size_t head_dim = 64;
  std::size_t depth = 2;
  nn::Compression compression = nn::Compression::topk;
  ModelMode mode = ModelMode::full;
  LatentPrior latent_prior = LatentPrior::standard_normal;
  std::size_t embed_hidden = 256;
  std::size_t rnn_hidden = 256;
  std::size_t head_hidden = 128;
  std::size_t joint_hidden = 256;
  std::size_t fnn_hidden = 256;
  std::size_t ffn_hidden = 512;
  double dropout = 0.1;
  double lr = 8e-4;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
  /// Width of one raw step x_t = [a_prev; r_prev; o].
  std::size_t x_dim() const { return act_dim + 1 + obs_dim; }
  /// Width of the compressed block vector Y_n^k.
  std::size_t y_dim() const;
  /// Per-row output width of the FNN that replaces attention.
  std::size_t s_fnn() const;
};

/// Values of one block inference, detached from any tape.
struct BlockSummary {
  Tensor h;
  Tensor mu;
  Tensor sigma;
  Tensor yk;
  std::vector<std::size_t> positions;
};

/// Tape-resident result of infer_block.
struct BlockStep {
  Var yk;
  Var h;      ///< invalid in attention_only mode
  Var mu;     ///< invalid in attention_only mode
  Var sigma;  ///< invalid in attention_only mode
  std::vector<std::size_t> positions;
  std::vector<double> contributions;

  BlockSummary detach() const;
};

struct LatentBatch {
  Tensor samples;  ///< K_sp x latent, constants on every tape
  Var log_q;       ///< K_sp x 1
  Var log_joint;   ///< K_sp x 1
  std::vector<double> weights;
};

/// Draws mu + sigma * eps row by row.
Tensor sample_latents(const Tensor& mu, const Tensor& sigma, std::size_t count, RandomStream& rng);

/// exp(lw - max lw) normalised. Throws DegenerateWeightsError when no entry is finite.
std::vector<double> snis_normalize(std::span<const double> log_weights);

/// Fills batch.weights from log_joint - log_q.
void compute_weights(LatentBatch& batch);

/// sum_j w_j log p(B, b_j); weights enter as constants.
Var generative_objective(const LatentBatch& batch);
/// sum_j w_j log q(b_j); weights and samples enter as constants.
Var inference_objective(const LatentBatch& batch);

/// Accumulates sum_j w_j grad log p(B, b_j) into the stores bound on the batch tape.
void generative_grad(const LatentBatch& batch);
/// Accumulates -sum_j w_j grad log q(b_j), the descent direction on the KL term.
void inference_grad(const LatentBatch& batch);

struct ModelUpdateReport {
  double gen_loss = 0.0;
  double inf_loss = 0.0;
  std::size_t blocks = 0;
};

class BlockModel {
 public:
  BlockModel(ModelConfig cfg, RandomStream& init_rng);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& phi() { return phi_; }
  ParameterStore& theta() { return theta_; }
  const ParameterStore& phi() const { return phi_; }
  const ParameterStore& theta() const { return theta_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }

  /// rows x x_dim raw steps -> rows x d.
  Var embed(const Params& phi, Var x) const;
  /// One block: attention (or FNN) -> compress -> blockwise GRU -> heads.
  BlockStep infer_block(const Params& phi, Var embedded_block, Var h_prev, bool training, RandomStream* rng) const;
  /// mu_0 and sigma_0 produced from h_0 = 0.
  BlockStep initial_step(const Params& phi) const;
  BlockSummary initial_summary() const;
  Var heads_mu(const Params& phi, Var h) const;
  Var heads_sigma(const Params& phi, Var h) const;
  /// K x 1 learned log-joint for the compressed block and each latent row.
  Var log_joint(const Params& theta, Var yk, const Tensor& samples) const;

  /// Draws K_sp latents for a block and evaluates both densities on the tape.
  LatentBatch make_batch(const Params& theta, const BlockStep& step, RandomStream& rng) const;

  /// One SNIS update over N_mini raw sequences, each T x x_dim.
  ModelUpdateReport model_update(std::span<const Tensor> sequences, RandomStream& rng);
  /// Surrogate loss for the same update without stepping; used by gradient checks.
  Var model_loss(Tape& tape, std::span<const Tensor> sequences, RandomStream& rng, ModelUpdateReport* report);

  /// Runs the block pipeline over raw rows and returns one summary per complete block.
  std::vector<BlockSummary> summarize(const Tensor& raw_rows, RandomStream* rng = nullptr) const;

  bool has_latent() const { return cfg_.mode != ModelMode::attention_only; }

 private:
  ModelConfig cfg_;
  ParameterStore phi_;
  ParameterStore theta_;
  nn::Mlp embed_net_;
  std::vector<nn::AttentionLayer> attention_;
  nn::Mlp fnn_;
  nn::GruCell block_rnn_;
  nn::Mlp mu_head_;
  nn::Mlp sigma_head_;
  nn::Mlp joint_net_;
  Adam adam_;
};

}  // namespace blockseq
