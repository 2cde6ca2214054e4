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

#include "blockseq/block_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "blockseq/errors.hpp"

namespace blockseq {

namespace {

constexpr double kSigmaFloor = 1e-6;

std::string dims(std::size_t a, std::size_t b) { return std::to_string(a) + "x" + std::to_string(b); }

}  // namespace

LatentPrior parse_latent_prior(const std::string& s) {
  if (s == "none") return LatentPrior::none;
  if (s == "standard_normal" || s == "standard-normal") return LatentPrior::standard_normal;
  throw ConfigError("unknown latent prior: " + s);
}

std::string to_string(LatentPrior p) { return p == LatentPrior::none ? "none" : "standard-normal"; }

ModelMode parse_model_mode(const std::string& s) {
  if (s == "full") return ModelMode::full;
  if (s == "attention_only" || s == "attention-only") return ModelMode::attention_only;
  if (s == "blockwise_rnn_only" || s == "blockwise-rnn-only") return ModelMode::blockwise_rnn_only;
  throw ConfigError("unknown model mode: " + s);
}

std::string to_string(ModelMode m) {
  switch (m) {
    case ModelMode::full: return "full";
    case ModelMode::attention_only: return "attention_only";
    case ModelMode::blockwise_rnn_only: return "blockwise_rnn_only";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (obs_dim == 0 || act_dim == 0) throw ConfigError("model needs nonzero observation and action widths");
  if (L == 0) throw ConfigError("block length L must be positive");
  if (k == 0 || k > L) throw ConfigError("selection count k must satisfy 1 <= k <= L");
  if (K_sp == 0) throw ConfigError("K_sp must be at least 1");
  if (heads == 0 || d != heads * head_dim) {
    throw ConfigError("d must equal heads * head_dim (d=" + std::to_string(d) + ", heads=" + std::to_string(heads) +
                      ", head_dim=" + std::to_string(head_dim) + ")");
  }
  if (d <= act_dim) throw ConfigError("embedding width d must exceed the action width");
  if (depth == 0) throw ConfigError("attention depth must be at least 1");
  if (latent == 0 || rnn_hidden == 0 || head_hidden == 0 || joint_hidden == 0 || embed_hidden == 0) {
    throw ConfigError("hidden widths must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (!(lr > 0.0)) throw ConfigError("model learning rate must be positive");
  if (mode == ModelMode::blockwise_rnn_only) {
    if (compression != nn::Compression::topk) {
      throw ConfigError("blockwise_rnn_only replaces attention and cannot use compression " +
                        nn::to_string(compression));
    }
    if ((k * d) % L != 0) throw ConfigError("blockwise_rnn_only needs k*d divisible by L");
    if (fnn_hidden == 0) throw ConfigError("fnn_hidden must be positive");
  }
  if (compression == nn::Compression::linear && (k * d) % L != 0) {
    throw ConfigError("linear compression needs k*d divisible by L");
  }
}

std::size_t ModelConfig::y_dim() const {
  if (mode == ModelMode::blockwise_rnn_only) return L * s_fnn();
  return nn::compressed_dim(compression, k, d);
}

std::size_t ModelConfig::s_fnn() const { return k * d / L; }

BlockSummary BlockStep::detach() const {
  BlockSummary s;
  if (yk.valid()) s.yk = yk.value();
  if (h.valid()) s.h = h.value();
  if (mu.valid()) s.mu = mu.value();
  if (sigma.valid()) s.sigma = sigma.value();
  s.positions = positions;
  return s;
}

Tensor sample_latents(const Tensor& mu, const Tensor& sigma, std::size_t count, RandomStream& rng) {
  if (mu.rows() != 1 || !mu.same_shape(sigma)) throw ShapeError("sample_latents expects matching 1xD mu and sigma");
  const std::size_t D = mu.cols();
  Tensor out = Tensor::matrix(count, D);
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t i = 0; i < D; ++i) out(j, i) = mu[i] + sigma[i] * rng.normal();
  return out;
}

std::vector<double> snis_normalize(std::span<const double> log_weights) {
  if (log_weights.empty()) throw DegenerateWeightsError("no importance weights");
  double mx = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) {
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity()) {
      throw DegenerateWeightsError("importance log-weight is NaN or +inf");
    }
    mx = std::max(mx, lw);
  }
  if (!std::isfinite(mx)) throw DegenerateWeightsError("every importance log-weight is -inf");
  std::vector<double> w(log_weights.size());
  double total = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) total += (w[j] = std::exp(log_weights[j] - mx));
  for (double& v : w) v /= total;
  return w;
}

void compute_weights(LatentBatch& batch) {
  const Tensor& lj = batch.log_joint.value();
  const Tensor& lq = batch.log_q.value();
  if (lj.size() != lq.size()) throw ShapeError("log_joint and log_q disagree in length");
  std::vector<double> lw(lj.size());
  for (std::size_t j = 0; j < lw.size(); ++j) lw[j] = lj[j] - lq[j];
  batch.weights = snis_normalize(lw);
}

namespace {

Var weighted_sum(Var column, const std::vector<double>& weights) {
  if (column.value().size() != weights.size()) throw ShapeError("weights do not match the sample count");
  Tensor w({weights.size(), 1}, weights);
  return ops::sum(ops::mul(column, column.tape().constant(std::move(w))));
}

}  // namespace

Var generative_objective(const LatentBatch& batch) { return weighted_sum(batch.log_joint, batch.weights); }

Var inference_objective(const LatentBatch& batch) { return weighted_sum(batch.log_q, batch.weights); }

void generative_grad(const LatentBatch& batch) { backward(generative_objective(batch)); }

void inference_grad(const LatentBatch& batch) { backward(ops::neg(inference_objective(batch))); }

BlockModel::BlockModel(ModelConfig cfg, RandomStream& init_rng) : cfg_(std::move(cfg)), adam_(cfg_.lr) {
  cfg_.validate();
  const std::size_t H = cfg_.rnn_hidden;
  embed_net_ = nn::Mlp::create(phi_, "embed", {cfg_.obs_dim + 1, cfg_.embed_hidden, cfg_.d - cfg_.act_dim},
                               nn::Activation::tanh, nn::Activation::identity, init_rng);
  if (cfg_.mode == ModelMode::blockwise_rnn_only) {
    fnn_ = nn::Mlp::create(phi_, "fnn", {cfg_.d, cfg_.fnn_hidden, cfg_.fnn_hidden, cfg_.s_fnn()}, nn::Activation::tanh,
                           nn::Activation::identity, init_rng);
  } else {
    for (std::size_t i = 0; i < cfg_.depth; ++i) {
      attention_.push_back(nn::AttentionLayer::create(phi_, "att" + std::to_string(i), cfg_.d, cfg_.heads,
                                                      cfg_.ffn_hidden, cfg_.dropout, init_rng));
    }
    if (cfg_.compression == nn::Compression::linear) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
      phi_.add("comp.map", init_rng.uniform_matrix(cfg_.k * cfg_.d / cfg_.L, cfg_.d, -bound, bound));
    }
  }
  if (has_latent()) {
    block_rnn_ = nn::GruCell::create(phi_, "brnn", cfg_.y_dim(), H, init_rng);
    mu_head_ = nn::Mlp::create(phi_, "mu", {H, cfg_.head_hidden, cfg_.latent}, nn::Activation::tanh,
                               nn::Activation::identity, init_rng);
    sigma_head_ = nn::Mlp::create(phi_, "sigma", {H, cfg_.head_hidden, cfg_.latent}, nn::Activation::tanh,
                                  nn::Activation::softplus, init_rng);
    joint_net_ = nn::Mlp::create(theta_, "joint", {cfg_.y_dim() + cfg_.latent, cfg_.joint_hidden, 1},
                                 nn::Activation::tanh, nn::Activation::identity, init_rng);
  }
}

Var BlockModel::embed(const Params& phi, Var x) const {
  if (x.cols() != cfg_.x_dim()) {
    throw ShapeError("embed expects rows of width " + std::to_string(cfg_.x_dim()) + ", got " +
                     std::to_string(x.cols()));
  }
  Var features = embed_net_(phi, ops::slice_cols(x, cfg_.act_dim, cfg_.obs_dim + 1));
  std::vector<Var> parts{features, ops::slice_cols(x, 0, cfg_.act_dim)};
  return ops::concat_cols(parts);
}

Var BlockModel::heads_mu(const Params& phi, Var h) const { return mu_head_(phi, h); }

Var BlockModel::heads_sigma(const Params& phi, Var h) const {
  return ops::add_scalar(sigma_head_(phi, h), kSigmaFloor);
}

BlockStep BlockModel::infer_block(const Params& phi, Var block, Var h_prev, bool training, RandomStream* rng) const {
  if (block.cols() != cfg_.d)
    throw ShapeError("block must be embedded to width d, got " + dims(block.rows(), block.cols()));
  BlockStep step;
  if (cfg_.mode == ModelMode::blockwise_rnn_only) {
    if (block.rows() != cfg_.L) throw ShapeError("FNN block encoder expects exactly L rows");
    step.yk = nn::fnn_block_encode(phi, fnn_, block);
  } else {
    nn::AttentionOutput out = nn::stack_forward(phi, block, attention_, training, rng);
    nn::Compressed c = nn::compress_variant(phi, out, cfg_.compression, cfg_.k, "comp.map", rng);
    step.yk = c.vector;
    step.positions = std::move(c.positions);
    step.contributions = std::move(out.contributions);
  }
  if (has_latent()) {
    step.h = block_rnn_.step(phi, step.yk, h_prev);
    step.mu = heads_mu(phi, step.h);
    step.sigma = heads_sigma(phi, step.h);
  }
  return step;
}

BlockStep BlockModel::initial_step(const Params& phi) const {
  BlockStep step;
  step.yk = phi.tape().constant(Tensor::matrix(1, cfg_.y_dim()));
  if (has_latent()) {
    step.h = phi.tape().constant(Tensor::matrix(1, cfg_.rnn_hidden));
    step.mu = heads_mu(phi, step.h);
    step.sigma = heads_sigma(phi, step.h);
  }
  return step;
}

BlockSummary BlockModel::initial_summary() const {
  Tape tape(false);
  Params phi(tape, const_cast<ParameterStore&>(phi_), Params::Mode::frozen);
  return initial_step(phi).detach();
}

Var BlockModel::log_joint(const Params& theta, Var yk, const Tensor& samples) const {
  if (!has_latent()) throw ConfigError("attention_only mode has no log-joint network");
  if (samples.cols() != cfg_.latent) throw ShapeError("latent samples have the wrong width");
  Tape& tape = theta.tape();
  std::vector<Var> parts{ops::repeat_rows(yk, samples.rows()), tape.constant(samples)};
  Var energy = joint_net_(theta, ops::concat_cols(parts));
  if (cfg_.latent_prior == LatentPrior::none) return energy;
  Tensor prior = Tensor::matrix(samples.rows(), 1);
  for (std::size_t j = 0; j < samples.rows(); ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < cfg_.latent; ++i) sq += samples(j, i) * samples(j, i);
    prior[j] = -0.5 * sq - 0.5 * static_cast<double>(cfg_.latent) * std::log(2.0 * std::numbers::pi);
  }
  return ops::add(energy, tape.constant(prior));
}

LatentBatch BlockModel::make_batch(const Params& theta, const BlockStep& step, RandomStream& rng) const {
  LatentBatch batch;
  batch.samples = sample_latents(step.mu.value(), step.sigma.value(), cfg_.K_sp, rng);
  Tape& tape = theta.tape();
  batch.log_q = ops::gaussian_log_density(tape.constant(batch.samples), step.mu, step.sigma);
  // The generative objective must not reach phi through the compressed block.
  batch.log_joint = log_joint(theta, ops::stop_gradient(step.yk), batch.samples);
  compute_weights(batch);
  return batch;
}

Var BlockModel::model_loss(Tape& tape, std::span<const Tensor> sequences, RandomStream& rng,
                           ModelUpdateReport* report) {
  if (!has_latent()) throw ConfigError("attention_only mode has no block model update");
  if (sequences.empty()) throw ConfigError("model update needs at least one sequence");
  Params phi(tape, phi_);
  Params theta(tape, theta_);
  std::vector<Var> terms;
  double gen = 0.0, inf = 0.0;
  for (const Tensor& seq : sequences) {
    const std::size_t T = seq.rows();
    if (T == 0 || T % cfg_.L != 0) {
      throw ConfigError("sequence of length " + std::to_string(T) + " does not split into blocks of " +
                        std::to_string(cfg_.L));
    }
    Var emb = embed(phi, tape.constant(seq));
    Var h = tape.constant(Tensor::matrix(1, cfg_.rnn_hidden));
    for (std::size_t n = 0; n < T / cfg_.L; ++n) {
      BlockStep step = infer_block(phi, ops::slice_rows(emb, n * cfg_.L, cfg_.L), h, true, &rng);
      LatentBatch batch = make_batch(theta, step, rng);
      Var g = generative_objective(batch);
      Var q = inference_objective(batch);
      gen -= g.value().item();
      inf -= q.value().item();
      terms.push_back(ops::neg(ops::add(g, q)));
      h = step.h;
    }
  }
  Var total = ops::sum(ops::concat_rows(terms));
  if (report != nullptr) {
    report->blocks = terms.size();
    report->gen_loss = gen / static_cast<double>(terms.size());
    report->inf_loss = inf / static_cast<double>(terms.size());
  }
  return ops::scale(total, 1.0 / static_cast<double>(sequences.size()));
}

ModelUpdateReport BlockModel::model_update(std::span<const Tensor> sequences, RandomStream& rng) {
  ModelUpdateReport report;
  phi_.zero_grad();
  theta_.zero_grad();
  Tape tape;
  Var loss = model_loss(tape, sequences, rng, &report);
  if (!loss.value().all_finite()) throw NumericalAbort("block model loss is not finite");
  backward(loss);
  adam_.step({&phi_, &theta_});
  return report;
}

std::vector<BlockSummary> BlockModel::summarize(const Tensor& raw_rows, RandomStream* rng) const {
  Tape tape(false);
  Params phi(tape, const_cast<ParameterStore&>(phi_), Params::Mode::frozen);
  Var emb = embed(phi, tape.constant(raw_rows));
  std::vector<BlockSummary> out;
  Var h = tape.constant(Tensor::matrix(1, cfg_.rnn_hidden));
  for (std::size_t n = 0; n + 1 <= raw_rows.rows() / cfg_.L; ++n) {
    BlockStep step = infer_block(phi, ops::slice_rows(emb, n * cfg_.L, cfg_.L), h, false, rng);
    out.push_back(step.detach());
    if (has_latent()) h = step.h;
  }
  return out;
}

}  // namespace blockseq
