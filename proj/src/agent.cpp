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

#include "blockseq/agent.hpp"

#include <algorithm>
#include <cmath>

#include "blockseq/errors.hpp"

namespace blockseq {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kLog2 = 0.6931471805599453;

using ops::concat_cols;
using ops::concat_rows;

Var cat_cols(std::initializer_list<Var> parts) { return concat_cols(std::span<const Var>(parts.begin(), parts.size())); }

Tensor row_of(const std::vector<double>& v) { return Tensor::row(v); }

double scalar(Var v) { return v.value()[0]; }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

AgentKind parse_agent_kind(const std::string& s) {
  if (s == "proposed") return AgentKind::proposed;
  if (s == "sac" || s == "sac-raw" || s == "sac_raw") return AgentKind::sac_raw;
  if (s == "lstm") return AgentKind::lstm;
  if (s == "attention-only" || s == "attention_only") return AgentKind::attention_only;
  if (s == "blockwise-rnn-only" || s == "blockwise_rnn_only") return AgentKind::blockwise_rnn_only;
  throw ConfigError("unknown agent: " + s);
}

std::string to_string(AgentKind k) {
  switch (k) {
    case AgentKind::proposed: return "proposed";
    case AgentKind::sac_raw: return "sac";
    case AgentKind::lstm: return "lstm";
    case AgentKind::attention_only: return "attention-only";
    case AgentKind::blockwise_rnn_only: return "blockwise-rnn-only";
  }
  return "?";
}

bool uses_block_model(AgentKind k) {
  return k == AgentKind::proposed || k == AgentKind::attention_only || k == AgentKind::blockwise_rnn_only;
}

ModelMode model_mode_for(AgentKind k) {
  switch (k) {
    case AgentKind::attention_only: return ModelMode::attention_only;
    case AgentKind::blockwise_rnn_only: return ModelMode::blockwise_rnn_only;
    default: return ModelMode::full;
  }
}

void AgentConfig::validate() const {
  if (obs_dim == 0 || act_dim == 0) throw ConfigError("agent needs positive observation and action sizes");
  if (!(action_bound > 0.0)) throw ConfigError("agent.action_bound must be positive");
  if (z_hidden == 0 || hidden == 0) throw ConfigError("agent widths must be positive");
  if (kind == AgentKind::lstm && lstm_embed <= act_dim) throw ConfigError("agent.lstm_embed must exceed the action size");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("agent.gamma must lie in [0, 1]");
  if (tau < 0.0 || tau > 1.0) throw ConfigError("agent.tau must lie in [0, 1]");
  if (alpha < 0.0) throw ConfigError("agent.alpha must be nonnegative");
  if (!(lr > 0.0)) throw ConfigError("agent.lr must be positive");
  if (!(log_std_min < log_std_max)) throw ConfigError("policy log-std range is empty");
}

Agent::Agent(AgentConfig cfg, BlockModel* model, RandomStream& init_rng) : cfg_(cfg), model_(model), adam_(cfg.lr) {
  cfg_.validate();
  if (uses_block_model(cfg_.kind)) {
    if (model_ == nullptr) throw ConfigError("agent " + to_string(cfg_.kind) + " needs a block model");
    const ModelConfig& m = model_->config();
    if (m.mode != model_mode_for(cfg_.kind)) throw ConfigError("block model mode does not match the agent kind");
    if (m.obs_dim != cfg_.obs_dim || m.act_dim != cfg_.act_dim) throw ConfigError("block model and agent disagree on sizes");
  }
  const std::size_t A = cfg_.act_dim, H = cfg_.hidden;
  const std::size_t state = z_dim() + cfg_.obs_dim + 1;
  using nn::Activation;

  if (cfg_.kind == AgentKind::lstm) {
    lstm_embed_ = nn::Mlp::create(store_, "lstm.embed", {cfg_.obs_dim + 1, cfg_.lstm_embed, cfg_.lstm_embed - A},
                                  Activation::tanh, Activation::identity, init_rng);
    z_lstm_ = nn::LstmCell::create(store_, "zrnn", cfg_.lstm_embed, cfg_.z_hidden, init_rng);
  } else if (cfg_.kind != AgentKind::sac_raw) {
    const ModelConfig& m = model_->config();
    const std::size_t cond = m.mode == ModelMode::attention_only ? m.y_dim() : 2 * m.latent;
    z_gru_ = nn::GruCell::create(store_, "zrnn", m.d + cond, cfg_.z_hidden, init_rng);
  }
  pi_ = nn::Mlp::create(store_, "pi", {state, H, H, 2 * A}, Activation::relu, Activation::identity, init_rng);
  q1_ = nn::Mlp::create(store_, "q1", {state + A, H, H, 1}, Activation::relu, Activation::identity, init_rng);
  q2_ = nn::Mlp::create(store_, "q2", {state + A, H, H, 1}, Activation::relu, Activation::identity, init_rng);
  v_ = nn::Mlp::create(store_, "v", {state, H, H, 1}, Activation::relu, Activation::identity, init_rng);
  // The target shares V's layer names so a plain copy initialises it.
  v_target_ = v_;
  for (const auto& name : store_.names())
    if (name.rfind("v.", 0) == 0) target_.add(name, store_.value(name));
}

std::size_t Agent::z_dim() const { return cfg_.kind == AgentKind::sac_raw ? 0 : cfg_.z_hidden; }

Agent::Policy Agent::policy(const Params& p, Var state) const {
  Var out = pi_(p, state);
  Policy pol;
  pol.mean = ops::slice_cols(out, 0, cfg_.act_dim);
  pol.log_std = ops::clamp(ops::slice_cols(out, cfg_.act_dim, cfg_.act_dim), cfg_.log_std_min, cfg_.log_std_max);
  return pol;
}

Var Agent::q_value(const Params& p, const std::string& net, Var state, Var action) const {
  const nn::Mlp& q = net == "q1" ? q1_ : q2_;
  return q(p, cat_cols({state, action}));
}

Var Agent::step_z(const Params& p, Var projected, Var z, Var* c) const {
  if (cfg_.kind == AgentKind::lstm) {
    nn::LstmState next = z_lstm_.step_projected(p, projected, nn::LstmState{z, *c});
    *c = next.c;
    return next.h;
  }
  return z_gru_.step_projected(p, projected, z);
}

Var Agent::project_z(const Params& p, Var inputs) const {
  return cfg_.kind == AgentKind::lstm ? z_lstm_.project(p, inputs) : z_gru_.project(p, inputs);
}

EpisodeState Agent::begin_episode(const std::vector<double>& o0) const {
  if (o0.size() != cfg_.obs_dim) throw ShapeError("initial observation has the wrong size");
  EpisodeState s;
  s.obs = o0;
  if (cfg_.kind == AgentKind::sac_raw) return s;
  s.z = Tensor::matrix(1, cfg_.z_hidden);
  s.c = Tensor::matrix(1, cfg_.z_hidden);
  if (model_ != nullptr) {
    const ModelConfig& m = model_->config();
    if (model_->has_latent()) {
      BlockSummary first = model_->initial_summary();
      s.h = first.h;
      s.cond = Tensor::matrix(1, 2 * m.latent);
      for (std::size_t i = 0; i < m.latent; ++i) {
        s.cond[i] = first.mu[i];
        s.cond[m.latent + i] = first.sigma[i];
      }
    } else {
      s.cond = Tensor::matrix(1, m.y_dim());
    }
  }
  return s;
}

ActionSample Agent::act(const EpisodeState& state, bool deterministic, RandomStream* rng) const {
  if (!deterministic && rng == nullptr) throw ConfigError("stochastic action selection needs a random stream");
  Tape tape(false);
  Params p(tape, const_cast<ParameterStore&>(store_), Params::Mode::frozen);
  std::vector<Var> parts;
  if (z_dim() > 0) parts.push_back(tape.constant(state.z));
  parts.push_back(tape.constant(row_of(state.obs)));
  parts.push_back(tape.constant(Tensor::scalar(state.r_prev)));
  Policy pol = policy(p, concat_cols(parts));

  ActionSample out;
  out.action.resize(cfg_.act_dim);
  double log_prob = -0.5 * kLog2Pi * static_cast<double>(cfg_.act_dim);
  for (std::size_t i = 0; i < cfg_.act_dim; ++i) {
    const double eps = deterministic ? 0.0 : rng->normal();
    const double ls = pol.log_std.value()[i];
    const double u = pol.mean.value()[i] + std::exp(ls) * eps;
    out.action[i] = cfg_.action_bound * std::tanh(u);
    // log(1 - tanh(u)^2) written in a form that stays finite for large |u|.
    const double log_jac = std::log(cfg_.action_bound) + 2.0 * (kLog2 - u - softplus(-2.0 * u));
    log_prob += -0.5 * eps * eps - ls - log_jac;
  }
  out.log_prob = log_prob;
  return out;
}

void Agent::observe(EpisodeState& state, const std::vector<double>& action, double reward,
                    const std::vector<double>& next_obs, RandomStream* rng) const {
  if (action.size() != cfg_.act_dim || next_obs.size() != cfg_.obs_dim) throw ShapeError("transition has the wrong size");
  std::vector<double> x(action);
  x.push_back(reward);
  x.insert(x.end(), next_obs.begin(), next_obs.end());
  state.obs = next_obs;
  state.r_prev = reward;
  ++state.t;
  if (cfg_.kind == AgentKind::sac_raw) return;

  Tape tape(false);
  Params p(tape, const_cast<ParameterStore&>(store_), Params::Mode::frozen);
  Var xrow = tape.constant(row_of(x));
  Var z = tape.constant(state.z);
  if (cfg_.kind == AgentKind::lstm) {
    Var feat = lstm_embed_(p, ops::slice_cols(xrow, cfg_.act_dim, cfg_.obs_dim + 1));
    Var xhat = cat_cols({feat, ops::slice_cols(xrow, 0, cfg_.act_dim)});
    Var c = tape.constant(state.c);
    state.z = step_z(p, project_z(p, xhat), z, &c).value();
    state.c = c.value();
    return;
  }

  Params phi(tape, model_->phi(), Params::Mode::frozen);
  Var xhat = model_->embed(phi, xrow);
  state.z = step_z(p, project_z(p, cat_cols({xhat, tape.constant(state.cond)})), z, nullptr).value();

  state.block_rows.insert(state.block_rows.end(), x.begin(), x.end());
  const ModelConfig& m = model_->config();
  if (state.block_rows.size() == m.L * m.x_dim()) {
    Var block = model_->embed(phi, tape.constant(Tensor({m.L, m.x_dim()}, state.block_rows)));
    Var h = tape.constant(model_->has_latent() ? state.h : Tensor::matrix(1, m.rnn_hidden));
    BlockStep step = model_->infer_block(phi, block, h, /*training=*/false, rng);
    if (model_->has_latent()) {
      state.h = step.h.value();
      state.cond = cat_cols({step.mu, step.sigma}).value();
    } else {
      state.cond = step.yk.value();
    }
    state.block_rows.clear();
    ++state.blocks;
  }
}

Var Agent::unroll(const Params& agent, const Params& phi, std::span<const Window> windows, RandomStream* rng) const {
  Tape& tape = agent.tape();
  const std::size_t N = windows.size(), T = windows.front().length();
  const std::size_t xd = cfg_.act_dim + 1 + cfg_.obs_dim;

  // Time-major raw rows: row j * N + i is step j of window i.
  Tensor raw = Tensor::matrix(T * N, xd);
  for (std::size_t j = 0; j < T; ++j)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t c = 0; c < xd; ++c) raw(j * N + i, c) = windows[i].rows(j, c);
  Var X = tape.constant(raw);

  Var inputs;
  if (cfg_.kind == AgentKind::lstm) {
    Var feat = lstm_embed_(agent, ops::slice_cols(X, cfg_.act_dim, cfg_.obs_dim + 1));
    inputs = cat_cols({feat, ops::slice_cols(X, 0, cfg_.act_dim)});
  } else {
    const ModelConfig& m = model_->config();
    if (T % m.L != 0) throw ConfigError("window length must be a multiple of the block length");
    Var emb = model_->embed(phi, X);
    const std::size_t B = T / m.L;
    // cond[i][b]: conditioning used by block b of window i.
    std::vector<std::vector<Var>> cond(B, std::vector<Var>(N));
    for (std::size_t i = 0; i < N; ++i) {
      BlockStep prev = model_->initial_step(phi);
      for (std::size_t b = 0; b < B; ++b) {
        cond[b][i] = model_->has_latent() ? cat_cols({prev.mu, prev.sigma}) : prev.yk;
        if (b + 1 == B) break;
        std::vector<std::size_t> rows(m.L);
        for (std::size_t j = 0; j < m.L; ++j) rows[j] = (b * m.L + j) * N + i;
        Var h = model_->has_latent() ? prev.h : tape.constant(Tensor::matrix(1, m.rnn_hidden));
        prev = model_->infer_block(phi, ops::gather_rows(emb, rows), h, /*training=*/false, rng);
      }
    }
    std::vector<Var> blocks;
    for (std::size_t b = 0; b < B; ++b) {
      Var per_block = concat_rows(cond[b]);
      std::vector<Var> copies(m.L, per_block);
      blocks.push_back(concat_rows(copies));
    }
    Var C = concat_rows(blocks);
    if (model_->has_latent()) {
      // Summaries and the embedding are trained only by the model update.
      C = ops::stop_gradient(C);
      emb = ops::stop_gradient(emb);
    }
    inputs = cat_cols({emb, C});
  }

  // The input projection is shared by every step, so it runs once over all rows.
  Var projected = project_z(agent, inputs);
  std::vector<Var> zs;
  zs.reserve(T + 1);
  Var z = tape.constant(Tensor::matrix(N, cfg_.z_hidden));
  Var c = tape.constant(Tensor::matrix(N, cfg_.z_hidden));
  zs.push_back(z);
  for (std::size_t j = 0; j < T; ++j) {
    z = step_z(agent, ops::slice_rows(projected, j * N, N), z, &c);
    zs.push_back(z);
  }
  return concat_rows(zs);
}

Tensor Agent::replay_z(std::span<const Window> windows) const {
  if (z_dim() == 0) throw ConfigError("the raw-observation agent has no recurrent input");
  if (windows.empty()) throw ConfigError("replay_z needs at least one window");
  Tape tape(false);
  Params p(tape, const_cast<ParameterStore&>(store_), Params::Mode::frozen);
  ParameterStore empty;
  Params phi(tape, model_ != nullptr ? model_->phi() : empty, Params::Mode::frozen);
  return unroll(p, phi, windows, nullptr).value();
}

Agent::Batch Agent::assemble(std::span<const Window> windows) const {
  const std::size_t N = windows.size(), T = windows.front().length();
  const std::size_t A = cfg_.act_dim, O = cfg_.obs_dim, M = T * N;
  Batch b{Tensor::matrix(M, O), Tensor::matrix(M, O), Tensor::matrix(M, 1),
          Tensor::matrix(M, 1), Tensor::matrix(M, A), Tensor::matrix(M, 1)};
  for (std::size_t j = 0; j < T; ++j) {
    for (std::size_t i = 0; i < N; ++i) {
      const Window& w = windows[i];
      const std::size_t r = j * N + i;
      for (std::size_t c = 0; c < O; ++c) {
        b.obs(r, c) = j == 0 ? w.o0[c] : w.rows(j - 1, A + 1 + c);
        b.next_obs(r, c) = w.rows(j, A + 1 + c);
      }
      for (std::size_t c = 0; c < A; ++c) b.act(r, c) = w.rows(j, c) / cfg_.action_bound;
      b.r_prev[r] = j == 0 ? w.r_prev : w.rows(j - 1, A);
      b.reward[r] = w.rows(j, A);
      b.not_terminal[r] = 1.0 - w.terminal[j];
    }
  }
  return b;
}

SacGraph Agent::build_losses(Tape& tape, std::span<const Window> windows, RandomStream& rng, bool bind_model) {
  if (windows.empty()) throw ConfigError("SAC update needs at least one window");
  const std::size_t N = windows.size(), T = windows.front().length();
  const std::size_t A = cfg_.act_dim, O = cfg_.obs_dim, M = T * N;
  for (const auto& w : windows) {
    if (w.length() != T || w.rows.cols() != A + 1 + O) throw ShapeError("SAC windows must share one shape");
  }

  const Batch b = assemble(windows);
  const Tensor &obs = b.obs, &next_obs = b.next_obs, &r_prev = b.r_prev, &reward = b.reward, &act = b.act;
  const Tensor& not_terminal = b.not_terminal;

  Params P(tape, store_);
  Params Pf(tape, store_, Params::Mode::frozen);
  Params Pt(tape, target_, Params::Mode::frozen);
  const bool end_to_end = cfg_.kind == AgentKind::attention_only;
  ParameterStore empty;
  Params phi = model_ != nullptr
                   ? Params(tape, model_->phi(), end_to_end || bind_model ? Params::Mode::trainable : Params::Mode::frozen)
                   : Params(tape, empty, Params::Mode::frozen);

  Var state, state_sg, next_state;
  Var O_t = tape.constant(obs), Rp = tape.constant(r_prev), R = tape.constant(reward);
  Var On = tape.constant(next_obs);
  if (z_dim() == 0) {
    state = cat_cols({O_t, Rp});
    state_sg = state;
    next_state = cat_cols({On, R});
  } else {
    Var Z = unroll(P, phi, windows, &rng);
    Var z = ops::slice_rows(Z, 0, M);
    state = cat_cols({z, O_t, Rp});
    state_sg = cat_cols({ops::stop_gradient(z), O_t, Rp});
    next_state = cat_cols({ops::stop_gradient(ops::slice_rows(Z, N, M)), On, R});
  }

  SacGraph g;
  // Critic: y = r + gamma (1 - terminal) Vbar(s').
  Tensor vbar = v_target_(Pt, next_state).value();
  g.q_target = Tensor::matrix(M, 1);
  for (std::size_t r = 0; r < M; ++r) g.q_target[r] = reward[r] + cfg_.gamma * not_terminal[r] * vbar[r];
  Var y = tape.constant(g.q_target);
  Var A_t = tape.constant(act);
  Var q1 = q_value(P, "q1", state, A_t), q2 = q_value(P, "q2", state, A_t);
  g.critic_loss = ops::add(ops::scale(ops::mean(ops::square(ops::sub(q1, y))), 0.5),
                           ops::scale(ops::mean(ops::square(ops::sub(q2, y))), 0.5));

  // Reparameterised policy sample on the detached state.
  Policy pol = policy(P, state_sg);
  Tensor eps = rng.normal_matrix(M, A);
  Var u = ops::add(pol.mean, ops::mul(ops::exp(pol.log_std), tape.constant(eps)));
  Var a_pi = ops::tanh(u);
  Tensor gauss = Tensor::matrix(M, 1);
  for (std::size_t r = 0; r < M; ++r) {
    double s = -0.5 * kLog2Pi * static_cast<double>(A);
    for (std::size_t c = 0; c < A; ++c) s -= 0.5 * eps(r, c) * eps(r, c);
    gauss[r] = s;
  }
  // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
  Var log_jac = ops::scale(ops::add_scalar(ops::add(u, ops::softplus(ops::scale(u, -2.0))), -kLog2), -2.0);
  Var log_pi = ops::sub(ops::add(tape.constant(gauss), ops::neg(ops::row_sum(pol.log_std))),
                        ops::add_scalar(ops::row_sum(log_jac), static_cast<double>(A) * std::log(cfg_.action_bound)));
  Var q1_pi = q_value(Pf, "q1", state_sg, a_pi), q2_pi = q_value(Pf, "q2", state_sg, a_pi);
  Var min_q = ops::minimum(q1_pi, q2_pi);
  g.actor_loss = ops::mean(ops::sub(ops::scale(log_pi, cfg_.alpha), min_q));
  g.q1_pi = q1_pi.value();
  g.q2_pi = q2_pi.value();
  g.log_pi = log_pi.value();

  // Value: V(s) toward min Q - alpha log pi, held constant.
  g.v_target = Tensor::matrix(M, 1);
  for (std::size_t r = 0; r < M; ++r) g.v_target[r] = min_q.value()[r] - cfg_.alpha * g.log_pi[r];
  Var v = v_(P, state);
  g.value_loss = ops::scale(ops::mean(ops::square(ops::sub(v, tape.constant(g.v_target)))), 0.5);

  g.total = ops::add(ops::add(g.critic_loss, g.value_loss), g.actor_loss);
  return g;
}

Var Agent::probe_loss(Tape& tape, std::span<const Window> windows, std::uint64_t seed) {
  if (windows.empty()) throw ConfigError("probe_loss needs at least one window");
  const std::size_t M = windows.front().length() * windows.size();
  const Batch b = assemble(windows);
  Params P(tape, store_);
  ParameterStore empty;
  Params phi(tape, model_ != nullptr ? model_->phi() : empty, Params::Mode::frozen);
  Var O_t = tape.constant(b.obs), Rp = tape.constant(b.r_prev);
  Var state = z_dim() == 0 ? cat_cols({O_t, Rp})
                           : cat_cols({ops::slice_rows(unroll(P, phi, windows, nullptr), 0, M), O_t, Rp});
  Policy pol = policy(P, state);
  Var A_t = tape.constant(b.act);
  std::vector<Var> outs{pol.mean, pol.log_std, q_value(P, "q1", state, A_t), q_value(P, "q2", state, A_t),
                        v_(P, state)};
  RandomStream rng(seed, "probe");
  Var total = tape.constant(Tensor::scalar(0.0));
  for (Var o : outs) {
    Var w = tape.constant(rng.uniform_matrix(o.rows(), o.cols(), -1.0, 1.0));
    total = ops::add(total, ops::sum(ops::mul(o, w)));
  }
  return total;
}

SacStats Agent::update(std::span<const Window> windows, RandomStream& rng) {
  Tape tape;
  store_.zero_grad();
  const bool end_to_end = cfg_.kind == AgentKind::attention_only;
  if (end_to_end) model_->phi().zero_grad();
  SacGraph g = build_losses(tape, windows, rng);
  SacStats stats{scalar(g.actor_loss), scalar(g.critic_loss), scalar(g.value_loss)};
  if (!std::isfinite(stats.actor_loss) || !std::isfinite(stats.critic_loss) || !std::isfinite(stats.value_loss)) {
    throw NumericalAbort("non-finite SAC loss");
  }
  backward(g.total);
  if (end_to_end) {
    adam_.step({&store_, &model_->phi()});
  } else {
    adam_.step(store_);
  }
  soft_update(cfg_.tau);
  return stats;
}

void Agent::soft_update(double tau) {
  for (auto& [name, entry] : target_) {
    const Tensor& src = store_.value(name);
    for (std::size_t i = 0; i < entry.value.size(); ++i) entry.value[i] = (1.0 - tau) * entry.value[i] + tau * src[i];
  }
}

}  // namespace blockseq
