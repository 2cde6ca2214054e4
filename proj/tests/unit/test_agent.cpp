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

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <memory>

#include "blockseq/agent.hpp"
#include "blockseq/envs.hpp"
#include "blockseq/errors.hpp"
#include "test_support.hpp"

using namespace blockseq;
using Catch::Approx;

namespace {

constexpr std::size_t kT = 8;

ModelConfig small_model(ModelMode mode) {
  ModelConfig c;
  c.obs_dim = 3;
  c.act_dim = 1;
  c.L = 4;
  c.k = 2;
  c.K_sp = 8;
  c.d = 8;
  c.heads = 2;
  c.head_dim = 4;
  c.latent = 3;
  c.embed_hidden = 6;
  c.rnn_hidden = 5;
  c.head_hidden = 6;
  c.joint_hidden = 7;
  c.fnn_hidden = 6;
  c.ffn_hidden = 16;
  c.dropout = 0.0;
  c.mode = mode;
  return c;
}

struct Rig {
  std::unique_ptr<BlockModel> model;
  std::unique_ptr<Agent> agent;
};

Rig make_rig(AgentKind kind, std::uint64_t seed = 1, double gamma = 0.99, double tau = 0.005) {
  Rig rig;
  RandomStream init(seed, "init");
  if (uses_block_model(kind)) rig.model = std::make_unique<BlockModel>(small_model(model_mode_for(kind)), init);
  AgentConfig a;
  a.kind = kind;
  a.obs_dim = 3;
  a.act_dim = 1;
  a.action_bound = 2.0;
  a.z_hidden = 6;
  a.hidden = 10;
  a.lstm_embed = 7;
  a.gamma = gamma;
  a.tau = tau;
  rig.agent = std::make_unique<Agent>(a, rig.model.get(), init);
  return rig;
}

// Pendulum rollouts with random torques.
ReplayMemory collect(std::size_t episodes, std::uint64_t seed) {
  EnvParams p;
  p.kind = EnvKind::pendulum_missing;
  p.max_steps = 20;
  PendulumMissing env(p, seed);
  RandomStream rng(seed, "collect");
  ReplayMemory m(3, 1, kT, 100);
  for (std::size_t e = 0; e < episodes; ++e) {
    m.begin_episode(env.reset());
    while (!env.done()) {
      std::vector<double> a{rng.uniform(-2, 2)};
      StepResult r = env.step(a);
      m.append(a, r.reward, r.observation, r.done, r.terminal);
    }
  }
  return m;
}

std::vector<Window> windows(std::size_t n, std::uint64_t seed = 3) {
  static const ReplayMemory memory = collect(4, 11);
  RandomStream rng(seed, "sample");
  return memory.sample(n, rng);
}

const std::vector<AgentKind> kAllKinds{AgentKind::proposed, AgentKind::sac_raw, AgentKind::lstm,
                                       AgentKind::attention_only, AgentKind::blockwise_rnn_only};

}  // namespace

TEST_CASE("agent kinds parse") {
  for (AgentKind k : kAllKinds) CHECK(parse_agent_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_agent_kind("ppo"), ConfigError);
  AgentConfig a;
  a.kind = AgentKind::proposed;
  a.obs_dim = 3;
  a.act_dim = 1;
  RandomStream init(1, "init");
  CHECK_THROWS_AS(Agent(a, nullptr, init), ConfigError);
}

TEST_CASE("actions stay within bounds and deterministic mode repeats") {
  for (AgentKind k : kAllKinds) {
    Rig rig = make_rig(k);
    EpisodeState s = rig.agent->begin_episode({0.1, -0.2, 0.3});
    RandomStream rng(4, "act");
    for (int i = 0; i < 50; ++i) {
      ActionSample a = rig.agent->act(s, false, &rng);
      CHECK(std::abs(a.action[0]) <= 2.0);
      CHECK(std::isfinite(a.log_prob));
      rig.agent->observe(s, a.action, -1.0, {0.0, 0.5, -0.5}, &rng);
    }
    ActionSample d1 = rig.agent->act(s, true, nullptr);
    ActionSample d2 = rig.agent->act(s, true, nullptr);
    CHECK(d1.action == d2.action);
    CHECK(d1.log_prob == d2.log_prob);
  }
}

TEST_CASE("log-probability stays finite when the policy saturates") {
  Rig rig = make_rig(AgentKind::sac_raw);
  Tensor& b = rig.agent->store().value("pi.l2.b");
  b[0] = 40.0;   // mean far into the tanh tail
  b[1] = -30.0;  // log std clipped to the floor
  EpisodeState s = rig.agent->begin_episode({0.0, 0.0, 0.0});
  RandomStream rng(5, "act");
  ActionSample a = rig.agent->act(s, false, &rng);
  CHECK(a.action[0] == Approx(2.0));
  CHECK(std::isfinite(a.log_prob));
  Tape tape;
  SacGraph g = rig.agent->build_losses(tape, windows(2), rng);
  for (double v : g.log_pi.values()) CHECK(std::isfinite(v));
}

TEST_CASE("episode start has zero recurrent input") {
  for (AgentKind k : {AgentKind::proposed, AgentKind::lstm, AgentKind::attention_only}) {
    Rig rig = make_rig(k);
    EpisodeState s = rig.agent->begin_episode({0.0, 1.0, 0.0});
    for (double v : s.z.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("block conditioning is constant within a block") {
  Rig rig = make_rig(AgentKind::proposed);
  EpisodeState s = rig.agent->begin_episode({0.0, 1.0, 0.0});
  const Tensor initial = s.cond;
  RandomStream rng(6, "act");
  for (int t = 0; t < 3; ++t) {
    rig.agent->observe(s, {0.5}, -1.0, {rng.normal(), rng.normal(), rng.normal()});
    CHECK(s.cond == initial);
  }
  rig.agent->observe(s, {0.5}, -1.0, {0.1, 0.2, 0.3});
  CHECK(s.blocks == 1);
  CHECK_FALSE(s.cond == initial);
  const Tensor second = s.cond;
  for (int t = 0; t < 3; ++t) {
    rig.agent->observe(s, {0.5}, -1.0, {rng.normal(), rng.normal(), rng.normal()});
    CHECK(s.cond == second);
  }
}

TEST_CASE("training unroll reproduces the online recurrence") {
  for (AgentKind k : {AgentKind::proposed, AgentKind::lstm, AgentKind::attention_only,
                      AgentKind::blockwise_rnn_only}) {
    Rig rig = make_rig(k);
    ReplayMemory memory = collect(1, 21);
    Window w = memory.window(0);
    std::vector<Window> one{w};
    const Tensor Z = rig.agent->replay_z(one);
    EpisodeState s = rig.agent->begin_episode(w.o0);
    for (std::size_t j = 0; j < kT; ++j) {
      for (std::size_t c = 0; c < 6; ++c) CHECK(Z(j, c) == Approx(s.z[c]).margin(1e-12));
      const double a = w.rows(j, 0), r = w.rows(j, 1);
      rig.agent->observe(s, {a}, r, {w.rows(j, 2), w.rows(j, 3), w.rows(j, 4)});
    }
    for (std::size_t c = 0; c < 6; ++c) CHECK(Z(kT, c) == Approx(s.z[c]).margin(1e-12));
  }
}

TEST_CASE("reinforcement learning gradients never reach the block model") {
  for (AgentKind k : {AgentKind::proposed, AgentKind::blockwise_rnn_only}) {
    Rig rig = make_rig(k);
    RandomStream rng(7, "sac");
    Tape tape;
    rig.model->phi().zero_grad();
    rig.model->theta().zero_grad();
    rig.agent->store().zero_grad();
    SacGraph g = rig.agent->build_losses(tape, windows(3), rng, /*bind_model=*/true);
    backward(g.total);
    CHECK(rig.model->phi().max_abs_grad() == 0.0);
    CHECK(rig.model->theta().max_abs_grad() == 0.0);
    CHECK(rig.agent->store().max_abs_grad() > 0.0);
    CHECK(testing::max_abs_diff(rig.agent->store().grad("zrnn.wx"), Tensor::matrix(14, 18)) > 0.0);
  }
}

TEST_CASE("attention-only agent trains the model end to end") {
  Rig rig = make_rig(AgentKind::attention_only);
  RandomStream rng(8, "sac");
  Tape tape;
  rig.model->phi().zero_grad();
  SacGraph g = rig.agent->build_losses(tape, windows(3), rng);
  backward(g.total);
  CHECK(rig.model->phi().max_abs_grad() > 0.0);
  CHECK(testing::max_abs_diff(rig.model->phi().grad("embed.l0.w"), Tensor::matrix(4, 6)) > 0.0);
}

TEST_CASE("model update gradients never reach the agent") {
  Rig rig = make_rig(AgentKind::proposed);
  rig.agent->store().zero_grad();
  RandomStream rng(9, "model");
  std::vector<Tensor> seqs;
  for (const Window& w : windows(2)) seqs.push_back(w.rows);
  Tape tape;
  Var loss = rig.model->model_loss(tape, seqs, rng, nullptr);
  backward(loss);
  CHECK(rig.model->phi().max_abs_grad() > 0.0);
  CHECK(rig.agent->store().max_abs_grad() == 0.0);
}

TEST_CASE("zero discount makes the critic target the reward") {
  Rig rig = make_rig(AgentKind::proposed, 1, /*gamma=*/0.0);
  RandomStream rng(10, "sac");
  auto ws = windows(3);
  Tape tape;
  SacGraph g = rig.agent->build_losses(tape, ws, rng);
  for (std::size_t j = 0; j < kT; ++j)
    for (std::size_t i = 0; i < ws.size(); ++i) CHECK(g.q_target[j * ws.size() + i] == ws[i].rows(j, 1));
}

TEST_CASE("full soft update copies the value network") {
  Rig rig = make_rig(AgentKind::lstm, 1, 0.99, /*tau=*/1.0);
  RandomStream rng(11, "sac");
  rig.agent->update(windows(2), rng);
  for (const auto& [name, entry] : rig.agent->target()) CHECK(entry.value == rig.agent->store().value(name));
}

TEST_CASE("soft update is an exponential moving average") {
  Rig rig = make_rig(AgentKind::sac_raw);
  const Tensor before = rig.agent->target().value("v.l0.w");
  Tensor& v = rig.agent->store().value("v.l0.w");
  for (double& x : v.values()) x += 1.0;
  rig.agent->soft_update(0.25);
  const Tensor& after = rig.agent->target().value("v.l0.w");
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i] == Approx(0.75 * before[i] + 0.25 * v[i]).epsilon(1e-15));
}

TEST_CASE("twin minimum drives both value and actor targets") {
  Rig rig = make_rig(AgentKind::proposed);
  // Q1 = -5 and Q2 = +5 everywhere.
  for (const char* q : {"q1", "q2"}) {
    for (double& x : rig.agent->store().value(std::string(q) + ".l2.w").values()) x = 0.0;
  }
  rig.agent->store().value("q1.l2.b")[0] = -5.0;
  rig.agent->store().value("q2.l2.b")[0] = 5.0;
  RandomStream rng(12, "sac");
  Tape tape;
  SacGraph g = rig.agent->build_losses(tape, windows(2), rng);
  double mean_actor = 0.0;
  for (std::size_t r = 0; r < g.v_target.size(); ++r) {
    CHECK(g.q1_pi[r] < g.q2_pi[r]);
    CHECK(g.v_target[r] == Approx(-5.0 - 0.2 * g.log_pi[r]).epsilon(1e-14));
    mean_actor += 0.2 * g.log_pi[r] + 5.0;
  }
  mean_actor /= static_cast<double>(g.v_target.size());
  CHECK(g.actor_loss.value()[0] == Approx(mean_actor).epsilon(1e-12));
}

TEST_CASE("identical updates give identical parameters") {
  Rig a = make_rig(AgentKind::proposed, 4), b = make_rig(AgentKind::proposed, 4);
  RandomStream ra(13, "sac"), rb(13, "sac");
  for (int i = 0; i < 3; ++i) {
    a.agent->update(windows(2, i), ra);
    b.agent->update(windows(2, i), rb);
  }
  for (const auto& [name, entry] : a.agent->store()) CHECK(entry.value == b.agent->store().value(name));
}

TEST_CASE("updates reduce the critic loss on a fixed batch") {
  // With gamma = 0 the regression target does not move.
  Rig rig = make_rig(AgentKind::sac_raw, 1, /*gamma=*/0.0);
  auto ws = windows(4);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 800; ++i) {
    RandomStream rng(14, "sac");
    SacStats s = rig.agent->update(ws, rng);
    if (i == 0) first = s.critic_loss;
    last = s.critic_loss;
  }
  CHECK(last < 0.5 * first);
}
