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

#include "blockseq/diagnostics.hpp"

#include <algorithm>
#include <map>

#include "blockseq/agent.hpp"
#include "blockseq/block_model.hpp"

namespace blockseq {

namespace {

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
  c.depth = 2;
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

AgentConfig small_agent(AgentKind kind) {
  AgentConfig a;
  a.kind = kind;
  a.obs_dim = 3;
  a.act_dim = 1;
  a.action_bound = 2.0;
  a.z_hidden = 5;
  a.hidden = 6;
  a.lstm_embed = 5;
  return a;
}

std::vector<Window> random_windows(std::size_t count, std::size_t T, RandomStream& rng) {
  std::vector<Window> out;
  for (std::size_t i = 0; i < count; ++i) {
    Window w;
    w.episode = i;
    w.start = 3 * i;
    w.o0 = {rng.normal(), rng.normal(), rng.normal()};
    w.r_prev = rng.normal();
    w.rows = rng.normal_matrix(T, 5);
    for (std::size_t j = 0; j < T; ++j) w.rows(j, 0) = rng.uniform(-1.9, 1.9);
    w.terminal.assign(T, 0.0);
    out.push_back(std::move(w));
  }
  return out;
}

Var weighted_sum(Tape& tape, const std::vector<Var>& outs, std::uint64_t seed) {
  RandomStream rng(seed, "probe");
  Var total = tape.constant(Tensor::scalar(0.0));
  for (Var o : outs) {
    total = ops::add(total, ops::sum(ops::mul(o, tape.constant(rng.uniform_matrix(o.rows(), o.cols(), -1.0, 1.0)))));
  }
  return total;
}

// Groups per-parameter errors by name prefix (text before the first dot).
void collect(std::vector<GradcheckEntry>& out, const FiniteDifferenceReport& rep,
             const std::map<std::string, std::string>& labels, const ParameterStore& store, double tolerance) {
  std::map<std::string, GradcheckEntry> groups;
  for (const auto& [name, err] : rep.max_relative_error) {
    std::string prefix = name.substr(0, name.find('.'));
    if (prefix.rfind("att", 0) == 0) prefix = "att";
    auto it = labels.find(prefix);
    const std::string label = it != labels.end() ? it->second : prefix;
    GradcheckEntry& g = groups[label];
    g.network = label;
    g.worst = std::max(g.worst, err);
    g.entries += store.value(name).size();
  }
  for (auto& [label, g] : groups) {
    g.passed = g.worst < tolerance;
    out.push_back(g);
  }
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck(std::uint64_t seed, double step, double tolerance) {
  std::vector<GradcheckEntry> out;
  RandomStream data(seed, "gradcheck");

  {
    RandomStream init(seed, "init");
    BlockModel model(small_model(ModelMode::full), init);
    const Tensor rows = data.normal_matrix(8, model.config().x_dim());
    const Tensor samples = data.normal_matrix(model.config().K_sp, model.config().latent);
    auto phi_loss = [&](Tape& tape) {
      Params phi(tape, model.phi());
      Var emb = model.embed(phi, tape.constant(rows));
      BlockStep s = model.initial_step(phi);
      std::vector<Var> outs{s.mu, s.sigma};
      for (std::size_t n = 0; n < 2; ++n) {
        s = model.infer_block(phi, ops::slice_rows(emb, 4 * n, 4), s.h, false, nullptr);
        outs.insert(outs.end(), {s.yk, s.mu, s.sigma});
      }
      return weighted_sum(tape, outs, seed);
    };
    collect(out, finite_difference_check(phi_loss, model.phi(), step),
            {{"embed", "embedding"}, {"att", "attention stack"}, {"brnn", "blockwise GRU"}, {"mu", "mu head"},
             {"sigma", "sigma head"}},
            model.phi(), tolerance);

    const Tensor yk = data.normal_matrix(1, model.config().y_dim());
    auto theta_loss = [&](Tape& tape) {
      Params theta(tape, model.theta());
      return weighted_sum(tape, {model.log_joint(theta, tape.constant(yk), samples)}, seed);
    };
    collect(out, finite_difference_check(theta_loss, model.theta(), step), {{"joint", "log-joint net"}},
            model.theta(), tolerance);

    const std::vector<Window> windows = random_windows(2, 8, data);
    Agent agent(small_agent(AgentKind::proposed), &model, init);
    auto agent_loss = [&](Tape& tape) { return agent.probe_loss(tape, windows, seed); };
    collect(out, finite_difference_check(agent_loss, agent.store(), step),
            {{"zrnn", "z-RNN (GRU)"}, {"pi", "SAC policy"}, {"q1", "SAC Q1"}, {"q2", "SAC Q2"}, {"v", "SAC value"}},
            agent.store(), tolerance);
  }
  {
    RandomStream init(seed, "init");
    BlockModel model(small_model(ModelMode::blockwise_rnn_only), init);
    const Tensor rows = data.normal_matrix(4, model.config().x_dim());
    auto loss = [&](Tape& tape) {
      Params phi(tape, model.phi());
      Var emb = model.embed(phi, tape.constant(rows));
      BlockStep s = model.infer_block(phi, emb, model.initial_step(phi).h, false, nullptr);
      return weighted_sum(tape, {s.yk, s.mu}, seed);
    };
    FiniteDifferenceReport rep = finite_difference_check(loss, model.phi(), step);
    FiniteDifferenceReport fnn_only;
    for (const auto& [name, err] : rep.max_relative_error) {
      if (name.rfind("fnn.", 0) == 0) fnn_only.max_relative_error[name] = err;
    }
    collect(out, fnn_only, {{"fnn", "FNN block encoder"}}, model.phi(), tolerance);
  }
  {
    RandomStream init(seed, "init");
    Agent agent(small_agent(AgentKind::lstm), nullptr, init);
    const std::vector<Window> windows = random_windows(2, 6, data);
    auto loss = [&](Tape& tape) { return agent.probe_loss(tape, windows, seed); };
    FiniteDifferenceReport rep = finite_difference_check(loss, agent.store(), step);
    FiniteDifferenceReport recurrent;
    for (const auto& [name, err] : rep.max_relative_error) {
      if (name.rfind("zrnn.", 0) == 0 || name.rfind("lstm.", 0) == 0) recurrent.max_relative_error[name] = err;
    }
    collect(out, recurrent, {{"zrnn", "z-RNN (LSTM)"}, {"lstm", "LSTM agent embedding"}}, agent.store(), tolerance);
  }
  return out;
}

}  // namespace blockseq
