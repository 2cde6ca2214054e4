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

#include "blockseq/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "blockseq/errors.hpp"

namespace blockseq {

Preset parse_preset(const std::string& s) {
  if (s == "paper") return Preset::paper;
  if (s == "desk") return Preset::desk;
  throw ConfigError("unknown preset '" + s + "' (expected paper or desk)");
}

std::string to_string(Preset p) { return p == Preset::paper ? "paper" : "desk"; }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  // from_chars for double is missing in older libstdc++.
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <class Member>
Field size_field(Member m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) {
            m(c) = static_cast<std::size_t>(to_u64(k, v));
          },
          [m](const TrainConfig& c) { return fmt(static_cast<std::uint64_t>(m(c))); }};
}

template <class Member>
Field real_field(Member m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { m(c) = to_double(k, v); },
          [m](const TrainConfig& c) { return fmt(m(c)); }};
}

template <class Member>
Field bool_field(Member m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { m(c) = to_bool(k, v); },
          [m](const TrainConfig& c) { return fmt(m(c)); }};
}

#define BS_SIZE(path) size_field([](auto& c) -> auto& { return c.path; })
#define BS_REAL(path) real_field([](auto& c) -> auto& { return c.path; })
#define BS_BOOL(path) bool_field([](auto& c) -> auto& { return c.path; })

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["preset"] = {[](TrainConfig& c, const std::string&, const std::string& v) { c.preset = parse_preset(v); },
                   [](const TrainConfig& c) { return to_string(c.preset); }};
    f["env.kind"] = {[](TrainConfig& c, const std::string&, const std::string& v) { c.env.kind = parse_env_kind(v); },
                     [](const TrainConfig& c) { return to_string(c.env.kind); }};
    f["env.max_steps"] = BS_SIZE(env.max_steps);
    f["env.c_thres"] = BS_REAL(env.c_thres);
    f["env.sigma_error"] = BS_REAL(env.sigma_error_sq);
    f["env.transition_var"] = BS_REAL(env.transition_var);
    f["env.action_bound"] = BS_REAL(env.action_bound);
    f["env.p_miss"] = BS_REAL(env.p_miss);
    f["env.R"] = BS_REAL(env.R);
    f["env.forfeit"] = BS_BOOL(env.forfeit);
    f["env.reward1"] = BS_REAL(env.reward1);
    f["env.reward2"] = BS_REAL(env.reward2);
    f["env.reward3"] = BS_REAL(env.reward3);
    f["env.seed"] = {[](TrainConfig& c, const std::string& k, const std::string& v) {
                       if (v == "run") {
                         c.env_seed.reset();
                       } else {
                         c.env_seed = to_u64(k, v);
                       }
                     },
                     [](const TrainConfig& c) { return c.env_seed ? fmt(*c.env_seed) : std::string("run"); }};

    f["model.L"] = BS_SIZE(model.L);
    f["model.k"] = BS_SIZE(model.k);
    f["model.K_sp"] = BS_SIZE(model.K_sp);
    f["model.d"] = BS_SIZE(model.d);
    f["model.latent"] = BS_SIZE(model.latent);
    f["model.heads"] = BS_SIZE(model.heads);
    f["model.head_dim"] = BS_SIZE(model.head_dim);
    f["model.depth"] = BS_SIZE(model.depth);
    f["model.latent_prior"] = {
        [](TrainConfig& c, const std::string&, const std::string& v) { c.model.latent_prior = parse_latent_prior(v); },
        [](const TrainConfig& c) { return to_string(c.model.latent_prior); }};
    f["model.compression"] = {[](TrainConfig& c, const std::string&, const std::string& v) {
                                c.model.compression = nn::parse_compression(v);
                              },
                              [](const TrainConfig& c) { return nn::to_string(c.model.compression); }};
    f["model.embed_hidden"] = BS_SIZE(model.embed_hidden);
    f["model.rnn_hidden"] = BS_SIZE(model.rnn_hidden);
    f["model.head_hidden"] = BS_SIZE(model.head_hidden);
    f["model.joint_hidden"] = BS_SIZE(model.joint_hidden);
    f["model.fnn_hidden"] = BS_SIZE(model.fnn_hidden);
    f["model.ffn_hidden"] = BS_SIZE(model.ffn_hidden);
    f["model.dropout"] = BS_REAL(model.dropout);
    f["model.lr"] = BS_REAL(model.lr);

    f["agent.kind"] = {
        [](TrainConfig& c, const std::string&, const std::string& v) { c.agent.kind = parse_agent_kind(v); },
        [](const TrainConfig& c) { return to_string(c.agent.kind); }};
    f["agent.z_hidden"] = BS_SIZE(agent.z_hidden);
    f["agent.hidden"] = BS_SIZE(agent.hidden);
    f["agent.lstm_embed"] = BS_SIZE(agent.lstm_embed);
    f["agent.gamma"] = BS_REAL(agent.gamma);
    f["agent.tau"] = BS_REAL(agent.tau);
    f["agent.alpha"] = BS_REAL(agent.alpha);
    f["agent.lr"] = BS_REAL(agent.lr);
    f["agent.log_std_min"] = BS_REAL(agent.log_std_min);
    f["agent.log_std_max"] = BS_REAL(agent.log_std_max);

    f["schedule.I_pre"] = BS_SIZE(schedule.I_pre);
    f["schedule.S_pre"] = BS_SIZE(schedule.S_pre);
    f["schedule.I_RL"] = BS_SIZE(schedule.I_RL);
    f["schedule.I_model"] = BS_SIZE(schedule.I_model);
    f["schedule.max_steps"] = BS_SIZE(schedule.max_steps);
    f["schedule.T"] = BS_SIZE(schedule.T);
    f["schedule.N_mini"] = BS_SIZE(schedule.N_mini);
    f["schedule.replay_episodes"] = BS_SIZE(schedule.replay_episodes);

    f["run.seed"] = {[](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
                     [](const TrainConfig& c) { return fmt(c.seed); }};
    f["run.out"] = {[](TrainConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
                    [](const TrainConfig& c) { return c.out_dir; }};
    f["run.wall_time"] = BS_BOOL(wall_time);
    f["run.eval_episodes"] = BS_SIZE(eval_episodes);
    f["run.checkpoint_every"] = BS_SIZE(checkpoint_every);
    return f;
  }();
  return table;
}

#undef BS_SIZE
#undef BS_REAL
#undef BS_BOOL

}  // namespace

TrainConfig preset_config(Preset preset, EnvKind env) {
  TrainConfig c;
  c.preset = preset;
  c.env.kind = env;
  switch (env) {
    case EnvKind::mountain_hike:
      c.model.L = 16;
      c.model.k = 2;
      break;
    case EnvKind::pendulum_missing:
      c.model.L = 32;
      c.model.k = 2;
      break;
    case EnvKind::sequential_target:
      c.model.L = 32;
      c.model.k = 3;
      break;
  }
  if (preset == Preset::paper) {
    c.model.d = 256;
    c.model.heads = 4;
    c.model.head_dim = 64;
    c.model.latent = 64;
    c.model.K_sp = 50;
    c.schedule.max_steps = env == EnvKind::mountain_hike ? 50000 : 200000;
    return c;
  }
  // Small networks for CPU-scale runs; not the published sizes.
  c.model.d = 64;
  c.model.heads = 4;
  c.model.head_dim = 16;
  c.model.latent = 16;
  c.model.K_sp = 20;
  c.model.embed_hidden = 64;
  c.model.rnn_hidden = 64;
  c.model.head_hidden = 64;
  c.model.joint_hidden = 64;
  c.model.fnn_hidden = 64;
  c.model.ffn_hidden = 128;
  c.agent.hidden = 64;
  c.agent.z_hidden = 64;
  c.agent.lstm_embed = 64;
  c.schedule.max_steps = 30000;
  return c;
}

void TrainConfig::resolve_dims() {
  auto env_instance = make_env(env, 0);
  model.obs_dim = agent.obs_dim = env_instance->obs_dim();
  model.act_dim = agent.act_dim = env_instance->act_dim();
  agent.action_bound = env_instance->action_bound();
  model.mode = model_mode_for(agent.kind);
}

void TrainConfig::validate() const {
  env.validate();
  if (uses_block_model(agent.kind)) model.validate();
  agent.validate();
  const Schedule& s = schedule;
  if (s.T == 0 || s.N_mini == 0) throw ConfigError("schedule.T and schedule.N_mini must be positive");
  if (s.I_RL == 0 || s.I_model == 0) throw ConfigError("update intervals must be positive");
  if (s.T % model.L != 0) {
    throw ConfigError("schedule.T (" + std::to_string(s.T) + ") must be divisible by model.L (" +
                      std::to_string(model.L) + ")");
  }
  if (s.max_steps <= s.I_pre) throw ConfigError("schedule.max_steps must exceed schedule.I_pre");
  if (s.replay_episodes == 0) throw ConfigError("schedule.replay_episodes must be positive");
  if (eval_episodes == 0) throw ConfigError("run.eval_episodes must be positive");
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  for (const auto& [key, field] : fields()) out << key << " = " << field.get(*this) << "\n";
  return out.str();
}

Overrides parse_overrides(const std::string& text) {
  Overrides out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

Overrides read_overrides_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_overrides(buf.str());
}

TrainConfig build_config(const Overrides& overrides) {
  const auto& table = fields();
  Preset preset = Preset::desk;
  EnvKind env = EnvKind::pendulum_missing;
  for (const auto& [key, value] : overrides) {
    if (!table.count(key)) throw ConfigError("unknown config key '" + key + "'");
    if (key == "preset") preset = parse_preset(value);
    if (key == "env.kind") env = parse_env_kind(value);
  }
  TrainConfig c = preset_config(preset, env);
  for (const auto& [key, value] : overrides) table.at(key).set(c, key, value);
  c.resolve_dims();
  c.validate();
  return c;
}

TrainConfig parse_config(const std::string& text) { return build_config(parse_overrides(text)); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, field] : fields()) keys.push_back(key);
  return keys;
}

}  // namespace blockseq
