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

#include "blockseq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "blockseq/errors.hpp"
#include "blockseq/serial.hpp"

namespace blockseq {

namespace {

bool has_latent_model(const TrainConfig& cfg) {
  return uses_block_model(cfg.agent.kind) && cfg.agent.kind != AgentKind::attention_only;
}

// Evaluation env seeds are kept away from the training env seed.
constexpr std::uint64_t kEvalSeedSalt = 0x9e3779b97f4a7c15ULL;

void put_state_tensor(ByteWriter& w, const Tensor& t) {
  w.boolean(!t.values().empty());
  if (!t.values().empty()) w.tensor(t);
}

Tensor get_state_tensor(ByteReader& r) { return r.boolean() ? r.tensor() : Tensor(); }

void export_store(Checkpoint& ckpt, const std::string& prefix, const ParameterStore& store) {
  for (const auto& [name, entry] : store) ckpt.tensors.emplace(prefix + name, entry.value);
}

void import_store(const Checkpoint& ckpt, const std::string& prefix, ParameterStore& store) {
  std::size_t seen = 0;
  for (auto it = ckpt.tensors.lower_bound(prefix); it != ckpt.tensors.end() && it->first.rfind(prefix, 0) == 0; ++it) {
    const std::string name = it->first.substr(prefix.size());
    if (!store.contains(name)) throw CompatibilityError("checkpoint tensor " + it->first + " has no matching parameter");
    Tensor& dst = store.value(name);
    if (!dst.same_shape(it->second)) throw CompatibilityError("checkpoint tensor " + it->first + " has the wrong shape");
    dst = it->second;
    ++seen;
  }
  if (seen != store.size()) throw CompatibilityError("checkpoint lacks parameters under " + prefix);
}

void export_adam(Checkpoint& ckpt, const std::string& prefix, const Adam& adam) {
  for (auto& [key, t] : adam.export_state()) ckpt.tensors.emplace(prefix + key, t);
}

void import_adam(const Checkpoint& ckpt, const std::string& prefix, Adam& adam) {
  std::map<std::string, Tensor> state;
  for (auto it = ckpt.tensors.lower_bound(prefix); it != ckpt.tensors.end() && it->first.rfind(prefix, 0) == 0; ++it) {
    state.emplace(it->first.substr(prefix.size()), it->second);
  }
  adam.import_state(state);
}

const std::string& blob(const Checkpoint& ckpt, const std::string& name) {
  auto it = ckpt.blobs.find(name);
  if (it == ckpt.blobs.end()) throw IntegrityError("checkpoint lacks blob " + name);
  return it->second;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

ScheduleCounts expected_counts(const TrainConfig& cfg, std::uint64_t final_step) {
  const Schedule& s = cfg.schedule;
  ScheduleCounts c;
  c.global_step = final_step;
  if (final_step <= s.I_pre) return c;
  c.rl_updates = final_step / s.I_RL - s.I_pre / s.I_RL;
  if (has_latent_model(cfg)) {
    c.pretrain_updates = s.S_pre;
    c.model_updates = final_step / s.I_model - s.I_pre / s.I_model;
  }
  return c;
}

EvalResult evaluate_policy(Env& env, std::size_t episodes, const PolicyFn& policy) {
  EvalResult out;
  std::size_t wins = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<double> obs = env.reset();
    double ret = 0.0;
    bool success = false;
    while (!env.done()) {
      StepResult r = env.step(policy(obs));
      ret += r.reward;
      obs = std::move(r.observation);
      auto it = r.info.find("success");
      if (it != r.info.end() && it->second > 0.0) success = true;
    }
    out.returns.push_back(ret);
    if (success) ++wins;
  }
  out.episodes = episodes;
  if (episodes > 0) {
    out.mean_return = std::accumulate(out.returns.begin(), out.returns.end(), 0.0) / static_cast<double>(episodes);
    out.success_rate = static_cast<double>(wins) / static_cast<double>(episodes);
  }
  return out;
}

EvalResult evaluate_random(const TrainConfig& cfg, std::size_t episodes, std::uint64_t seed) {
  auto env = make_env(cfg.env, seed);
  RandomStream rng(seed, "random-policy");
  const double bound = env->action_bound();
  const std::size_t A = env->act_dim();
  return evaluate_policy(*env, episodes, [&](const std::vector<double>&) {
    std::vector<double> a(A);
    for (double& x : a) x = rng.uniform(-bound, bound);
    return a;
  });
}

struct Trainer::Row {
  std::vector<std::string> kinds;
  bool episode_end = false;
  double episode_return = 0.0;
  double avg_return_100 = 0.0;
  std::optional<double> gen_loss, inf_loss, actor_loss, critic_loss, value_loss;
};

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)), streams_(cfg_.seed) {
  cfg_.resolve_dims();
  cfg_.validate();
  RandomStream& init = streams_["init"];
  if (uses_block_model(cfg_.agent.kind)) model_ = std::make_unique<BlockModel>(cfg_.model, init);
  agent_ = std::make_unique<Agent>(cfg_.agent, model_.get(), init);
  env_ = make_env(cfg_.env, cfg_.effective_env_seed());
  replay_ = std::make_unique<ReplayMemory>(env_->obs_dim(), env_->act_dim(), cfg_.schedule.T, cfg_.schedule.replay_episodes);
  // Touch every stream so checkpoints always carry the same set.
  for (const char* name : {"explore", "policy", "replay", "model", "rl"}) streams_[name];
  wall_start_ = std::chrono::steady_clock::now();
}

Trainer::Trainer(const Checkpoint& ckpt) : Trainer(parse_config(ckpt.config)) {
  if (model_) {
    import_store(ckpt, "phi/", model_->phi());
    import_store(ckpt, "theta/", model_->theta());
    import_adam(ckpt, "adam.model/", model_->optimizer());
  }
  import_store(ckpt, "agent/", agent_->store());
  import_store(ckpt, "target/", agent_->target());
  import_adam(ckpt, "adam.agent/", agent_->optimizer());

  for (const auto& [name, state] : ckpt.blobs) {
    if (name.rfind("rng/", 0) == 0) streams_[name.substr(4)].deserialize(state);
  }
  env_->deserialize(blob(ckpt, "env"));
  replay_->deserialize(blob(ckpt, "replay"));

  ByteReader r(blob(ckpt, "trainer"));
  counts_.global_step = r.u64();
  counts_.episodes = r.u64();
  counts_.pretrain_updates = r.u64();
  counts_.model_updates = r.u64();
  counts_.rl_updates = r.u64();
  counts_.skipped_updates = r.u64();
  returns_ = r.doubles();
  successes_ = r.doubles();
  wall_offset_ = last_wall_ = r.f64();
  episode_active_ = r.boolean();
  episode_return_ = r.f64();
  episode_.z = get_state_tensor(r);
  episode_.c = get_state_tensor(r);
  episode_.h = get_state_tensor(r);
  episode_.cond = get_state_tensor(r);
  episode_.block_rows = r.doubles();
  episode_.obs = r.doubles();
  episode_.r_prev = r.f64();
  episode_.t = r.u64();
  episode_.blocks = r.u64();
  if (!r.at_end()) throw IntegrityError("trainer state has trailing bytes");
}

Trainer::~Trainer() = default;

Checkpoint Trainer::capture() const {
  Checkpoint ckpt;
  ckpt.config = cfg_.to_text();
  if (model_) {
    export_store(ckpt, "phi/", model_->phi());
    export_store(ckpt, "theta/", model_->theta());
    export_adam(ckpt, "adam.model/", model_->optimizer());
  }
  export_store(ckpt, "agent/", agent_->store());
  export_store(ckpt, "target/", agent_->target());
  export_adam(ckpt, "adam.agent/", agent_->optimizer());
  for (const auto& [name, stream] : streams_.all()) ckpt.blobs.emplace("rng/" + name, stream.serialize());
  ckpt.blobs.emplace("env", env_->serialize());
  ckpt.blobs.emplace("replay", replay_->serialize());

  ByteWriter w;
  w.u64(counts_.global_step);
  w.u64(counts_.episodes);
  w.u64(counts_.pretrain_updates);
  w.u64(counts_.model_updates);
  w.u64(counts_.rl_updates);
  w.u64(counts_.skipped_updates);
  w.doubles(returns_);
  w.doubles(successes_);
  w.f64(last_wall_);
  w.boolean(episode_active_);
  w.f64(episode_return_);
  put_state_tensor(w, episode_.z);
  put_state_tensor(w, episode_.c);
  put_state_tensor(w, episode_.h);
  put_state_tensor(w, episode_.cond);
  w.doubles(episode_.block_rows);
  w.doubles(episode_.obs);
  w.f64(episode_.r_prev);
  w.u64(episode_.t);
  w.u64(episode_.blocks);
  ckpt.blobs.emplace("trainer", w.take());
  return ckpt;
}

double Trainer::wall_seconds() const {
  if (!cfg_.wall_time) return 0.0;
  return wall_offset_ + std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start_).count();
}

void Trainer::begin_episode() {
  std::vector<double> o0 = env_->reset();
  episode_ = agent_->begin_episode(o0);
  replay_->begin_episode(o0);
  episode_return_ = 0.0;
  episode_active_ = true;
}

std::vector<Window> Trainer::sample_windows() {
  if (replay_->eligible() == 0) return {};
  return replay_->sample(cfg_.schedule.N_mini, streams_["replay"]);
}

void Trainer::dump_batch(const std::string& what, const std::vector<Window>& windows) const {
  if (dump_path_.empty()) return;
  std::ofstream out(dump_path_);
  out << "error: " << what << "\n";
  out << "global_step: " << counts_.global_step << "\n";
  out << "episode: " << counts_.episodes + 1 << "\n";
  for (const Window& w : windows) {
    out << "window episode=" << w.episode << " start=" << w.start << " r_prev=" << w.r_prev << "\n";
    for (std::size_t i = 0; i < w.rows.rows(); ++i) {
      for (std::size_t j = 0; j < w.rows.cols(); ++j) out << (j ? "," : "") << w.rows(i, j);
      out << "\n";
    }
  }
}

void Trainer::rl_update(Row& row) {
  std::vector<Window> batch = sample_windows();
  if (batch.empty()) {
    ++counts_.skipped_updates;
    return;
  }
  try {
    SacStats s = agent_->update(batch, streams_["rl"]);
    row.actor_loss = s.actor_loss;
    row.critic_loss = s.critic_loss;
    row.value_loss = s.value_loss;
  } catch (const NumericalAbort& e) {
    dump_batch(e.what(), batch);
    throw;
  }
  ++counts_.rl_updates;
}

void Trainer::model_update(Row& row, std::size_t repeats) {
  double gen = 0.0, inf = 0.0;
  std::size_t done = 0;
  for (std::size_t i = 0; i < repeats; ++i) {
    std::vector<Window> batch = sample_windows();
    if (batch.empty()) {
      ++counts_.skipped_updates;
      continue;
    }
    std::vector<Tensor> sequences;
    sequences.reserve(batch.size());
    for (const Window& w : batch) sequences.push_back(w.rows);
    try {
      ModelUpdateReport rep = model_->model_update(sequences, streams_["model"]);
      gen += rep.gen_loss;
      inf += rep.inf_loss;
    } catch (const NumericalAbort& e) {
      dump_batch(e.what(), batch);
      throw;
    } catch (const DegenerateWeightsError& e) {
      dump_batch(e.what(), batch);
      throw NumericalAbort(std::string("block model update degenerated: ") + e.what());
    }
    ++done;
  }
  if (done > 0) {
    row.gen_loss = gen / static_cast<double>(done);
    row.inf_loss = inf / static_cast<double>(done);
  }
}

void Trainer::step(std::ostream& csv) {
  if (finished()) return;
  if (!episode_active_) begin_episode();
  const Schedule& s = cfg_.schedule;

  std::vector<double> action;
  if (counts_.global_step < s.I_pre) {
    // Uniform exploration while the replay fills.
    const double bound = env_->action_bound();
    action.resize(env_->act_dim());
    for (double& a : action) a = streams_["explore"].uniform(-bound, bound);
  } else {
    action = agent_->act(episode_, false, &streams_["policy"]).action;
  }
  StepResult r = env_->step(action);
  agent_->observe(episode_, action, r.reward, r.observation);
  replay_->append(action, r.reward, r.observation, r.done, r.terminal);
  episode_return_ += r.reward;
  const std::uint64_t g = ++counts_.global_step;

  Row row;
  const bool latent = has_latent_model(cfg_);
  if (latent && g == s.I_pre + 1) {
    row.kinds.push_back("pretrain");
    const std::uint64_t before = counts_.skipped_updates;
    model_update(row, s.S_pre);
    counts_.pretrain_updates += s.S_pre - (counts_.skipped_updates - before);
  }
  if (g > s.I_pre && g % s.I_model == 0 && latent) {
    Row model_row;
    const std::uint64_t before = counts_.skipped_updates;
    model_update(model_row, 1);
    if (counts_.skipped_updates == before) {
      ++counts_.model_updates;
      row.kinds.push_back("model");
      // Pretraining and a periodic update can share a step; the later one is logged.
      row.gen_loss = model_row.gen_loss;
      row.inf_loss = model_row.inf_loss;
    }
  }
  if (g > s.I_pre && g % s.I_RL == 0) {
    const std::uint64_t before = counts_.rl_updates;
    rl_update(row);
    if (counts_.rl_updates != before) row.kinds.push_back("rl");
  }
  if (r.done) {
    episode_active_ = false;
    ++counts_.episodes;
    returns_.push_back(episode_return_);
    auto it = r.info.find("success");
    successes_.push_back(it != r.info.end() && it->second > 0.0 ? 1.0 : 0.0);
    const std::size_t n = std::min<std::size_t>(returns_.size(), 100);
    row.kinds.push_back("episode");
    row.episode_end = true;
    row.episode_return = episode_return_;
    row.avg_return_100 = std::accumulate(returns_.end() - static_cast<std::ptrdiff_t>(n), returns_.end(), 0.0) /
                         static_cast<double>(n);
  }
  last_wall_ = wall_seconds();
  if (!row.kinds.empty()) write_row(csv, row);
}

void Trainer::write_row(std::ostream& csv, const Row& row) const {
  std::string kind;
  for (const auto& k : row.kinds) kind += (kind.empty() ? "" : "+") + k;
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  const std::uint64_t episode = row.episode_end ? counts_.episodes : counts_.episodes + 1;
  csv << kind << ',' << counts_.global_step << ',' << episode << ',';
  if (row.episode_end) {
    csv << fmt(row.episode_return) << ',' << fmt(row.avg_return_100);
  } else {
    csv << ',';
  }
  csv << ',' << opt(row.gen_loss) << ',' << opt(row.inf_loss) << ',' << opt(row.actor_loss) << ','
      << opt(row.critic_loss) << ',' << opt(row.value_loss) << ',' << fmt(last_wall_) << '\n';
}

void Trainer::run(std::ostream& csv, std::optional<std::uint64_t> limit) {
  const std::uint64_t stop = limit ? counts_.global_step + *limit : UINT64_MAX;
  while (!finished() && counts_.global_step < stop) step(csv);
}

EvalResult Trainer::evaluate(std::size_t episodes, bool deterministic) const {
  auto env = make_env(cfg_.env, cfg_.effective_env_seed() ^ kEvalSeedSalt);
  RandomStream rng(cfg_.seed, "eval");
  EvalResult out;
  std::size_t wins = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    EpisodeState state = agent_->begin_episode(env->reset());
    double ret = 0.0;
    bool success = false;
    while (!env->done()) {
      ActionSample a = agent_->act(state, deterministic, &rng);
      StepResult r = env->step(a.action);
      agent_->observe(state, a.action, r.reward, r.observation);
      ret += r.reward;
      auto it = r.info.find("success");
      if (it != r.info.end() && it->second > 0.0) success = true;
    }
    out.returns.push_back(ret);
    if (success) ++wins;
  }
  out.episodes = episodes;
  if (episodes > 0) {
    out.mean_return = std::accumulate(out.returns.begin(), out.returns.end(), 0.0) / static_cast<double>(episodes);
    out.success_rate = static_cast<double>(wins) / static_cast<double>(episodes);
  }
  return out;
}

RunPaths run_paths(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  return {dir, (d / "config.txt").string(), (d / "log.csv").string(), (d / "checkpoint.bsml").string(),
          (d / "nan_dump.txt").string(), (d / "eval.csv").string()};
}

namespace {

ScheduleCounts drive(Trainer& trainer, const RunPaths& paths, std::ofstream& log, std::optional<std::uint64_t> stop_after) {
  trainer.set_dump_path(paths.dump);
  const std::uint64_t every = trainer.config().checkpoint_every;
  const std::uint64_t stop = stop_after ? trainer.counts().global_step + *stop_after : UINT64_MAX;
  while (!trainer.finished() && trainer.counts().global_step < stop) {
    trainer.step(log);
    if (every > 0 && trainer.counts().global_step % every == 0) {
      log.flush();
      save_checkpoint(paths.checkpoint, trainer.capture());
    }
  }
  log.flush();
  save_checkpoint(paths.checkpoint, trainer.capture());
  return trainer.counts();
}

}  // namespace

ScheduleCounts train_to_dir(const TrainConfig& cfg, std::optional<std::uint64_t> stop_after) {
  const RunPaths paths = run_paths(cfg.out_dir);
  std::filesystem::create_directories(paths.dir);
  Trainer trainer(cfg);
  {
    std::ofstream out(paths.config);
    out << trainer.config().to_text();
  }
  std::ofstream log(paths.log, std::ios::trunc);
  if (!log) throw Error("cannot write " + paths.log);
  log << kCsvHeader << '\n';
  return drive(trainer, paths, log, stop_after);
}

ScheduleCounts resume_in_dir(const std::string& checkpoint_path, const std::string& dir,
                             std::optional<std::uint64_t> stop_after) {
  const RunPaths paths = run_paths(dir);
  Trainer trainer(load_checkpoint(checkpoint_path));
  std::string previous;
  {
    std::ifstream in(paths.log);
    if (in) {
      std::ostringstream buf;
      buf << in.rdbuf();
      previous = buf.str();
    }
  }
  std::filesystem::create_directories(paths.dir);
  std::ofstream log(paths.log, std::ios::trunc);
  if (!log) throw Error("cannot write " + paths.log);
  if (previous.empty()) {
    log << kCsvHeader << '\n';
  } else {
    log << truncate_log(previous, trainer.counts().global_step);
  }
  return drive(trainer, paths, log, stop_after);
}

void write_eval_csv(const std::string& path, const EvalResult& r, bool deterministic) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "episodes,deterministic,mean_return,success_rate\n";
  out << r.episodes << ',' << (deterministic ? 1 : 0) << ',' << fmt(r.mean_return) << ',' << fmt(r.success_rate) << '\n';
}

std::string truncate_log(const std::string& csv, std::uint64_t step) {
  std::istringstream in(csv);
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      out += line + "\n";
      header = false;
      continue;
    }
    const auto a = line.find(',');
    if (a == std::string::npos) break;
    const auto b = line.find(',', a + 1);
    const std::uint64_t g = std::stoull(line.substr(a + 1, b - a - 1));
    if (g > step) break;
    out += line + "\n";
  }
  return out;
}

}  // namespace blockseq
