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

// Off-policy training loop: act, store, block summaries, then pretraining,
// RL updates and block model updates on a global step schedule.

#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "blockseq/agent.hpp"
#include "blockseq/block_model.hpp"
#include "blockseq/checkpoint.hpp"
#include "blockseq/config.hpp"
#include "blockseq/envs.hpp"
#include "blockseq/random.hpp"
#include "blockseq/replay.hpp"

namespace blockseq {

struct ScheduleCounts {
  std::uint64_t global_step = 0;
  std::uint64_t episodes = 0;  ///< completed
  std::uint64_t pretrain_updates = 0;
  std::uint64_t model_updates = 0;  ///< excludes pretraining
  std::uint64_t rl_updates = 0;
  std::uint64_t skipped_updates = 0;  ///< scheduled but replay had no full window
};

/// Closed-form update counts after `final_step` env steps.
ScheduleCounts expected_counts(const TrainConfig& cfg, std::uint64_t final_step);

struct EvalResult {
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  std::vector<double> returns;
};

using PolicyFn = std::function<std::vector<double>(const std::vector<double>& obs)>;

/// Rolls out `episodes` episodes of a memoryless policy.
EvalResult evaluate_policy(Env& env, std::size_t episodes, const PolicyFn& policy);

/// Uniform actions in [-bound, bound].
EvalResult evaluate_random(const TrainConfig& cfg, std::size_t episodes, std::uint64_t seed);

inline constexpr const char* kCsvHeader =
    "kind,global_step,episode,episode_return,avg_return_100,gen_loss,inf_loss,actor_loss,critic_loss,value_loss,"
    "wall_time_s";

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  /// Rebuilds the full training state; CompatibilityError if the tensors do not fit the config.
  explicit Trainer(const Checkpoint& ckpt);
  ~Trainer();

  const TrainConfig& config() const { return cfg_; }
  const ScheduleCounts& counts() const { return counts_; }
  const std::vector<double>& returns() const { return returns_; }
  const std::vector<double>& successes() const { return successes_; }
  bool finished() const { return !episode_active_ && counts_.global_step >= cfg_.schedule.max_steps; }

  /// One environment step plus any scheduled updates. Appends at most one CSV row.
  void step(std::ostream& csv);
  /// Steps until the loop ends or `limit` more env steps have run.
  void run(std::ostream& csv, std::optional<std::uint64_t> limit = std::nullopt);

  /// Frozen-parameter rollouts on a fresh environment; does not touch training state.
  EvalResult evaluate(std::size_t episodes, bool deterministic) const;

  Checkpoint capture() const;

  /// Where a diagnostic dump goes if a loss turns non-finite; empty disables it.
  void set_dump_path(std::string path) { dump_path_ = std::move(path); }

  Agent& agent() { return *agent_; }
  BlockModel* model() { return model_.get(); }
  ReplayMemory& replay() { return *replay_; }

 private:
  struct Row;

  void begin_episode();
  std::vector<Window> sample_windows();
  void rl_update(Row& row);
  void model_update(Row& row, std::size_t repeats);
  void write_row(std::ostream& csv, const Row& row) const;
  void dump_batch(const std::string& what, const std::vector<Window>& windows) const;
  double wall_seconds() const;

  TrainConfig cfg_;
  RandomStreams streams_;
  std::unique_ptr<BlockModel> model_;
  std::unique_ptr<Agent> agent_;
  std::unique_ptr<Env> env_;
  std::unique_ptr<ReplayMemory> replay_;

  ScheduleCounts counts_;
  bool episode_active_ = false;
  EpisodeState episode_;
  double episode_return_ = 0.0;
  std::vector<double> returns_;
  std::vector<double> successes_;

  double wall_offset_ = 0.0;
  double last_wall_ = 0.0;  ///< wall clock at the latest step; what checkpoints store
  std::chrono::steady_clock::time_point wall_start_;
  std::string dump_path_;
};

struct RunPaths {
  std::string dir;
  std::string config;      ///< config.txt
  std::string log;         ///< log.csv
  std::string checkpoint;  ///< checkpoint.bsml
  std::string dump;        ///< nan_dump.txt
  std::string eval;        ///< eval.csv
};

RunPaths run_paths(const std::string& dir);

/// Trains into cfg.out_dir, writing config.txt, log.csv and checkpoint.bsml.
/// `stop_after` ends the call early after that many env steps, leaving a
/// checkpoint to resume from.
ScheduleCounts train_to_dir(const TrainConfig& cfg, std::optional<std::uint64_t> stop_after = std::nullopt);

/// Continues a run from its checkpoint; the log is cut back to the
/// checkpoint's step first so the continuation matches an uninterrupted run.
ScheduleCounts resume_in_dir(const std::string& checkpoint_path, const std::string& dir,
                             std::optional<std::uint64_t> stop_after = std::nullopt);

/// Writes eval.csv with columns episodes,deterministic,mean_return,success_rate.
void write_eval_csv(const std::string& path, const EvalResult& r, bool deterministic);

/// Reads log.csv style text and returns its rows, header included, whose
/// global_step is at most `step`.
std::string truncate_log(const std::string& csv, std::uint64_t step);

}  // namespace blockseq
