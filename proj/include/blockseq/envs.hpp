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

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "blockseq/random.hpp"

namespace blockseq {

enum class EnvKind { mountain_hike, pendulum_missing, sequential_target };

EnvKind parse_env_kind(const std::string& s);
std::string to_string(EnvKind k);

struct EnvParams {
  EnvKind kind = EnvKind::pendulum_missing;
  std::size_t max_steps = 0;  ///< 0 picks the environment default
  // Mountain Hike
  double c_thres = 0.1;
  double sigma_error_sq = 3.0;
  double transition_var = 0.25;
  double action_bound = 1.0;
  // Pendulum
  double p_miss = 0.1;
  // Sequential target
  double R = 10.0;
  bool forfeit = true;
  double reward1 = 10.0;
  double reward2 = 30.0;
  double reward3 = 60.0;

  void validate() const;
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  /// True only when the episode ended for a reason other than the step limit.
  bool terminal = false;
  std::map<std::string, double> info;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual std::vector<double> reset() = 0;
  virtual StepResult step(const std::vector<double>& action) = 0;

  virtual std::size_t obs_dim() const = 0;
  virtual std::size_t act_dim() const = 0;
  /// Actions are expected in [-bound, bound] per dimension.
  virtual double action_bound() const = 0;
  virtual std::size_t max_steps() const = 0;
  virtual EnvKind kind() const = 0;

  std::size_t steps() const { return steps_; }
  bool done() const { return done_; }

  /// Opaque state blob used by checkpoints.
  virtual std::string serialize() const = 0;
  virtual void deserialize(const std::string& blob) = 0;

 protected:
  void begin_step();
  void finish_step(StepResult& r);

  std::size_t steps_ = 0;
  bool done_ = true;
  bool started_ = false;
};

std::unique_ptr<Env> make_env(const EnvParams& params, std::uint64_t seed);

class MountainHike : public Env {
 public:
  MountainHike(const EnvParams& params, std::uint64_t seed);

  std::vector<double> reset() override;
  StepResult step(const std::vector<double>& action) override;
  std::size_t obs_dim() const override { return 2; }
  std::size_t act_dim() const override { return 2; }
  double action_bound() const override { return params_.action_bound; }
  std::size_t max_steps() const override { return params_.max_steps; }
  EnvKind kind() const override { return EnvKind::mountain_hike; }
  std::string serialize() const override;
  void deserialize(const std::string& blob) override;

  /// Ridge-distance reward map in [-3, 0].
  static double reward_map(double x, double y);
  /// Action rescaled so its norm is min(c_thres, |a|).
  std::array<double, 2> clip_action(const std::vector<double>& action) const;
  const std::array<double, 2>& position() const { return pos_; }
  void set_position(std::array<double, 2> p) { pos_ = p; }
  /// Test hook: zero both noise sources.
  void disable_noise() { noiseless_ = true; }

 private:
  EnvParams params_;
  RandomStream rng_;
  std::array<double, 2> pos_{};
  bool noiseless_ = false;
};

class PendulumMissing : public Env {
 public:
  PendulumMissing(const EnvParams& params, std::uint64_t seed);

  std::vector<double> reset() override;
  StepResult step(const std::vector<double>& action) override;
  std::size_t obs_dim() const override { return 3; }
  std::size_t act_dim() const override { return 1; }
  double action_bound() const override { return 2.0; }
  std::size_t max_steps() const override { return params_.max_steps; }
  EnvKind kind() const override { return EnvKind::pendulum_missing; }
  std::string serialize() const override;
  void deserialize(const std::string& blob) override;

  /// Test hook: the next reset starts from this state instead of a random one.
  void set_initial_state(double theta, double theta_dot) { initial_ = std::array<double, 2>{theta, theta_dot}; }
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }

  static double wrap_angle(double a);

 private:
  std::vector<double> observe();

  EnvParams params_;
  RandomStream rng_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  std::optional<std::array<double, 2>> initial_;
};

class SequentialTarget : public Env {
 public:
  SequentialTarget(const EnvParams& params, std::uint64_t seed);

  std::vector<double> reset() override;
  StepResult step(const std::vector<double>& action) override;
  std::size_t obs_dim() const override { return 9; }
  std::size_t act_dim() const override { return 2; }
  double action_bound() const override { return 1.0; }
  std::size_t max_steps() const override { return params_.max_steps; }
  EnvKind kind() const override { return EnvKind::sequential_target; }
  std::string serialize() const override;
  void deserialize(const std::string& blob) override;

  static constexpr double kArena = 20.0;
  static constexpr double kContactRadius = 1.0;
  static constexpr double kSpeedCap = 0.5;

  const std::array<std::array<double, 2>, 3>& targets() const { return targets_; }
  std::array<double, 2> position() const { return {x_, y_}; }
  double heading() const { return heading_; }
  std::size_t progress() const { return progress_; }
  bool forfeited() const { return forfeited_; }
  /// Test hook: place the agent directly.
  void set_pose(double x, double y, double heading) {
    x_ = x;
    y_ = y;
    heading_ = heading;
  }

 private:
  std::vector<double> observe() const;

  EnvParams params_;
  RandomStream rng_;
  std::array<std::array<double, 2>, 3> targets_{};
  double x_ = 0.0, y_ = 0.0, heading_ = 0.0;
  std::size_t progress_ = 0;
  bool forfeited_ = false;
};

}  // namespace blockseq
