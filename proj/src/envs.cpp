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

#include "blockseq/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "blockseq/errors.hpp"
#include "blockseq/serial.hpp"

namespace blockseq {

namespace {

constexpr double kPi = std::numbers::pi;

void check_action(const std::vector<double>& action, std::size_t dim) {
  if (action.size() != dim) {
    throw ShapeError("action has " + std::to_string(action.size()) + " entries, expected " + std::to_string(dim));
  }
  for (double a : action)
    if (!std::isfinite(a)) throw NumericalAbort("non-finite action passed to the environment");
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  double t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy);
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

void write_base(ByteWriter& w, std::size_t steps, bool done, bool started) {
  w.u64(steps);
  w.boolean(done);
  w.boolean(started);
}

}  // namespace

EnvKind parse_env_kind(const std::string& s) {
  if (s == "mountain-hike" || s == "mountain_hike") return EnvKind::mountain_hike;
  if (s == "pendulum-missing" || s == "pendulum_missing" || s == "pendulum") return EnvKind::pendulum_missing;
  if (s == "sequential-target" || s == "sequential_target") return EnvKind::sequential_target;
  throw ConfigError("unknown environment: " + s);
}

std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::mountain_hike: return "mountain-hike";
    case EnvKind::pendulum_missing: return "pendulum-missing";
    case EnvKind::sequential_target: return "sequential-target";
  }
  return "?";
}

void EnvParams::validate() const {
  if (!(c_thres > 0.0)) throw ConfigError("env.c_thres must be positive");
  if (sigma_error_sq < 0.0 || transition_var < 0.0) throw ConfigError("noise variances must be nonnegative");
  if (!(action_bound > 0.0)) throw ConfigError("action bound must be positive");
  if (p_miss < 0.0 || p_miss > 1.0) throw ConfigError("env.p_miss must lie in [0, 1]");
  if (!(R > 0.0) || R > 15.0) throw ConfigError("env.R must lie in (0, 15]");
}

void Env::begin_step() {
  if (!started_) throw ProtocolError("step called before reset");
  if (done_) throw ProtocolError("step called after the episode ended; call reset first");
}

void Env::finish_step(StepResult& r) {
  ++steps_;
  if (steps_ >= max_steps()) r.done = true;
  done_ = r.done;
}

std::unique_ptr<Env> make_env(const EnvParams& params, std::uint64_t seed) {
  params.validate();
  switch (params.kind) {
    case EnvKind::mountain_hike: return std::make_unique<MountainHike>(params, seed);
    case EnvKind::pendulum_missing: return std::make_unique<PendulumMissing>(params, seed);
    case EnvKind::sequential_target: return std::make_unique<SequentialTarget>(params, seed);
  }
  throw ConfigError("unhandled environment kind");
}

// ---------------------------------------------------------------- Mountain Hike

MountainHike::MountainHike(const EnvParams& params, std::uint64_t seed) : params_(params), rng_(seed, "env") {
  params_.validate();
  if (params_.max_steps == 0) params_.max_steps = 200;
}

double MountainHike::reward_map(double x, double y) {
  const double d = std::min(segment_distance(x, y, -8.5, -8.5, 8.5, -8.5), segment_distance(x, y, 8.5, -8.5, 8.5, 8.5));
  return std::max(-3.0, -0.1 * d);
}

std::array<double, 2> MountainHike::clip_action(const std::vector<double>& action) const {
  const double norm = std::hypot(action[0], action[1]);
  if (norm <= params_.c_thres) return {action[0], action[1]};
  const double s = params_.c_thres / norm;
  return {action[0] * s, action[1] * s};
}

std::vector<double> MountainHike::reset() {
  pos_ = {-8.5 + rng_.normal(), -8.5 + rng_.normal()};
  steps_ = 0;
  done_ = false;
  started_ = true;
  const double se = noiseless_ ? 0.0 : std::sqrt(params_.sigma_error_sq);
  return {pos_[0] + se * rng_.normal(), pos_[1] + se * rng_.normal()};
}

StepResult MountainHike::step(const std::vector<double>& action) {
  begin_step();
  check_action(action, 2);
  const auto a = clip_action(action);
  const double st = noiseless_ ? 0.0 : std::sqrt(params_.transition_var);
  const double se = noiseless_ ? 0.0 : std::sqrt(params_.sigma_error_sq);
  pos_[0] = std::clamp(pos_[0] + a[0] + st * rng_.normal(), -10.0, 10.0);
  pos_[1] = std::clamp(pos_[1] + a[1] + st * rng_.normal(), -10.0, 10.0);
  StepResult r;
  r.reward = reward_map(pos_[0], pos_[1]) - 0.01 * std::hypot(action[0], action[1]);
  r.observation = {pos_[0] + se * rng_.normal(), pos_[1] + se * rng_.normal()};
  r.info["x"] = pos_[0];
  r.info["y"] = pos_[1];
  r.info["success"] = 0.0;
  finish_step(r);
  return r;
}

std::string MountainHike::serialize() const {
  ByteWriter w;
  write_base(w, steps_, done_, started_);
  w.f64(pos_[0]);
  w.f64(pos_[1]);
  w.boolean(noiseless_);
  w.str(rng_.serialize());
  return w.take();
}

void MountainHike::deserialize(const std::string& blob) {
  ByteReader r(blob);
  steps_ = r.u64();
  done_ = r.boolean();
  started_ = r.boolean();
  pos_[0] = r.f64();
  pos_[1] = r.f64();
  noiseless_ = r.boolean();
  rng_.deserialize(r.str());
}

// ---------------------------------------------------------------- Pendulum

PendulumMissing::PendulumMissing(const EnvParams& params, std::uint64_t seed) : params_(params), rng_(seed, "env") {
  params_.validate();
  if (params_.max_steps == 0) params_.max_steps = 200;
}

double PendulumMissing::wrap_angle(double a) { return std::remainder(a, 2.0 * kPi); }

std::vector<double> PendulumMissing::observe() {
  std::vector<double> o{std::cos(theta_), std::sin(theta_), theta_dot_};
  for (double& v : o)
    if (rng_.bernoulli(params_.p_miss)) v = 0.0;
  return o;
}

std::vector<double> PendulumMissing::reset() {
  if (initial_) {
    theta_ = (*initial_)[0];
    theta_dot_ = (*initial_)[1];
  } else {
    theta_ = rng_.uniform(-kPi, kPi);
    theta_dot_ = rng_.uniform(-1.0, 1.0);
  }
  steps_ = 0;
  done_ = false;
  started_ = true;
  return observe();
}

StepResult PendulumMissing::step(const std::vector<double>& action) {
  begin_step();
  check_action(action, 1);
  constexpr double g = 10.0, m = 1.0, l = 1.0, dt = 0.05;
  const double u = std::clamp(action[0], -2.0, 2.0);
  StepResult r;
  const double th = wrap_angle(theta_);
  r.reward = -(th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u);
  double thdot = theta_dot_ + (3.0 * g / (2.0 * l) * std::sin(theta_) + 3.0 / (m * l * l) * u) * dt;
  thdot = std::clamp(thdot, -8.0, 8.0);
  theta_ = theta_ + thdot * dt;
  theta_dot_ = thdot;
  r.observation = observe();
  r.info["clipped"] = u != action[0] ? 1.0 : 0.0;
  r.info["theta"] = theta_;
  r.info["theta_dot"] = theta_dot_;
  r.info["success"] = 0.0;
  finish_step(r);
  return r;
}

std::string PendulumMissing::serialize() const {
  ByteWriter w;
  write_base(w, steps_, done_, started_);
  w.f64(theta_);
  w.f64(theta_dot_);
  w.str(rng_.serialize());
  return w.take();
}

void PendulumMissing::deserialize(const std::string& blob) {
  ByteReader r(blob);
  steps_ = r.u64();
  done_ = r.boolean();
  started_ = r.boolean();
  theta_ = r.f64();
  theta_dot_ = r.f64();
  rng_.deserialize(r.str());
}

// ---------------------------------------------------------------- Sequential target

SequentialTarget::SequentialTarget(const EnvParams& params, std::uint64_t seed) : params_(params), rng_(seed, "env") {
  params_.validate();
  if (params_.max_steps == 0) params_.max_steps = 128;
  const double c = kArena / 2.0, radius = 0.6 * params_.R;
  const double angles[3] = {90.0, 210.0, 330.0};
  for (std::size_t i = 0; i < 3; ++i) {
    const double a = angles[i] * kPi / 180.0;
    targets_[i] = {c + radius * std::cos(a), c + radius * std::sin(a)};
  }
}

std::vector<double> SequentialTarget::observe() const {
  std::vector<double> o;
  o.reserve(9);
  for (const auto& t : targets_) {
    const double dx = t[0] - x_, dy = t[1] - y_;
    const double bearing = std::atan2(dy, dx) - heading_;
    o.push_back(std::hypot(dx, dy));
    o.push_back(std::sin(bearing));
    o.push_back(std::cos(bearing));
  }
  return o;
}

std::vector<double> SequentialTarget::reset() {
  x_ = y_ = kArena / 2.0;
  heading_ = rng_.uniform(-kPi, kPi);
  progress_ = 0;
  forfeited_ = false;
  steps_ = 0;
  done_ = false;
  started_ = true;
  return observe();
}

StepResult SequentialTarget::step(const std::vector<double>& action) {
  begin_step();
  check_action(action, 2);
  // Body-frame command scaled to the speed cap.
  double fx = std::clamp(action[0], -1.0, 1.0) * kSpeedCap;
  double fy = std::clamp(action[1], -1.0, 1.0) * kSpeedCap;
  const double n = std::hypot(fx, fy);
  if (n > kSpeedCap) {
    fx *= kSpeedCap / n;
    fy *= kSpeedCap / n;
  }
  const double c = std::cos(heading_), s = std::sin(heading_);
  x_ = std::clamp(x_ + c * fx - s * fy, 0.0, kArena);
  y_ = std::clamp(y_ + s * fx + c * fy, 0.0, kArena);

  StepResult r;
  if (!forfeited_) {
    for (std::size_t i = progress_; i < 3; ++i) {
      if (std::hypot(targets_[i][0] - x_, targets_[i][1] - y_) > kContactRadius) continue;
      if (i == progress_) {
        const double rewards[3] = {params_.reward1, params_.reward2, params_.reward3};
        r.reward = rewards[i];
        ++progress_;
        break;
      }
      if (params_.forfeit) {
        forfeited_ = true;
        break;
      }
    }
  }
  const bool success = progress_ == 3;
  r.done = success;
  r.terminal = success;
  r.observation = observe();
  r.info["success"] = success ? 1.0 : 0.0;
  r.info["progress"] = static_cast<double>(progress_);
  r.info["forfeited"] = forfeited_ ? 1.0 : 0.0;
  finish_step(r);
  return r;
}

std::string SequentialTarget::serialize() const {
  ByteWriter w;
  write_base(w, steps_, done_, started_);
  w.f64(x_);
  w.f64(y_);
  w.f64(heading_);
  w.u64(progress_);
  w.boolean(forfeited_);
  w.str(rng_.serialize());
  return w.take();
}

void SequentialTarget::deserialize(const std::string& blob) {
  ByteReader r(blob);
  steps_ = r.u64();
  done_ = r.boolean();
  started_ = r.boolean();
  x_ = r.f64();
  y_ = r.f64();
  heading_ = r.f64();
  progress_ = r.u64();
  forfeited_ = r.boolean();
  rng_.deserialize(r.str());
}

}  // namespace blockseq
