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
#include <set>

#include "blockseq/envs.hpp"
#include "blockseq/errors.hpp"

using namespace blockseq;
using Catch::Approx;

namespace {

EnvParams params_for(EnvKind k) {
  EnvParams p;
  p.kind = k;
  return p;
}

// Drives the agent toward a point at full speed using the body-frame convention.
std::vector<double> steer(const SequentialTarget& env, std::array<double, 2> goal) {
  const auto pos = env.position();
  const double dx = goal[0] - pos[0], dy = goal[1] - pos[1];
  const double c = std::cos(env.heading()), s = std::sin(env.heading());
  const double bx = c * dx + s * dy, by = -s * dx + c * dy;
  const double n = std::hypot(bx, by);
  if (n < 1e-12) return {0.0, 0.0};
  return {bx / n, by / n};
}

}  // namespace

TEST_CASE("mountain hike clipping examples") {
  MountainHike env(params_for(EnvKind::mountain_hike), 1);
  auto a = env.clip_action({0.05, 0.0});
  CHECK(a[0] == 0.05);
  CHECK(a[1] == 0.0);
  a = env.clip_action({1.0, 0.0});
  CHECK(a[0] == Approx(0.1).epsilon(1e-15));
  CHECK(a[1] == 0.0);
  a = env.clip_action({3.0, -4.0});
  CHECK(std::hypot(a[0], a[1]) == Approx(0.1).epsilon(1e-14));
  CHECK(a[0] / a[1] == Approx(-0.75));
}

TEST_CASE("mountain hike noiseless transition and reward") {
  MountainHike env(params_for(EnvKind::mountain_hike), 3);
  env.disable_noise();
  env.reset();
  env.set_position({1.0, 2.0});
  StepResult r = env.step({0.3, 0.4});
  CHECK(env.position()[0] == Approx(1.06).epsilon(1e-15));
  CHECK(env.position()[1] == Approx(2.08).epsilon(1e-15));
  CHECK(r.observation[0] == env.position()[0]);
  CHECK(r.observation[1] == env.position()[1]);
  CHECK(r.reward == Approx(MountainHike::reward_map(1.06, 2.08) - 0.01 * 0.5).epsilon(1e-14));
}

TEST_CASE("mountain hike reward map") {
  CHECK(MountainHike::reward_map(0.0, -8.5) == 0.0);
  CHECK(MountainHike::reward_map(8.5, 3.0) == Approx(0.0).margin(1e-15));
  CHECK(MountainHike::reward_map(0.0, -6.5) == Approx(-0.2));
  // The far corner is 18.56 from the ridge, so the -3 floor never binds inside the arena.
  CHECK(MountainHike::reward_map(-10.0, 10.0) == Approx(-0.1 * std::hypot(1.5, 18.5)));
  CHECK(MountainHike::reward_map(-40.0, 40.0) == -3.0);
}

TEST_CASE("mountain hike reward never exceeds the map maximum") {
  MountainHike env(params_for(EnvKind::mountain_hike), 5);
  RandomStream rng(9, "actions");
  env.reset();
  for (int t = 0; t < 200; ++t) {
    StepResult r = env.step({rng.uniform(-1, 1), rng.uniform(-1, 1)});
    CHECK(r.reward <= 0.0);
    CHECK(r.reward >= -3.0 - 0.01 * std::sqrt(2.0));
    CHECK(r.done == (t == 199));
    CHECK_FALSE(r.terminal);
  }
}

TEST_CASE("mountain hike initial state is centered near the start") {
  double sx = 0.0, sy = 0.0;
  const int n = 2000;
  for (int s = 0; s < n; ++s) {
    MountainHike env(params_for(EnvKind::mountain_hike), s);
    env.reset();
    sx += env.position()[0];
    sy += env.position()[1];
  }
  // Standard error of the mean is 1/sqrt(n).
  CHECK(std::abs(sx / n + 8.5) < 5.0 / std::sqrt(double(n)));
  CHECK(std::abs(sy / n + 8.5) < 5.0 / std::sqrt(double(n)));
}

TEST_CASE("pendulum masking extremes") {
  EnvParams p = params_for(EnvKind::pendulum_missing);
  p.p_miss = 0.0;
  PendulumMissing full(p, 4);
  std::vector<double> o = full.reset();
  CHECK(o[0] == std::cos(full.theta()));
  CHECK(o[1] == std::sin(full.theta()));
  CHECK(o[2] == full.theta_dot());
  StepResult r = full.step({0.5});
  CHECK(r.observation[0] == std::cos(full.theta()));
  CHECK(r.observation[2] == full.theta_dot());

  p.p_miss = 1.0;
  PendulumMissing blind(p, 4);
  for (double v : blind.reset()) CHECK(v == 0.0);
  for (int t = 0; t < 10; ++t)
    for (double v : blind.step({1.0}).observation) CHECK(v == 0.0);
}

TEST_CASE("pendulum masking rate over 1e5 steps") {
  PendulumMissing env(params_for(EnvKind::pendulum_missing), 11);
  RandomStream rng(2, "actions");
  std::size_t zeros = 0, total = 0;
  env.reset();
  for (int t = 0; t < 100000; ++t) {
    if (env.done()) env.reset();
    StepResult r = env.step({rng.uniform(-2, 2)});
    for (double v : r.observation) zeros += v == 0.0;
    total += 3;
  }
  const double rate = double(zeros) / double(total);
  CHECK(rate >= 0.095);
  CHECK(rate <= 0.105);
}

TEST_CASE("pendulum torque clipping is flagged") {
  PendulumMissing env(params_for(EnvKind::pendulum_missing), 1);
  env.reset();
  CHECK(env.step({3.0}).info.at("clipped") == 1.0);
  CHECK(env.step({-1.0}).info.at("clipped") == 0.0);
}

TEST_CASE("pendulum reward bounds") {
  PendulumMissing env(params_for(EnvKind::pendulum_missing), 8);
  RandomStream rng(3, "actions");
  const double lo = -(M_PI * M_PI + 0.1 * 64.0 + 0.001 * 4.0);
  for (int ep = 0; ep < 5; ++ep) {
    env.reset();
    while (!env.done()) {
      StepResult r = env.step({rng.uniform(-5, 5)});
      CHECK(r.reward <= 0.0);
      CHECK(r.reward >= lo);
      CHECK_FALSE(r.terminal);
    }
    CHECK(env.steps() == 200);
  }
}

TEST_CASE("hanging pendulum with zero torque") {
  PendulumMissing env(params_for(EnvKind::pendulum_missing), 0);
  env.set_initial_state(M_PI, 0.0);
  env.reset();
  double total = 0.0;
  while (!env.done()) total += env.step({0.0}).reward;

  // Independent rollout of the documented dynamics.
  double th = M_PI, thd = 0.0, expected = 0.0;
  for (int t = 0; t < 200; ++t) {
    double wrapped = std::fmod(th + M_PI, 2.0 * M_PI);
    if (wrapped < 0) wrapped += 2.0 * M_PI;
    wrapped -= M_PI;
    if (wrapped == -M_PI) wrapped = M_PI;
    expected += -(wrapped * wrapped + 0.1 * thd * thd);
    thd = std::clamp(thd + 15.0 * std::sin(th) * 0.05, -8.0, 8.0);
    th += thd * 0.05;
  }
  CHECK(total == Approx(expected).epsilon(1e-12));
  CHECK(total == Approx(-200.0 * M_PI * M_PI).epsilon(1e-9));
}

TEST_CASE("sequential target ordered visits pay each reward once") {
  SequentialTarget env(params_for(EnvKind::sequential_target), 7);
  env.reset();
  std::vector<double> rewards;
  std::size_t target = 0;
  while (!env.done()) {
    StepResult r = env.step(steer(env, env.targets()[target]));
    if (r.reward != 0.0) {
      rewards.push_back(r.reward);
      ++target;
    }
    if (r.done) {
      CHECK(r.info.at("success") == 1.0);
      CHECK(r.terminal);
    }
  }
  REQUIRE(rewards.size() == 3);
  CHECK(rewards == std::vector<double>{10.0, 30.0, 60.0});
  CHECK(env.progress() == 3);
}

TEST_CASE("sequential target out of order contact") {
  for (bool forfeit : {false, true}) {
    EnvParams p = params_for(EnvKind::sequential_target);
    p.forfeit = forfeit;
    SequentialTarget env(p, 7);
    env.reset();
    const auto t2 = env.targets()[1];
    env.set_pose(t2[0], t2[1], 0.0);
    StepResult r = env.step({0.0, 0.0});
    CHECK(r.reward == 0.0);
    CHECK(env.forfeited() == forfeit);
    // Then visit target one.
    double total = 0.0;
    for (int t = 0; t < 60 && !env.done(); ++t) total += env.step(steer(env, env.targets()[0])).reward;
    CHECK(total == (forfeit ? 0.0 : 10.0));
  }
}

TEST_CASE("sequential target episode returns lie in the allowed set") {
  const std::set<double> allowed{0.0, 10.0, 40.0, 100.0};
  RandomStream rng(5, "actions");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EnvParams p = params_for(EnvKind::sequential_target);
    p.R = 3.0;
    p.forfeit = seed % 2 == 0;
    SequentialTarget env(p, seed);
    env.reset();
    double total = 0.0;
    bool success = false;
    while (!env.done()) {
      StepResult r = env.step({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      total += r.reward;
      success = r.info.at("success") == 1.0;
    }
    CHECK(allowed.count(total) == 1);
    if (success) CHECK(total == 100.0);
  }
}

TEST_CASE("sequential target spacing scales with R") {
  EnvParams p = params_for(EnvKind::sequential_target);
  SequentialTarget a(p, 0);
  p.R = 15.0;
  SequentialTarget b(p, 0);
  auto spacing = [](const SequentialTarget& e) {
    return std::hypot(e.targets()[0][0] - e.targets()[1][0], e.targets()[0][1] - e.targets()[1][1]);
  };
  CHECK(spacing(b) == Approx(1.5 * spacing(a)).epsilon(1e-14));
}

TEST_CASE("environments replay bit-exactly under a seed") {
  for (EnvKind k : {EnvKind::mountain_hike, EnvKind::pendulum_missing, EnvKind::sequential_target}) {
    auto run = [k](std::uint64_t seed) {
      auto env = make_env(params_for(k), seed);
      RandomStream rng(77, "actions");
      std::vector<double> trace = env->reset();
      for (int t = 0; t < 100 && !env->done(); ++t) {
        std::vector<double> a(env->act_dim());
        for (double& v : a) v = rng.uniform(-1, 1);
        StepResult r = env->step(a);
        trace.insert(trace.end(), r.observation.begin(), r.observation.end());
        trace.push_back(r.reward);
      }
      return trace;
    };
    CHECK(run(42) == run(42));
    CHECK(run(42) != run(43));
  }
}

TEST_CASE("serialized state resumes the same trajectory") {
  for (EnvKind k : {EnvKind::mountain_hike, EnvKind::pendulum_missing, EnvKind::sequential_target}) {
    auto env = make_env(params_for(k), 5);
    env->reset();
    std::vector<double> a(env->act_dim(), 0.3);
    for (int t = 0; t < 10; ++t) env->step(a);
    const std::string blob = env->serialize();
    StepResult first = env->step(a);
    auto other = make_env(params_for(k), 999);
    other->deserialize(blob);
    StepResult second = other->step(a);
    CHECK(first.observation == second.observation);
    CHECK(first.reward == second.reward);
    CHECK(other->steps() == env->steps());
  }
}

TEST_CASE("stepping protocol errors") {
  for (EnvKind k : {EnvKind::mountain_hike, EnvKind::pendulum_missing, EnvKind::sequential_target}) {
    auto env = make_env(params_for(k), 1);
    std::vector<double> a(env->act_dim(), 0.0);
    CHECK_THROWS_AS(env->step(a), ProtocolError);
    env->reset();
    while (!env->done()) env->step(a);
    CHECK_THROWS_AS(env->step(a), ProtocolError);
    env->reset();
    CHECK_THROWS_AS(env->step(std::vector<double>(env->act_dim() + 1, 0.0)), ShapeError);
  }
}

TEST_CASE("invalid parameters are rejected") {
  EnvParams p = params_for(EnvKind::pendulum_missing);
  p.p_miss = 1.5;
  CHECK_THROWS_AS(make_env(p, 0), ConfigError);
  p = params_for(EnvKind::sequential_target);
  p.R = 20.0;
  CHECK_THROWS_AS(make_env(p, 0), ConfigError);
  CHECK_THROWS_AS(parse_env_kind("cartpole"), ConfigError);
  CHECK(parse_env_kind("pendulum-missing") == EnvKind::pendulum_missing);
}
