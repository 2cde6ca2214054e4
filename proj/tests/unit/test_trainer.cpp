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
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "blockseq/errors.hpp"
#include "blockseq/trainer.hpp"

using namespace blockseq;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

// Pendulum with 40-step episodes and tiny networks.
Overrides tiny(const std::string& agent = "proposed") {
  return {{"env.kind", "pendulum"},
          {"env.max_steps", "40"},
          {"agent.kind", agent},
          {"model.L", "4"},
          {"model.k", "2"},
          {"model.K_sp", "6"},
          {"model.d", "8"},
          {"model.heads", "2"},
          {"model.head_dim", "4"},
          {"model.latent", "3"},
          {"model.depth", "1"},
          {"model.embed_hidden", "6"},
          {"model.rnn_hidden", "5"},
          {"model.head_hidden", "6"},
          {"model.joint_hidden", "6"},
          {"model.fnn_hidden", "6"},
          {"model.ffn_hidden", "8"},
          {"agent.hidden", "8"},
          {"agent.z_hidden", "6"},
          {"agent.lstm_embed", "6"},
          {"schedule.T", "8"},
          {"schedule.N_mini", "2"},
          {"schedule.I_pre", "50"},
          {"schedule.S_pre", "3"},
          {"schedule.I_RL", "2"},
          {"schedule.I_model", "5"},
          {"schedule.max_steps", "130"},
          {"run.wall_time", "false"},
          {"run.seed", "5"}};
}

TrainConfig tiny_config(const std::string& agent = "proposed", Overrides extra = {}) {
  Overrides o = tiny(agent);
  o.insert(o.end(), extra.begin(), extra.end());
  return build_config(o);
}

std::string run_all(Trainer& t) {
  std::ostringstream csv;
  t.run(csv);
  return csv.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

bool has_tag(const std::string& kind, const std::string& tag) {
  std::istringstream in(kind);
  std::string t;
  while (std::getline(in, t, '+')) {
    if (t == tag) return true;
  }
  return false;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("blockseq_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("schedule counts match the closed form") {
  Trainer t(tiny_config());
  const std::string csv = run_all(t);
  // Episodes run to completion, so the loop ends on an episode boundary.
  CHECK(t.counts().global_step == 160);
  CHECK(t.counts().episodes == 4);

  // Brute-force count of the schedule.
  std::uint64_t rl = 0, model = 0;
  for (std::uint64_t g = 1; g <= 160; ++g) {
    if (g > 50 && g % 2 == 0) ++rl;
    if (g > 50 && g % 5 == 0) ++model;
  }
  CHECK(t.counts().rl_updates == rl);
  CHECK(t.counts().model_updates == model);
  CHECK(t.counts().pretrain_updates == 3);
  CHECK(t.counts().skipped_updates == 0);
  ScheduleCounts e = expected_counts(t.config(), 160);
  CHECK(e.rl_updates == rl);
  CHECK(e.model_updates == model);
  CHECK(e.pretrain_updates == 3);

  std::size_t pretrain_rows = 0, rl_rows = 0, model_rows = 0;
  for (const auto& row : parse_csv(csv)) {
    if (has_tag(row[0], "pretrain")) {
      ++pretrain_rows;
      CHECK(row[1] == "51");
    }
    if (has_tag(row[0], "rl")) ++rl_rows;
    if (has_tag(row[0], "model")) ++model_rows;
  }
  CHECK(pretrain_rows == 1);
  CHECK(rl_rows == rl);
  CHECK(model_rows == model);
}

TEST_CASE("baselines without a latent model never run model updates") {
  for (const char* agent : {"sac", "lstm", "attention-only"}) {
    Trainer t(tiny_config(agent));
    run_all(t);
    CHECK(t.counts().model_updates == 0);
    CHECK(t.counts().pretrain_updates == 0);
    CHECK(t.counts().rl_updates == expected_counts(t.config(), 160).rl_updates);
  }
  Trainer b(tiny_config("blockwise-rnn-only"));
  run_all(b);
  CHECK(b.counts().model_updates == expected_counts(b.config(), 160).model_updates);
}

TEST_CASE("log rows") {
  Trainer t(tiny_config());
  const auto rows = parse_csv(std::string(kCsvHeader) + "\n" + run_all(t));
  REQUIRE(rows.size() > 2);
  CHECK(rows[0].size() == 11);
  long long last = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 11);
    const long long g = std::stoll(rows[i][1]);
    CHECK(g > last);
    last = g;
    const bool episode = has_tag(rows[i][0], "episode");
    CHECK(rows[i][3].empty() == !episode);
    CHECK(rows[i][5].empty() == !(has_tag(rows[i][0], "model") || has_tag(rows[i][0], "pretrain")));
    CHECK(rows[i][7].empty() == !has_tag(rows[i][0], "rl"));
    CHECK(rows[i][10] == "0");
  }
}

TEST_CASE("avg_return_100 is the mean of the latest hundred returns") {
  // Five-step episodes and no learning, so 130 episodes run quickly.
  TrainConfig cfg = tiny_config("sac", {{"env.max_steps", "5"}, {"schedule.I_pre", "640"}, {"schedule.max_steps", "650"}});
  Trainer t(cfg);
  const auto rows = parse_csv(run_all(t));
  std::vector<double> returns;
  for (const auto& row : rows) {
    if (!has_tag(row[0], "episode")) continue;
    returns.push_back(std::stod(row[3]));
    const std::size_t n = std::min<std::size_t>(returns.size(), 100);
    double sum = 0.0;
    for (std::size_t i = returns.size() - n; i < returns.size(); ++i) sum += returns[i];
    CHECK(std::stod(row[4]) == Approx(sum / static_cast<double>(n)).epsilon(1e-9));
    CHECK(std::stoul(row[2]) == returns.size());
  }
  CHECK(returns.size() == 130);
}

TEST_CASE("identical config and seed give identical logs and checkpoints") {
  Trainer a(tiny_config()), b(tiny_config());
  CHECK(run_all(a) == run_all(b));
  const bool same = encode_checkpoint(a.capture()) == encode_checkpoint(b.capture());
  CHECK(same);
  Trainer c(tiny_config("proposed", {{"run.seed", "6"}}));
  CHECK(run_all(c) != run_all(a));
}

TEST_CASE("save, load, save is byte identical mid-episode") {
  Trainer t(tiny_config());
  std::ostringstream sink;
  t.run(sink, 73);
  const std::string bytes = encode_checkpoint(t.capture());
  Trainer back(decode_checkpoint(bytes));
  const bool same = encode_checkpoint(back.capture()) == bytes;
  CHECK(same);
  CHECK(back.counts().global_step == 73);
}

TEST_CASE("resume continues the log exactly") {
  const fs::path full = scratch("full"), split = scratch("split");
  train_to_dir(tiny_config("proposed", {{"run.out", full.string()}}));
  // Stop mid-episode after pretraining, resume in the same directory.
  train_to_dir(tiny_config("proposed", {{"run.out", split.string()}}), 97);
  // Rows past the checkpoint must be discarded on resume.
  std::ofstream(split / "log.csv", std::ios::app) << "rl,999,9,,,,,1,1,1,0\n";
  resume_in_dir((split / "checkpoint.bsml").string(), split.string());
  CHECK(slurp(full / "log.csv") == slurp(split / "log.csv"));
  // The checkpoints differ only in run.out.
  Checkpoint a = load_checkpoint((full / "checkpoint.bsml").string());
  Checkpoint b = load_checkpoint((split / "checkpoint.bsml").string());
  CHECK(a.config.find("run.out = " + full.string()) != std::string::npos);
  auto without_out = [](std::string text) {
    const auto at = text.find("run.out = ");
    return text.erase(at, text.find('\n', at) - at);
  };
  CHECK(without_out(a.config) == without_out(b.config));
  const bool same_tensors = a.tensors == b.tensors, same_blobs = a.blobs == b.blobs;
  CHECK(same_tensors);
  CHECK(same_blobs);
  fs::remove_all(full);
  fs::remove_all(split);
}

TEST_CASE("truncate_log keeps the header and earlier rows") {
  const std::string csv = "h\nrl,1,1\nrl,5,1\nrl,9,1\n";
  CHECK(truncate_log(csv, 5) == "h\nrl,1,1\nrl,5,1\n");
  CHECK(truncate_log(csv, 0) == "h\n");
}

TEST_CASE("evaluation is repeatable and leaves training state alone") {
  Trainer t(tiny_config());
  std::ostringstream sink;
  t.run(sink, 60);
  const std::string before = encode_checkpoint(t.capture());
  EvalResult a = t.evaluate(3, true), b = t.evaluate(3, true);
  CHECK(a.returns == b.returns);
  EvalResult c = t.evaluate(3, false), d = t.evaluate(3, false);
  CHECK(c.returns == d.returns);
  const bool untouched = encode_checkpoint(t.capture()) == before;
  CHECK(untouched);
  CHECK(a.episodes == 3);
  CHECK(a.success_rate == 0.0);
}

TEST_CASE("zero torque on a hanging pendulum") {
  EnvParams p;
  p.kind = EnvKind::pendulum_missing;
  p.p_miss = 0.0;
  PendulumMissing env(p, 1);
  env.set_initial_state(M_PI, 0.0);
  EvalResult r = evaluate_policy(env, 1, [](const std::vector<double>&) { return std::vector<double>{0.0}; });
  // Reward -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2) with theta held at pi.
  CHECK(r.mean_return == Approx(-200.0 * M_PI * M_PI).epsilon(1e-9));
}

TEST_CASE("random policy rarely finishes the wide sequential task") {
  TrainConfig cfg = build_config({{"env.kind", "sequential-target"}, {"env.R", "15"}});
  EvalResult r = evaluate_random(cfg, 100, 3);
  CHECK(r.episodes == 100);
  CHECK(r.success_rate <= 0.05);
}

TEST_CASE("non-finite loss aborts with a dump") {
  const fs::path dir = scratch("nan");
  fs::create_directories(dir);
  Trainer t(tiny_config());
  t.set_dump_path((dir / "nan_dump.txt").string());
  std::ostringstream sink;
  t.run(sink, 50);
  for (auto& [name, e] : t.agent().store()) {
    if (name.rfind("q1.", 0) == 0) e.value[0] = std::numeric_limits<double>::quiet_NaN();
  }
  CHECK_THROWS_AS(t.run(sink), NumericalAbort);
  const std::string dump = slurp(dir / "nan_dump.txt");
  CHECK(dump.find("global_step: 52") != std::string::npos);
  CHECK(dump.find("window episode=") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint that does not fit its config is rejected") {
  Trainer t(tiny_config());
  Checkpoint ckpt = t.capture();
  const auto pos = ckpt.config.find("agent.hidden = 8");
  REQUIRE(pos != std::string::npos);
  ckpt.config.replace(pos, 16, "agent.hidden = 9");
  CHECK_THROWS_AS(Trainer(ckpt), CompatibilityError);
}
