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

// blockseq command line: train, eval, compare, gradcheck, oracle.
// Exit codes: 0 success, 1 configuration error, 2 runtime abort.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "blockseq/compare.hpp"
#include "blockseq/config.hpp"
#include "blockseq/diagnostics.hpp"
#include "blockseq/errors.hpp"
#include "blockseq/oracle.hpp"
#include "blockseq/trainer.hpp"

namespace {

using namespace blockseq;

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string agent, env, out, resume, preset;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  bool deterministic = false;
  bool no_eval = false;
};

Overrides gather(const TrainArgs& a, CLI::App& cmd) {
  Overrides o;
  if (!a.config.empty()) o = read_overrides_file(a.config);
  if (!a.preset.empty()) o.emplace_back("preset", a.preset);
  if (!a.env.empty()) o.emplace_back("env.kind", a.env);
  if (!a.agent.empty()) o.emplace_back("agent.kind", a.agent);
  if (cmd.count("--seed") > 0) o.emplace_back("run.seed", std::to_string(a.seed));
  if (!a.out.empty()) o.emplace_back("run.out", a.out);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return o;
}

void report_eval(const std::string& path, const EvalResult& r, bool deterministic) {
  write_eval_csv(path, r, deterministic);
  std::printf("eval: %zu episodes, mean return %.4f, success rate %.4f\n", r.episodes, r.mean_return, r.success_rate);
}

int run_train(const TrainArgs& a, CLI::App& cmd) {
  if (!a.resume.empty()) {
    const std::string dir = a.out.empty() ? std::filesystem::path(a.resume).parent_path().string() : a.out;
    ScheduleCounts c = resume_in_dir(a.resume, dir);
    std::printf("resumed to step %llu (%llu episodes)\n", static_cast<unsigned long long>(c.global_step),
                static_cast<unsigned long long>(c.episodes));
    return 0;
  }
  Overrides base = gather(a, cmd);
  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty()) seeds.push_back(build_config(base).seed);
  for (std::uint64_t s : seeds) {
    Overrides o = base;
    o.emplace_back("run.seed", std::to_string(s));
    if (a.seeds.size() > 0) {
      const std::string root = a.out.empty() ? build_config(base).out_dir : a.out;
      o.emplace_back("run.out", (std::filesystem::path(root) / ("seed_" + std::to_string(s))).string());
    }
    TrainConfig cfg = build_config(o);
    ScheduleCounts c = train_to_dir(cfg);
    std::printf("seed %llu: %llu steps, %llu episodes, %llu pretrain, %llu model, %llu rl updates\n",
                static_cast<unsigned long long>(s), static_cast<unsigned long long>(c.global_step),
                static_cast<unsigned long long>(c.episodes), static_cast<unsigned long long>(c.pretrain_updates),
                static_cast<unsigned long long>(c.model_updates), static_cast<unsigned long long>(c.rl_updates));
    if (!a.no_eval) {
      Trainer trained(load_checkpoint(run_paths(cfg.out_dir).checkpoint));
      report_eval(run_paths(cfg.out_dir).eval, trained.evaluate(cfg.eval_episodes, a.deterministic), a.deterministic);
    }
  }
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& env, std::size_t episodes, bool deterministic,
             const std::string& out) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  Trainer trainer(ckpt);
  if (!env.empty() && parse_env_kind(env) != trainer.config().env.kind) {
    throw CompatibilityError("checkpoint was trained on " + to_string(trainer.config().env.kind) + ", not " + env);
  }
  const EvalResult r = trainer.evaluate(episodes, deterministic);
  const std::string path = out.empty() ? (std::filesystem::path(checkpoint).parent_path() / "eval.csv").string()
                                       : (std::filesystem::path(out) / "eval.csv").string();
  if (!out.empty()) std::filesystem::create_directories(out);
  report_eval(path, r, deterministic);
  return 0;
}

int run_compare(const std::vector<std::string>& dirs, const std::string& metric, const std::string& out) {
  CompareReport report = compare_runs(dirs, metric);
  const std::string table = format_table(report);
  std::cout << table;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream(std::filesystem::path(out) / "compare.txt") << table;
    std::ofstream(std::filesystem::path(out) / "compare.csv") << format_csv(report);
  }
  return 0;
}

int gradcheck_cmd(std::uint64_t seed) {
  bool ok = true;
  for (const auto& e : blockseq::run_gradcheck(seed)) {
    std::printf("%-4s %-24s entries=%-6zu max_rel_err=%.3e\n", e.passed ? "PASS" : "FAIL", e.network.c_str(), e.entries,
                e.worst);
    ok = ok && e.passed;
  }
  return ok ? 0 : 2;
}

int oracle_cmd(std::uint64_t seed) {
  oracle::ConsistencyReport c = oracle::run_consistency(seed);
  for (std::size_t i = 0; i < c.sample_counts.size(); ++i) {
    std::printf("K_sp=%-6zu median relative error %.4f\n", c.sample_counts[i], c.median_relative_error[i]);
  }
  std::printf("%s generative consistency (monotone=%s)\n", c.passed ? "PASS" : "FAIL", c.monotone ? "yes" : "no");
  oracle::StationarityReport s = oracle::run_stationarity(seed);
  std::printf("%s inference stationarity: |mean| = %.4g, standard error = %.4g over %zu batches\n",
              s.passed ? "PASS" : "FAIL", s.mean_norm, s.standard_error, s.batches);
  return c.passed && s.passed ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blockwise sequential model learning for partially observable control"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", ta.config, "config file of key = value lines");
  train->add_option("--set", ta.sets, "override one key, as key=value");
  train->add_option("--preset", ta.preset, "paper or desk");
  train->add_option("--agent", ta.agent, "proposed|sac|lstm|attention-only|blockwise-rnn-only");
  train->add_option("--env", ta.env, "mountain-hike|pendulum-missing|sequential-target");
  train->add_option("--seed", ta.seed, "run seed");
  train->add_option("--seeds", ta.seeds, "several seeds, run one after another into <out>/seed_<n>")->delimiter(',');
  train->add_option("--out", ta.out, "output directory");
  train->add_option("--resume", ta.resume, "continue from a checkpoint");
  train->add_flag("--deterministic", ta.deterministic, "evaluate with the mean action");
  train->add_flag("--no-eval", ta.no_eval, "skip the evaluation after training");

  std::string ev_ckpt, ev_env, ev_out;
  std::size_t ev_episodes = 100;
  bool ev_det = false;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint with frozen parameters");
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--env", ev_env, "expected environment");
  eval->add_option("--episodes", ev_episodes, "episodes to run");
  eval->add_option("--out", ev_out, "directory for eval.csv (default: next to the checkpoint)");
  eval->add_flag("--deterministic", ev_det, "use the mean action");

  std::vector<std::string> cmp_dirs;
  std::string cmp_metric = "avg_return_100", cmp_out;
  CLI::App* cmp = app.add_subcommand("compare", "pairwise Welch tests across run directories");
  cmp->add_option("runs", cmp_dirs, "run directories, one per method")->required();
  cmp->add_option("--metric", cmp_metric, "column of log.csv or eval.csv");
  cmp->add_option("--out", cmp_out, "directory for compare.txt and compare.csv");

  std::uint64_t gc_seed = 7;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every network");
  gc->add_option("--seed", gc_seed, "seed");

  std::uint64_t or_seed = 2026;
  CLI::App* orc = app.add_subcommand("oracle", "estimator checks on the linear-Gaussian model");
  orc->add_option("--seed", or_seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*train) return run_train(ta, *train);
    if (*eval) return run_eval(ev_ckpt, ev_env, ev_episodes, ev_det, ev_out);
    if (*cmp) return run_compare(cmp_dirs, cmp_metric, cmp_out);
    if (*gc) return gradcheck_cmd(gc_seed);
    if (*orc) return oracle_cmd(or_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const CompatibilityError& e) {
    std::fprintf(stderr, "incompatible: %s\n", e.what());
    return 1;
  } catch (const NumericalAbort& e) {
    std::fprintf(stderr, "aborted: %s (see nan_dump.txt in the run directory)\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
