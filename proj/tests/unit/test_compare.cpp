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
#include <filesystem>
#include <fstream>

#include "blockseq/compare.hpp"
#include "blockseq/errors.hpp"

using namespace blockseq;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

// One seed directory per value, each with a two-episode log ending at that value.
fs::path make_runs(const std::string& name, const std::vector<double>& finals) {
  const fs::path root = fs::temp_directory_path() / "blockseq_compare" / name;
  fs::remove_all(root);
  for (std::size_t i = 0; i < finals.size(); ++i) {
    const fs::path d = root / ("seed_" + std::to_string(i));
    fs::create_directories(d);
    std::ofstream log(d / "log.csv");
    log << "kind,global_step,episode,episode_return,avg_return_100,gen_loss,inf_loss,actor_loss,critic_loss,"
           "value_loss,wall_time_s\n";
    log << "episode,200,1,-1000,-1000,,,,,,0\n";
    log << "rl,201,2,,,,,1,1,1,0\n";
    log << "episode,400,2,0," << finals[i] << ",,,,,,0\n";
    log << "rl,401,3,,,,,1,1,1,0\n";
    std::ofstream eval(d / "eval.csv");
    eval << "episodes,deterministic,mean_return,success_rate\n100,0,-5," << 0.1 * static_cast<double>(i) << "\n";
  }
  return root;
}

}  // namespace

TEST_CASE("final metric is the last logged value") {
  const fs::path runs = make_runs("final", {-123.5, 7.0});
  CHECK(final_metric((runs / "seed_0").string(), "avg_return_100") == -123.5);
  CHECK(final_metric((runs / "seed_1").string(), "success_rate") == Approx(0.1));
  CHECK_THROWS_AS(final_metric((runs / "seed_0").string(), "return_at_dawn"), DataError);
}

TEST_CASE("a run set against itself gives p = 0.5") {
  const fs::path a = make_runs("self_a", {-300.2, -310.5, -295.1, -305.9, -299.0});
  const fs::path b = make_runs("self_b", {-300.2, -310.5, -295.1, -305.9, -299.0});
  CompareReport r = compare_runs({a.string(), b.string()}, "avg_return_100");
  REQUIRE(r.pairs.size() == 2);
  for (const auto& c : r.pairs) CHECK(c.welch.p == 0.5);
}

TEST_CASE("disjoint five-seed sets are separated") {
  const fs::path a = make_runs("ours", {-300.2, -310.5, -295.1, -305.9, -299.0});
  const fs::path b = make_runs("baseline", {-402.7, -350.3, -450.1, -380.8, -420.2});
  CompareReport r = compare_runs({a.string(), b.string()}, "avg_return_100");
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[0].values.size() == 5);
  REQUIRE(r.pairs.size() == 2);
  CHECK(r.pairs[0].a == "ours");
  CHECK(r.pairs[0].b == "baseline");
  // Frozen from an independent statistics package.
  CHECK(r.pairs[0].welch.p < 0.01);
  CHECK(std::abs(r.pairs[0].welch.p - 0.0019554460114782094) < 1e-6);
  CHECK(r.pairs[1].welch.p > 0.99);

  const std::string table = format_table(r);
  CHECK(table.find("ours outperforms baseline with a 100% confidence level") != std::string::npos);
  CHECK(table.find("n = 5 vs 5") != std::string::npos);
  const std::string csv = format_csv(r);
  CHECK(csv.rfind("metric,a,b,n_a,n_b,mean_a,mean_b,t,df,p,confidence\n", 0) == 0);
  CHECK(csv.find("avg_return_100,ours,baseline,5,5,") != std::string::npos);
}

TEST_CASE("confidence phrasing uses 100(1 - p) percent") {
  const fs::path a = make_runs("phr_a", {1, 2, 3, 4, 5});
  const fs::path b = make_runs("phr_b", {2, 3, 4, 5, 6});
  CompareReport r = compare_runs({a.string(), b.string()}, "avg_return_100");
  // p(a, b) = 0.8267 so the confidence is 17%; the reverse is 83%.
  const std::string table = format_table(r);
  CHECK(table.find("phr_a outperforms phr_b with a 17% confidence level") != std::string::npos);
  CHECK(table.find("phr_b outperforms phr_a with a 83% confidence level") != std::string::npos);
}

TEST_CASE("compare errors") {
  const fs::path a = make_runs("err_a", {1, 2});
  CHECK_THROWS_AS(compare_runs({a.string()}, "avg_return_100"), DataError);
  CHECK_THROWS_AS(compare_runs({a.string(), a.string()}, "not_a_column"), DataError);
  const fs::path single = make_runs("err_single", {1});
  CHECK_THROWS_AS(compare_runs({a.string(), single.string()}, "avg_return_100"), DataError);
  CHECK_THROWS_AS(compare_runs({a.string(), "/nonexistent/run"}, "avg_return_100"), DataError);
}
