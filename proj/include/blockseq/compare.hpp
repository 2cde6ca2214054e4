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

// Pairwise one-sided Welch comparison of end-of-training metrics across run
// directories. A run directory holds one subdirectory per seed, each with a
// log.csv and optionally an eval.csv.

#pragma once

#include <string>
#include <vector>

#include "blockseq/stats.hpp"

namespace blockseq {

struct RunSet {
  std::string name;
  std::vector<std::string> seed_dirs;
  std::vector<double> values;
};

struct Comparison {
  std::string a;
  std::string b;
  WelchResult welch;
};

struct CompareReport {
  std::string metric;
  std::vector<RunSet> runs;
  std::vector<Comparison> pairs;  ///< every ordered pair a != b
};

/// Last non-empty value of `metric` in log.csv, else the value in eval.csv.
/// DataError if neither file has the column.
double final_metric(const std::string& seed_dir, const std::string& metric);

/// Seeds are the subdirectories holding a log.csv, in name order; a directory
/// that holds log.csv itself counts as a single seed.
RunSet load_run_set(const std::string& run_dir, const std::string& metric);

CompareReport compare_runs(const std::vector<std::string>& run_dirs, const std::string& metric);

std::string format_table(const CompareReport& report);
std::string format_csv(const CompareReport& report);

}  // namespace blockseq
