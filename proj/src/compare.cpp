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

#include "blockseq/compare.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "blockseq/errors.hpp"

namespace blockseq {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Last non-empty value of a column, nullopt if the column is absent.
std::optional<double> last_value(const fs::path& file, const std::string& column, bool& has_column) {
  has_column = false;
  std::ifstream in(file);
  if (!in) return std::nullopt;
  std::string line;
  if (!std::getline(in, line)) return std::nullopt;
  const auto header = split(line);
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end()) return std::nullopt;
  has_column = true;
  const std::size_t col = static_cast<std::size_t>(it - header.begin());
  std::optional<double> value;
  while (std::getline(in, line)) {
    const auto cells = split(line);
    if (col < cells.size() && !cells[col].empty()) {
      try {
        value = std::stod(cells[col]);
      } catch (const std::exception&) {
        throw DataError(file.string() + ": column " + column + " holds a non-number");
      }
    }
  }
  return value;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0f%%", 100.0 * v);
  return buf;
}

std::string num(double v, const char* f = "%.6g") {
  char buf[32];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

double final_metric(const std::string& seed_dir, const std::string& metric) {
  bool has = false;
  for (const char* file : {"log.csv", "eval.csv"}) {
    auto v = last_value(fs::path(seed_dir) / file, metric, has);
    if (has) {
      if (!v) throw DataError(seed_dir + "/" + file + ": column " + metric + " has no values");
      return *v;
    }
  }
  throw DataError(seed_dir + ": no log.csv or eval.csv column named " + metric);
}

RunSet load_run_set(const std::string& run_dir, const std::string& metric) {
  RunSet set;
  set.name = fs::path(run_dir).lexically_normal().filename().string();
  if (set.name.empty()) set.name = fs::path(run_dir).lexically_normal().parent_path().filename().string();
  if (!fs::is_directory(run_dir)) throw DataError("run directory " + run_dir + " does not exist");
  if (fs::exists(fs::path(run_dir) / "log.csv")) {
    set.seed_dirs.push_back(run_dir);
  } else {
    for (const auto& entry : fs::directory_iterator(run_dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "log.csv")) set.seed_dirs.push_back(entry.path().string());
    }
    std::sort(set.seed_dirs.begin(), set.seed_dirs.end());
  }
  if (set.seed_dirs.empty()) throw DataError("run directory " + run_dir + " holds no log.csv");
  for (const auto& d : set.seed_dirs) set.values.push_back(final_metric(d, metric));
  return set;
}

CompareReport compare_runs(const std::vector<std::string>& run_dirs, const std::string& metric) {
  if (run_dirs.size() < 2) throw DataError("compare needs at least two run directories");
  CompareReport report;
  report.metric = metric;
  for (const auto& d : run_dirs) report.runs.push_back(load_run_set(d, metric));
  for (std::size_t i = 0; i < report.runs.size(); ++i) {
    for (std::size_t j = 0; j < report.runs.size(); ++j) {
      if (i == j) continue;
      report.pairs.push_back(
          {report.runs[i].name, report.runs[j].name, welch_t_test(report.runs[i].values, report.runs[j].values)});
    }
  }
  return report;
}

std::string format_table(const CompareReport& report) {
  std::ostringstream out;
  out << "metric: " << report.metric << "\n\n";
  for (const auto& r : report.runs) {
    out << r.name << ": n=" << r.values.size() << " mean=" << num(mean(r.values)) << "\n";
  }
  out << "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %-24s %10s %10s %10s %10s\n", "a", "b", "t", "df", "p", "confidence");
  out << line;
  for (const auto& c : report.pairs) {
    std::snprintf(line, sizeof line, "%-24s %-24s %10.4f %10.3f %10.4g %10s\n", c.a.c_str(), c.b.c_str(), c.welch.t,
                  c.welch.df, c.welch.p, pct(1.0 - c.welch.p).c_str());
    out << line;
  }
  out << "\n";
  for (const auto& c : report.pairs) {
    out << c.a << " outperforms " << c.b << " with a " << pct(1.0 - c.welch.p) << " confidence level (p = "
        << num(c.welch.p, "%.4g") << ", n = " << c.welch.n_a << " vs " << c.welch.n_b << ")\n";
  }
  return out.str();
}

std::string format_csv(const CompareReport& report) {
  std::ostringstream out;
  out << "metric,a,b,n_a,n_b,mean_a,mean_b,t,df,p,confidence\n";
  for (const auto& c : report.pairs) {
    out << report.metric << ',' << c.a << ',' << c.b << ',' << c.welch.n_a << ',' << c.welch.n_b << ','
        << num(c.welch.mean_a, "%.10g") << ',' << num(c.welch.mean_b, "%.10g") << ',' << num(c.welch.t, "%.10g") << ','
        << num(c.welch.df, "%.10g") << ',' << num(c.welch.p, "%.10g") << ',' << num(1.0 - c.welch.p, "%.10g") << '\n';
  }
  return out.str();
}

}  // namespace blockseq
