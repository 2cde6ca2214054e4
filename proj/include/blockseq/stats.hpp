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

#include <cstddef>
#include <span>

namespace blockseq {

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  /// One-sided P(T_df > t): the chance that `a` does not outperform `b`.
  double p = 0.5;
  double mean_a = 0.0;
  double mean_b = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

/// Sample variance floor used when both inputs are constant.
inline constexpr double kVarianceFloor = 1e-12;

/// Welch's unequal-variance t-test. Throws DataError for samples of size < 2.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

/// Upper tail P(T_df > t) of Student's t, via the regularized incomplete beta.
double student_t_upper(double t, double df);

double mean(std::span<const double> v);
/// Unbiased sample variance.
double sample_variance(std::span<const double> v);

}  // namespace blockseq
