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

#include "blockseq/stats.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <string>

#include "blockseq/errors.hpp"

namespace blockseq {

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double student_t_upper(double t, double df) {
  if (!(df > 0.0)) throw DataError("t distribution needs positive degrees of freedom");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  // P(|T| > |t|) = I_{df / (df + t^2)}(df / 2, 1 / 2).
  const double two_sided = boost::math::ibeta(0.5 * df, 0.5, df / (df + t * t));
  return t >= 0.0 ? 0.5 * two_sided : 1.0 - 0.5 * two_sided;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw DataError("Welch test needs at least two samples per group, got " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()));
  }
  for (double x : a)
    if (!std::isfinite(x)) throw DataError("Welch test input contains a non-finite value");
  for (double x : b)
    if (!std::isfinite(x)) throw DataError("Welch test input contains a non-finite value");

  WelchResult r;
  r.n_a = a.size();
  r.n_b = b.size();
  r.mean_a = mean(a);
  r.mean_b = mean(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double va = sample_variance(a), vb = sample_variance(b);
  if (va == 0.0 && vb == 0.0) {
    if (r.mean_a == r.mean_b) {
      r.t = 0.0;
      r.df = na + nb - 2.0;
      r.p = 0.5;
      return r;
    }
    va = vb = kVarianceFloor;
  }
  const double sa = va / na, sb = vb / nb;
  const double se2 = sa + sb;
  r.t = (r.mean_a - r.mean_b) / std::sqrt(se2);
  r.df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = student_t_upper(r.t, r.df);
  return r;
}

}  // namespace blockseq
