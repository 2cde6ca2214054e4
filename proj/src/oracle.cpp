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

#include "blockseq/oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "blockseq/errors.hpp"

namespace blockseq::oracle {

namespace {

using Mat = Eigen::MatrixXd;

constexpr double kLog2Pi = 1.8378770664093453;
// Proposal width relative to the exact posterior in the consistency suite.
constexpr double kProposalInflation = 1.4;

Mat to_eigen(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t(r, c);
  return m;
}

Tensor from_eigen(const Mat& m) {
  Tensor t = Tensor::matrix(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t(r, c) = m(r, c);
  return t;
}

double frobenius(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Analytic analytic(const Tensor& phi, const Tensor& B) {
  if (B.rows() != 1 || B.cols() != phi.rows()) throw ShapeError("oracle: B must be 1 x obs matching phi rows");
  const Mat P = to_eigen(phi);
  const Eigen::VectorXd b = to_eigen(B).transpose();
  const Eigen::Index n = P.rows(), m = P.cols();
  const Mat sigma = Mat::Identity(n, n) + P * P.transpose();
  const Eigen::LDLT<Mat> ldlt(sigma);
  const Mat sigma_inv = ldlt.solve(Mat::Identity(n, n));
  const Eigen::VectorXd alpha = sigma_inv * b;

  Analytic out;
  const double logdet = ldlt.vectorD().array().log().sum();
  out.log_marginal = -0.5 * (static_cast<double>(n) * kLog2Pi + logdet + b.dot(alpha));
  out.grad_phi = from_eigen((alpha * alpha.transpose() - sigma_inv) * P);

  const Mat precision = Mat::Identity(m, m) + P.transpose() * P;
  const Mat cov = precision.inverse();
  out.post_cov = from_eigen(cov);
  out.post_mean = from_eigen((cov * P.transpose() * b).transpose());
  return out;
}

Var log_joint(Tape& tape, ParameterStore& store, const Tensor& B, const Tensor& samples) {
  Params p(tape, store);
  Var phi = p("phi");
  const double dims = static_cast<double>(phi.rows() + phi.cols());
  Var z = tape.constant(samples);
  Var resid = ops::sub(ops::matmul(z, phi, /*transpose_b=*/true), tape.constant(B));
  Var quad = ops::add(ops::row_sum(ops::square(resid)), ops::row_sum(ops::square(z)));
  return ops::add_scalar(ops::scale(quad, -0.5), -0.5 * dims * kLog2Pi);
}

Tensor generative_estimate(const Tensor& phi, const Tensor& B, const Tensor& q_mu, const Tensor& q_sigma,
                           std::size_t K, RandomStream& rng) {
  ParameterStore store;
  store.add("phi", phi);
  Tape tape;
  LatentBatch batch;
  batch.samples = sample_latents(q_mu, q_sigma, K, rng);
  batch.log_q = ops::gaussian_log_density(tape.constant(batch.samples), tape.constant(q_mu), tape.constant(q_sigma));
  batch.log_joint = log_joint(tape, store, B, batch.samples);
  compute_weights(batch);
  generative_grad(batch);
  return store.grad("phi");
}

InferenceEstimate inference_estimate(const Tensor& phi, const Tensor& B, const Tensor& q_mu, const Tensor& q_sigma,
                                     std::size_t K, RandomStream& rng) {
  ParameterStore model;
  model.add("phi", phi);
  ParameterStore proposal;
  proposal.add("mu", q_mu);
  proposal.add("sigma", q_sigma);
  Tape tape;
  Params q(tape, proposal);
  LatentBatch batch;
  batch.samples = sample_latents(q_mu, q_sigma, K, rng);
  batch.log_q = ops::gaussian_log_density(tape.constant(batch.samples), q("mu"), q("sigma"));
  batch.log_joint = log_joint(tape, model, B, batch.samples);
  compute_weights(batch);
  inference_grad(batch);
  return InferenceEstimate{proposal.grad("mu"), proposal.grad("sigma"), batch.weights};
}

Problem consistency_problem() {
  RandomStream rng(20260101, "oracle.consistency");
  Problem p;
  p.phi = rng.normal_matrix(4, 2);
  // Observation drawn from the model itself.
  const Tensor b = rng.normal_matrix(1, 2);
  p.B = Tensor::matrix(1, 4);
  for (std::size_t i = 0; i < 4; ++i) p.B[i] = p.phi(i, 0) * b[0] + p.phi(i, 1) * b[1] + rng.normal();
  return p;
}

Problem stationarity_problem() {
  Problem p;
  p.phi = Tensor({4, 2}, std::vector<double>{1.0, 0.5, -1.0, 0.5, 0.5, -1.0, 0.5, 1.0});
  p.B = Tensor::row({0.7, -1.1, 0.3, 1.6});
  return p;
}

ConsistencyReport run_consistency(std::uint64_t base_seed, std::size_t seeds, std::vector<std::size_t> sample_counts,
                                  double tolerance) {
  if (seeds == 0 || sample_counts.empty()) throw ConfigError("consistency suite needs seeds and sample counts");
  const Problem prob = consistency_problem();
  const Analytic exact = analytic(prob.phi, prob.B);
  Tensor q_sigma = Tensor::matrix(1, 2);
  for (std::size_t i = 0; i < 2; ++i) q_sigma[i] = kProposalInflation * std::sqrt(exact.post_cov(i, i));
  const double ref = frobenius(exact.grad_phi);

  ConsistencyReport report;
  report.sample_counts = sample_counts;
  for (std::size_t K : sample_counts) {
    std::vector<double> errors;
    for (std::size_t s = 0; s < seeds; ++s) {
      RandomStream rng(base_seed + s, "oracle.K" + std::to_string(K));
      Tensor est = generative_estimate(prob.phi, prob.B, exact.post_mean, q_sigma, K, rng);
      Tensor diff = est;
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= exact.grad_phi[i];
      errors.push_back(frobenius(diff) / ref);
    }
    report.median_relative_error.push_back(median(std::move(errors)));
  }
  report.monotone = true;
  for (std::size_t i = 1; i < report.median_relative_error.size(); ++i) {
    report.monotone = report.monotone && report.median_relative_error[i] < report.median_relative_error[i - 1];
  }
  report.passed = report.monotone && report.median_relative_error.back() < tolerance;
  return report;
}

StationarityReport run_stationarity(std::uint64_t seed, std::size_t batches, std::size_t K) {
  if (batches < 2 || K == 0) throw ConfigError("stationarity suite needs at least two batches");
  const Problem prob = stationarity_problem();
  const Analytic exact = analytic(prob.phi, prob.B);
  Tensor q_sigma = Tensor::matrix(1, 2);
  for (std::size_t i = 0; i < 2; ++i) q_sigma[i] = std::sqrt(exact.post_cov(i, i));

  RandomStream rng(seed, "oracle.stationarity");
  const std::size_t D = 4;
  std::vector<double> sum(D, 0.0), sum_sq(D, 0.0);
  StationarityReport report;
  report.batches = batches;
  for (std::size_t b = 0; b < batches; ++b) {
    InferenceEstimate est = inference_estimate(prob.phi, prob.B, exact.post_mean, q_sigma, K, rng);
    const double g[D] = {est.grad_mu[0], est.grad_mu[1], est.grad_sigma[0], est.grad_sigma[1]};
    for (std::size_t i = 0; i < D; ++i) {
      sum[i] += g[i];
      sum_sq[i] += g[i] * g[i];
    }
    for (double w : est.weights) {
      report.max_weight_spread = std::max(report.max_weight_spread, std::abs(w - 1.0 / static_cast<double>(K)));
    }
  }
  const double n = static_cast<double>(batches);
  double norm_sq = 0.0, var_total = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    const double mean = sum[i] / n;
    norm_sq += mean * mean;
    var_total += (sum_sq[i] - n * mean * mean) / (n - 1.0);
  }
  report.mean_norm = std::sqrt(norm_sq);
  report.standard_error = std::sqrt(var_total / n);
  report.passed = report.mean_norm < 3.0 * report.standard_error;
  return report;
}

}  // namespace blockseq::oracle
