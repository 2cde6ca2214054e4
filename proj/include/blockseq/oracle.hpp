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

// Linear-Gaussian reference model used to validate the SNIS estimators:
//   p(b) = N(0, I),  p(B | b) = N(Phi b, I).
// The marginal, its gradient in Phi and the posterior are all closed form.

#pragma once

#include <cstdint>
#include <vector>

#include "blockseq/block_model.hpp"
#include "blockseq/random.hpp"
#include "blockseq/tensor.hpp"

namespace blockseq::oracle {

struct Analytic {
  double log_marginal = 0.0;
  Tensor grad_phi;   ///< same shape as Phi
  Tensor post_mean;  ///< 1 x latent
  Tensor post_cov;   ///< latent x latent
};

/// phi is obs x latent, B is 1 x obs.
Analytic analytic(const Tensor& phi, const Tensor& B);

/// K x 1 closed-form log p(B, b) with phi bound as a trainable parameter "phi" of `store`.
Var log_joint(Tape& tape, ParameterStore& store, const Tensor& B, const Tensor& samples);

/// Self-normalised estimate of grad_Phi log p(B) using proposal N(q_mu, diag(q_sigma^2)).
Tensor generative_estimate(const Tensor& phi, const Tensor& B, const Tensor& q_mu, const Tensor& q_sigma,
                           std::size_t K, RandomStream& rng);

struct InferenceEstimate {
  Tensor grad_mu;     ///< -sum w grad_mu log q
  Tensor grad_sigma;  ///< -sum w grad_sigma log q
  std::vector<double> weights;
};

/// Self-normalised estimate of the KL descent direction in the proposal's own (mu, sigma).
InferenceEstimate inference_estimate(const Tensor& phi, const Tensor& B, const Tensor& q_mu, const Tensor& q_sigma,
                                     std::size_t K, RandomStream& rng);

struct ConsistencyReport {
  std::vector<std::size_t> sample_counts;
  std::vector<double> median_relative_error;
  bool monotone = false;
  bool passed = false;
};

/// Median relative error over `seeds` sampling seeds at each sample count.
ConsistencyReport run_consistency(std::uint64_t base_seed, std::size_t seeds = 20,
                                  std::vector<std::size_t> sample_counts = {10, 100, 1000, 10000},
                                  double tolerance = 0.02);

struct StationarityReport {
  std::size_t batches = 0;
  double mean_norm = 0.0;
  double standard_error = 0.0;
  double max_weight_spread = 0.0;  ///< largest |w_j - 1/K| seen
  bool passed = false;
};

/// Mean inference-gradient estimate over independent batches with q equal to the exact posterior.
StationarityReport run_stationarity(std::uint64_t seed, std::size_t batches = 10000, std::size_t K = 10);

/// The fixed problem instances shared by the suites.
struct Problem {
  Tensor phi;
  Tensor B;
};
Problem consistency_problem();
/// Orthogonal columns make the posterior covariance diagonal.
Problem stationarity_problem();

}  // namespace blockseq::oracle
