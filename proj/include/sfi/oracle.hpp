/*
 * Copyright 2026 The SFI Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfi/attention.hpp"
#include "sfi/distribution.hpp"

// Brute-force reference implementations for every closed form and
// discretization rule, plus the randomized checks that compare them against
// the production path. The reference side shares no arithmetic with the
// modules it verifies; none of this code runs on the decode hot path.
namespace sfi::oracle {

/// (1 - lambda) KL(f||s) + lambda KL(r||s) with 0 log 0 := 0. Returns +inf
/// when s is zero somewhere f or r carries mass.
double kl_objective(const ScoreDistribution& f, const ScoreDistribution& r,
                    const ScoreDistribution& s, double lambda);

/// Argmin over the grid {0, step, 2 step, ..., lambda_clip} of
/// |(1-lambda) f + lambda r|^2, first minimizer on ties.
double lambda_grid_min(const ScoreDistribution& f, const ScoreDistribution& r,
                       double lambda_clip, double step);

/// s(j) proportional to f(j)^(1-lambda) r(j)^lambda, normalized. The
/// forward-KL alternative, kept for analysis only.
ScoreDistribution geometric_mixture(const ScoreDistribution& f,
                                    const ScoreDistribution& r, double lambda);

/// Enumerates all k-subsets of small score vectors and returns the subset
/// with maximal total score; ties resolve to the lexicographically smallest
/// position tuple. Output ascending.
std::vector<Pos> exhaustive_top_k(const std::vector<double>& scores,
                                  const std::vector<Pos>& positions, int k);

/// Plain quadratic attention over a prompt with explicit masking of the
/// final query row: per layer and KV head, only positions in
/// masks[layer][head] are attendable (earlier rows stay causal-dense).
/// K/V are quantized to 32-bit as the storage contract requires; everything
/// else runs in 64-bit scalar loops. When `capture_allowed` is non-empty the
/// result also carries the final row's raw logits over that set, pooled
/// across the query heads of each KV head.
struct MaskedAttentionResult {
  std::vector<double> vocab_logits;
  std::vector<std::vector<double>> attn_context;  // per layer, Hq * head_dim
  // per layer, per KV head, |capture_allowed| pooled raw logits
  std::vector<std::vector<std::vector<double>>> window_logits;
};
MaskedAttentionResult masked_attention_reference(
    const ToyModel& model, const std::vector<TokenId>& prompt,
    const std::vector<std::vector<std::vector<Pos>>>& masks,
    const std::vector<Pos>& capture_allowed = {},
    PoolMode pool = PoolMode::kMean);

struct OracleReport {
  std::string name;
  int trials = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  int violations = 0;
  std::string worst_case;  // serialized inputs of the worst trial

  bool passed() const { return violations == 0; }
};

// Randomized cross-checks of the production implementations against the
// references above.
OracleReport check_lambda_closed_form(std::uint64_t seed, int trials,
                                      double tolerance, double grid_step);
OracleReport check_fusion_objective(std::uint64_t seed, int trials,
                                    double grid_step);
OracleReport check_kl_minimizer(std::uint64_t seed, int trials, int perturbations);
OracleReport check_amgm_dominance(std::uint64_t seed, int trials);
OracleReport check_w1_exactness(std::uint64_t seed, int trials, double tolerance);
OracleReport check_top_k(std::uint64_t seed, int trials);
OracleReport check_attention_equivalence(std::uint64_t seed, int trials,
                                         double tolerance);

/// The full suite with release parameters.
std::vector<OracleReport> run_all(std::uint64_t seed);

// Shared random-distribution helpers (gamma draws over random supports).
ScoreDistribution random_distribution(std::uint64_t& state, int size,
                                      double shape);
std::vector<Pos> random_support(std::uint64_t& state, int size);

}  // namespace sfi::oracle
