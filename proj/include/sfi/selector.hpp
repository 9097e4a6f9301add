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

#include "sfi/config.hpp"
#include "sfi/distribution.hpp"

namespace sfi {

/// Masked attention logits recorded at a slow step: for each KV head, a
/// W x |J| row-major matrix. Row tau holds the logits of the tau-th query
/// in the observation window, restricted to the allowed set J. Entries a
/// query cannot attend to causally are set to kMaskedLogit.
struct LogitWindow {
  int width = 0;                            // W
  std::vector<Pos> allowed;                 // J, ascending
  std::vector<std::vector<double>> values;  // per KV head, size W * |J|

  int heads() const { return static_cast<int>(values.size()); }
  double at(int head, int row, int col) const {
    return values[head][static_cast<std::size_t>(row) * allowed.size() + col];
  }
};

inline constexpr double kMaskedLogit = -1e30;

/// Cached statistics over the allowed set: per-head key norms plus the
/// normalized position u(j) of every allowed position.
struct CacheStats {
  std::vector<std::vector<double>> key_norms;  // per KV head, size |J|
  Pos j_min = 0;
  Pos j_max = 0;
  std::vector<double> normalized_pos;  // u(j) in [0, 1], size |J|
};

/// Builds CacheStats from per-head key norms over `allowed`.
CacheStats make_cache_stats(std::vector<std::vector<double>> key_norms,
                            const std::vector<Pos>& allowed, double epsilon);

/// Result of the reverse-KL fusion of evidence and prior.
struct FusedScore {
  ScoreDistribution evidence;  // f
  ScoreDistribution prior;     // r
  double lambda_star = 0.0;    // chosen interpolation weight in [0, lambda_clip]
  ScoreDistribution fused;     // s = (1 - lambda*) f + lambda* r
};

/// Log-score stages of the refinement pipeline, per head.
struct RefinedScores {
  std::vector<std::vector<double>> base;         // z = log(s + eps)
  std::vector<std::vector<double>> after_nms;    // soft-NMS applied
  std::vector<std::vector<double>> after_cross;  // cross-head applied
};

/// Optional instrumentation for run_selector: elementary-operation counts
/// (top-k excluded), the intermediate score stages, and a JSON-lines debug
/// dump (stage, head, support, scores) for oracle cross-checks.
struct SelectorTrace {
  std::uint64_t elementary_ops = 0;
  bool capture_stages = false;
  bool capture_debug = false;
  RefinedScores stages;
  std::vector<FusedScore> fusion;          // per head
  std::vector<std::string> debug_lines;    // JSON lines
};

/// Converts a logit window into the per-head evidence distribution f:
/// per-row softmax over J, power-mean aggregation with exponent alpha,
/// inverse power map, and L1 normalization. With W=1 this returns the
/// softmax row itself.
std::vector<ScoreDistribution> evidence_from_window(const LogitWindow& w,
                                                    const SelectorConfig& cfg,
                                                    SelectorTrace* trace = nullptr);

/// Builds the per-head cache-aware prior r from key norms and positions:
/// r ~ (|k|+eps)^(-gamma) * exp(-beta u^p) * (1-u+eps)^eta, normalized on J.
std::vector<ScoreDistribution> prior_from_stats(const CacheStats& stats,
                                                const std::vector<Pos>& allowed,
                                                const SelectorConfig& cfg,
                                                SelectorTrace* trace = nullptr);

/// Reverse-KL fusion with the closed-form interpolation weight
/// lambda* = clip((|f|^2 - f.r) / (|f|^2 - 2 f.r + |r|^2), 0, lambda_clip).
/// A degenerate denominator (|f - r|^2 < eps) yields lambda* = 0.
FusedScore fuse(const ScoreDistribution& f, const ScoreDistribution& r,
                const SelectorConfig& cfg, SelectorTrace* trace = nullptr);

/// Gap-based decay toward the local maximum within a symmetric rank-order
/// neighborhood of radius nms_radius. Scores never increase; strict local
/// maxima are returned bit-exactly.
std::vector<double> refine_soft_nms(const std::vector<double>& z,
                                    const SelectorConfig& cfg,
                                    SelectorTrace* trace = nullptr);

/// Soft competition across heads at each position: responsibilities via a
/// head-wise softmax at temperature T, then z += alpha_cross * log(max(r, eps)).
/// The adjustment is always <= 0 and vanishes for H=1 or alpha_cross=0.
std::vector<std::vector<double>> refine_cross_head(
    const std::vector<std::vector<double>>& z, const SelectorConfig& cfg,
    SelectorTrace* trace = nullptr);

/// The k highest-scoring positions per head. Ties break toward the lower
/// absolute position. Returns all of J when |J| <= k. Output ascending.
std::vector<Pos> select_top_k(const std::vector<double>& scores,
                              const std::vector<Pos>& allowed, int k);

/// Full selector pipeline: evidence, prior, closed-form fusion,
/// z = log(s + eps), soft-NMS, cross-head exclusivity, per-head top-k with
/// budget cfg.k_budget. Deterministic given inputs and config.
std::vector<std::vector<Pos>> run_selector(const LogitWindow& w,
                                           const CacheStats& stats,
                                           const SelectorConfig& cfg,
                                           SelectorTrace* trace = nullptr);

}  // namespace sfi
