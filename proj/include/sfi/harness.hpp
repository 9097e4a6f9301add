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
#include "sfi/oracle.hpp"
#include "sfi/scheduler.hpp"

namespace sfi {

inline constexpr int kReportSchemaVersion = 1;

enum class RunMode { kSfi, kDense, kBoth };

struct ExperimentSpec {
  RunMode mode = RunMode::kBoth;
  int max_new = 64;
  std::string prompt_file;
  std::string weights_path;  // empty: build a seeded model from `model`
  std::uint64_t model_seed = 1;
  ModelSpec model;
  Config config;
  std::string out_dir;
  bool trace_selector = false;
};

/// Loads an experiment spec from a key=value file. Unknown keys are a hard
/// error. A `config=` key pulls the decoding configuration from a separate
/// config file.
ExperimentSpec load_experiment_file(const std::string& path);

/// One whitespace-separated token-id sequence per line.
std::vector<std::vector<TokenId>> load_prompts(const std::string& path);
void save_prompts(const std::vector<std::vector<TokenId>>& prompts,
                  const std::string& path);

/// Deterministic random prompts for seeded experiments. A share of tokens is
/// drawn from `boundary_tokens` so segment structure exists in the prompt.
std::vector<std::vector<TokenId>> generate_prompts(
    std::uint64_t seed, int count, int min_len, int max_len, int vocab_size,
    const std::vector<TokenId>& boundary_tokens, double boundary_rate);

struct RequestReport {
  int index = 0;
  int prompt_len = 0;
  int new_tokens = 0;
  int slow_steps = 0;
  int fast_steps = 0;
  double slow_fraction = 0.0;
  double retention_mean = 1.0;
  double flop_ratio = 1.0;
  // vs-dense drift metrics; valid in mode=both only
  double token_match_rate = -1.0;
  double logit_cosine_mean = -1.0;
};

struct RunReport {
  int schema_version = kReportSchemaVersion;
  RunMode mode = RunMode::kBoth;
  std::vector<RequestReport> requests;
  double mean_slow_fraction = 0.0;
  double mean_retention = 1.0;
  double mean_flop_ratio = 1.0;
  double mean_token_match_rate = -1.0;
  double mean_logit_cosine = -1.0;
};

/// Runs every request in the spec, writes report.json, steps.jsonl and
/// summary.csv into spec.out_dir (when set), and returns the report.
/// Outputs contain no wall-clock fields and are byte-stable per seed.
RunReport run_experiment(const ExperimentSpec& spec);

std::string report_to_json(const RunReport& report);
std::string report_to_csv(const RunReport& report);
std::string oracle_reports_to_json(const std::vector<oracle::OracleReport>& reports);

// ---------------------------------------------------------------------------
// Support-stability measurement

struct StabilityReport {
  double within_mean = 0.0;    // mean Jaccard over within-segment step pairs
  double boundary_mean = 0.0;  // mean Jaccard over boundary-crossing pairs
  int within_pairs = 0;
  int boundary_pairs = 0;
};

/// Pure core: consecutive-step Jaccard overlap of per-head top-k sets,
/// partitioned by whether the token generated between the two steps is a
/// trigger. `sets[t][slot]` holds the top-k positions of one (layer, head)
/// slot at step t; `tokens[t]` is the token generated at step t.
StabilityReport stability_from_sets(
    const std::vector<std::vector<std::vector<Pos>>>& sets,
    const std::vector<TokenId>& tokens, const TriggerConfig& trig);

/// Dense-decodes `prompt` and measures within-segment vs boundary-crossing
/// support overlap of the per-KV-head top-k attention positions.
StabilityReport measure_support_stability(const ToyModel& model,
                                          const std::vector<TokenId>& prompt,
                                          int top_k, const TriggerConfig& trig,
                                          int max_new);

/// Seeded toy model with structural segment dynamics: non-boundary token
/// embeddings are scaled by `base_scale` (quiet tokens, so the hidden state
/// is dominated by the slowly-drifting attention context within a segment),
/// boundary embeddings by `embed_scale` (processing one jolts the state),
/// and boundary output logits get a constant `logit_bias` boost so untrained
/// greedy decoding emits them at all.
ToyModel make_segmented_model(const ModelSpec& spec, std::uint64_t seed,
                              const std::vector<TokenId>& boundary_tokens,
                              double embed_scale, double logit_bias,
                              double base_scale = 0.15);

// ---------------------------------------------------------------------------
// Cost model and benchmark

/// Predicted dense/mixed attention-read ratio when a `slow_fraction` share
/// of steps reads the full prefix of length L and the rest read `support`.
double flop_model(double prefix_len, double support, double slow_fraction);

struct BenchRow {
  int length = 0;
  double retention = 0.0;
  int support = 0;
  int repeats = 0;
  double dense_ms_mean = 0.0;
  double dense_ms_std = 0.0;
  double dense_ms_median = 0.0;
  double sparse_ms_mean = 0.0;
  double sparse_ms_std = 0.0;
  double sparse_ms_median = 0.0;
  double speedup = 0.0;  // dense median / sparse median (outlier-resistant)
};

/// Wall-time of a single-step sparse vs dense attention kernel at each
/// (length, retention) on this host. One warm-up repeat is discarded;
/// reorganization happens outside the timed region. Monotonic clock.
std::vector<BenchRow> bench_attention(const std::vector<int>& lengths,
                                      const std::vector<double>& retentions,
                                      int repeats, std::uint64_t seed);

std::string bench_to_csv(const std::vector<BenchRow>& rows);

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b);

}  // namespace sfi
