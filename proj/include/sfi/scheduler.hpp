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
#include "sfi/config.hpp"
#include "sfi/distribution.hpp"

namespace sfi {

/// Per-layer managed sparse state: fixed sink anchors, a sliding recent
/// window, and the per-KV-head selected memory refreshed by the selector.
struct SparseState {
  int layer = 0;
  std::vector<Pos> sink;                   // ascending, fixed at init
  Pos recent_start = 1;
  int recent_len = 0;
  std::vector<std::vector<Pos>> selected;  // per KV head, ascending

  std::vector<Pos> recent() const;
  SupportSet support() const;
};

/// Per-request decode cursor. `prefix_len` is the length of the prefix the
/// upcoming step attends over (prompt plus generated tokens, including the
/// step's own input token). `steps_since_slow` counts completed decode steps
/// since the last slow step.
struct DecodeState {
  int t = 0;
  Pos prefix_len = 0;
  int g = 1;  // step-type flag for the upcoming step; g=1 at t=0
  int steps_since_slow = 0;
  TokenId last_token = -1;
  std::vector<SparseState> per_layer;
};

/// Initial state for a prompt of length `prompt_len`, ready for decode step 0.
DecodeState init_decode_state(Pos prompt_len, int n_layers, int n_kv_heads,
                              const CacheLimits& limits);

/// The allowed candidate set J = {1..prefix_len} \ (sink u recent), ascending.
std::vector<Pos> compute_allowed(const SparseState& state, Pos prefix_len);

/// Step-type decision for the upcoming step: slow iff the last generated
/// token is a trigger or the forced-refresh budget is exhausted (the step
/// being decided counts toward the budget, so with t_max=N the N-th
/// consecutive non-trigger step is slow).
int next_step_type(const DecodeState& state, const TriggerConfig& trig);

/// Fast-step transition: selected memory is reused untouched, the recent
/// window slides, counters advance.
void fast_step_update(DecodeState& state, const CacheLimits& limits);

/// Slow-step transition: per-head selected sets are replaced wholesale
/// (previously dropped positions may re-enter), the refresh counter resets,
/// counters advance. Throws kOverlapViolation if any selected set intersects
/// sink or recent at refresh time.
void slow_step_update(DecodeState& state,
                      const std::vector<std::vector<std::vector<Pos>>>& selected_per_layer,
                      const CacheLimits& limits);

enum class StepCause { kInitial, kTrigger, kForced, kNone };

struct StepRecord {
  int t = 0;
  bool slow = false;
  StepCause cause = StepCause::kNone;
  int support_size = 0;  // KV positions one head reads this step
  int allowed_size = 0;  // |J| (slow steps; 0 on fast steps)
  Pos prefix_len = 0;
};

std::string step_record_to_json(const StepRecord& rec);

struct RunOptions {
  bool collect_logits = true;          // per-step vocab logits (drift metrics)
  bool trace_selector = false;         // selector debug JSON lines
  int stability_top_k = 0;             // >0: per-step top-k attention sets
  bool capture_selected = false;       // per-step selected-set snapshots
};

struct RequestResult {
  std::vector<TokenId> tokens;
  std::vector<StepRecord> log;
  std::vector<std::vector<double>> step_logits;
  std::uint64_t total_flops = 0;
  std::uint64_t total_kv_reads = 0;
  std::uint64_t dense_equiv_reads = 0;  // reads a dense run would have done
  std::vector<double> fast_retention;   // per fast step: support / prefix
  std::vector<std::string> selector_trace;
  /// Per step, per layer, per KV head (filled when capture_selected is set).
  std::vector<std::vector<std::vector<std::vector<Pos>>>> selected_per_step;
};

/// Runs the full slow-fast loop for one request: dense prefill with a
/// selector refresh from the tail window, then max_new decode steps, each
/// fast or slow per the trigger policy (step 0 is always slow). Greedy
/// argmax decoding.
RequestResult run_request(const ToyModel& model, const std::vector<TokenId>& prompt,
                          const CacheLimits& limits, const TriggerConfig& trig,
                          const SelectorConfig& cfg, int max_new,
                          const RunOptions& opts = {});

struct DenseResult {
  std::vector<TokenId> tokens;
  std::vector<std::vector<double>> step_logits;
  std::uint64_t total_kv_reads = 0;
  std::uint64_t total_flops = 0;
  /// Per step, per (layer * n_kv_heads + head): top-k attention positions
  /// (filled when stability_top_k > 0).
  std::vector<std::vector<std::vector<Pos>>> topk_sets;
};

/// Dense full-KV greedy decoding baseline over the same engine.
DenseResult run_dense(const ToyModel& model, const std::vector<TokenId>& prompt,
                      int max_new, int stability_top_k = 0);

}  // namespace sfi
