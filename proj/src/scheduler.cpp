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
#include "sfi/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sfi/error.hpp"
#include "sfi/selector.hpp"

namespace sfi {

std::vector<Pos> SparseState::recent() const {
  std::vector<Pos> out(static_cast<std::size_t>(recent_len));
  std::iota(out.begin(), out.end(), recent_start);
  return out;
}

SupportSet SparseState::support() const {
  SupportSet s;
  s.sink = sink;
  s.selected = selected;
  s.recent_start = recent_start;
  s.recent_len = recent_len;
  return s;
}

namespace {

void slide_recent(SparseState& state, Pos prefix_len, const CacheLimits& limits) {
  const int n_sink = static_cast<int>(state.sink.size());
  const int len = std::clamp<int>(static_cast<int>(prefix_len) - n_sink, 0,
                                  limits.n_recent);
  state.recent_len = len;
  state.recent_start = prefix_len - len + 1;
}

bool in_recent(const SparseState& state, Pos pos) {
  return pos >= state.recent_start &&
         pos < state.recent_start + state.recent_len;
}

}  // namespace

DecodeState init_decode_state(Pos prompt_len, int n_layers, int n_kv_heads,
                              const CacheLimits& limits) {
  limits.validate();
  if (prompt_len < 1)
    fail(ErrorCode::kOutOfRange, "init_decode_state: empty prompt");
  DecodeState state;
  state.prefix_len = prompt_len;
  state.g = 1;
  state.per_layer.resize(static_cast<std::size_t>(n_layers));
  const int n_sink = std::min<int>(limits.n_sink, prompt_len);
  for (int l = 0; l < n_layers; ++l) {
    SparseState& s = state.per_layer[l];
    s.layer = l;
    s.sink.resize(static_cast<std::size_t>(n_sink));
    std::iota(s.sink.begin(), s.sink.end(), Pos{1});
    s.selected.assign(static_cast<std::size_t>(n_kv_heads), {});
    slide_recent(s, prompt_len, limits);
  }
  return state;
}

std::vector<Pos> compute_allowed(const SparseState& state, Pos prefix_len) {
  if (prefix_len < 1)
    fail(ErrorCode::kOutOfRange, "compute_allowed: prefix_len must be >= 1");
  std::vector<Pos> out;
  for (Pos p = 1; p <= prefix_len; ++p) {
    if (std::binary_search(state.sink.begin(), state.sink.end(), p)) continue;
    if (in_recent(state, p)) continue;
    out.push_back(p);
  }
  return out;
}

int next_step_type(const DecodeState& state, const TriggerConfig& trig) {
  if (trig.is_trigger(state.last_token)) return 1;
  // The step being decided counts toward the staleness budget: with the
  // counter at t_max - 1 completed steps, the next one must be slow.
  if (state.steps_since_slow + 1 >= trig.t_max) return 1;
  return 0;
}

void fast_step_update(DecodeState& state, const CacheLimits& limits) {
  state.t += 1;
  state.prefix_len += 1;
  state.steps_since_slow += 1;
  for (SparseState& s : state.per_layer) slide_recent(s, state.prefix_len, limits);
}

void slow_step_update(DecodeState& state,
                      const std::vector<std::vector<std::vector<Pos>>>& selected_per_layer,
                      const CacheLimits& limits) {
  if (selected_per_layer.size() != state.per_layer.size())
    fail(ErrorCode::kSupportMismatch, "slow_step_update: one selected set per layer required");
  for (std::size_t l = 0; l < state.per_layer.size(); ++l) {
    SparseState& s = state.per_layer[l];
    for (const std::vector<Pos>& head_sel : selected_per_layer[l]) {
      if (static_cast<int>(head_sel.size()) > limits.k_budget)
        fail(ErrorCode::kOutOfRange, "slow_step_update: selected set exceeds k_budget");
      for (Pos p : head_sel) {
        if (std::binary_search(s.sink.begin(), s.sink.end(), p) || in_recent(s, p))
          fail(ErrorCode::kOverlapViolation,
               "slow_step_update: selected position " + std::to_string(p) +
                   " overlaps sink or recent");
      }
    }
    s.selected = selected_per_layer[l];
  }
  state.t += 1;
  state.prefix_len += 1;
  state.steps_since_slow = 0;
  for (SparseState& s : state.per_layer) slide_recent(s, state.prefix_len, limits);
}

std::string step_record_to_json(const StepRecord& rec) {
  std::ostringstream os;
  os << "{\"t\":" << rec.t << ",\"type\":\"" << (rec.slow ? "slow" : "fast") << '"';
  switch (rec.cause) {
    case StepCause::kInitial: os << ",\"cause\":\"initial\""; break;
    case StepCause::kTrigger: os << ",\"cause\":\"trigger\""; break;
    case StepCause::kForced: os << ",\"cause\":\"forced\""; break;
    case StepCause::kNone: break;
  }
  os << ",\"support_size\":" << rec.support_size
     << ",\"allowed_size\":" << rec.allowed_size << "}";
  return os.str();
}

namespace {

// Per-head cached statistics over J for one layer.
CacheStats stats_for_layer(const KvStore& store, int layer,
                           const std::vector<Pos>& allowed,
                           const SelectorConfig& cfg) {
  const int heads = store.spec().n_kv_heads;
  std::vector<std::vector<double>> norms(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    norms[h].reserve(allowed.size());
    for (Pos p : allowed) norms[h].push_back(store.key_norm(layer, h, p));
  }
  return make_cache_stats(std::move(norms), allowed, cfg.epsilon);
}

std::vector<std::vector<std::vector<Pos>>> refresh_selected(
    const KvStore& store, const std::vector<LogitWindow>& windows,
    const std::vector<Pos>& allowed, const SelectorConfig& cfg,
    SelectorTrace* trace) {
  const int n_layers = store.spec().n_layers;
  const int heads = store.spec().n_kv_heads;
  std::vector<std::vector<std::vector<Pos>>> selected(
      static_cast<std::size_t>(n_layers));
  for (int l = 0; l < n_layers; ++l) {
    if (allowed.empty()) {
      // Everything is mandatory; nothing to select.
      selected[l].assign(static_cast<std::size_t>(heads), {});
      continue;
    }
    const CacheStats stats = stats_for_layer(store, l, allowed, cfg);
    selected[l] = run_selector(windows[l], stats, cfg, trace);
  }
  return selected;
}

std::uint64_t dense_reads_for(const ModelSpec& spec, Pos prefix_len) {
  return static_cast<std::uint64_t>(spec.n_layers) * spec.n_kv_heads * prefix_len;
}

// Top-k positions of pooled attention per (layer, kv head), ties toward the
// lower position.
std::vector<std::vector<Pos>> topk_sets_from_probs(
    const std::vector<std::vector<std::vector<double>>>& full_attention, int k) {
  std::vector<std::vector<Pos>> out;
  for (const auto& layer_probs : full_attention) {
    for (const auto& probs : layer_probs) {
      const int n = static_cast<int>(probs.size());
      std::vector<int> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      const int kk = std::min(k, n);
      std::partial_sort(order.begin(), order.begin() + kk, order.end(),
                        [&](int a, int b) {
                          if (probs[a] != probs[b]) return probs[a] > probs[b];
                          return a < b;
                        });
      std::vector<Pos> set(static_cast<std::size_t>(kk));
      for (int i = 0; i < kk; ++i) set[i] = order[i] + 1;
      std::sort(set.begin(), set.end());
      out.push_back(std::move(set));
    }
  }
  return out;
}

}  // namespace

RequestResult run_request(const ToyModel& model, const std::vector<TokenId>& prompt,
                          const CacheLimits& limits, const TriggerConfig& trig,
                          const SelectorConfig& cfg, int max_new,
                          const RunOptions& opts) {
  limits.validate();
  trig.validate();
  cfg.validate();
  if (prompt.empty()) fail(ErrorCode::kOutOfRange, "run_request: empty prompt");
  if (max_new < 1) fail(ErrorCode::kOutOfRange, "run_request: max_new must be >= 1");
  const ModelSpec& spec = model.spec();
  const Pos prompt_len = static_cast<Pos>(prompt.size());
  if (prompt_len + max_new > spec.max_positions)
    fail(ErrorCode::kContextOverflow,
         "run_request: prompt plus max_new exceeds max_positions");
  if (limits.n_sink + limits.n_recent > spec.max_positions)
    fail(ErrorCode::kConfig,
         "run_request: n_sink + n_recent exceeds the maximum context length");

  KvStore store(spec);
  DecodeState state =
      init_decode_state(prompt_len, spec.n_layers, spec.n_kv_heads, limits);
  const std::vector<Pos>& sink = state.per_layer[0].sink;

  SelectorTrace trace;
  trace.capture_debug = opts.trace_selector;
  SelectorTrace* trace_ptr = opts.trace_selector ? &trace : nullptr;

  RequestResult result;

  // Prefill: dense pass over the prompt minus its final token (that token is
  // the first decode input), then one selector refresh from the tail window.
  if (prompt_len > 1) {
    std::vector<TokenId> block(prompt.begin(), prompt.end() - 1);
    SparseState prefill_view = state.per_layer[0];
    slide_recent(prefill_view, prompt_len - 1, limits);
    const std::vector<Pos> allowed = compute_allowed(prefill_view, prompt_len - 1);
    const std::vector<LogitWindow> windows = prefill_dense(
        model, block, store, trig.window_prefill, allowed, cfg.pool);
    const auto selected = refresh_selected(store, windows, allowed, cfg, trace_ptr);
    for (std::size_t l = 0; l < state.per_layer.size(); ++l)
      state.per_layer[l].selected = selected[l];
  }
  // No reorganize yet: step 0 is always slow and rebuilds the compact
  // buffers once its own KV entry exists.

  TokenId pending = prompt.back();
  // Snapshot for the segment-freezing check: selected sets must stay
  // bit-identical across every fast step of a segment.
  std::vector<std::vector<std::vector<Pos>>> frozen(
      static_cast<std::size_t>(spec.n_layers));
  for (int l = 0; l < spec.n_layers; ++l) frozen[l] = state.per_layer[l].selected;

  for (int step = 0; step < max_new; ++step) {
    StepRecord rec;
    rec.t = step;
    rec.prefix_len = state.prefix_len;
    StepOutput out;
    if (state.g == 1) {
      rec.slow = true;
      rec.cause = step == 0 ? StepCause::kInitial
                  : trig.is_trigger(state.last_token) ? StepCause::kTrigger
                                                      : StepCause::kForced;
      const std::vector<Pos> allowed =
          compute_allowed(state.per_layer[0], state.prefix_len);
      CaptureSpec cap;
      cap.window = true;
      cap.allowed = allowed;
      cap.pool = cfg.pool;
      out = dense_attention_step(model, pending, store, cap);
      rec.support_size = static_cast<int>(state.prefix_len);
      rec.allowed_size = static_cast<int>(allowed.size());

      const auto selected =
          refresh_selected(store, *out.attn_logits, allowed, cfg, trace_ptr);
      const TokenId token = argmax_token(out.vocab_logits);
      state.last_token = token;
      slow_step_update(state, selected, limits);
      for (int l = 0; l < spec.n_layers; ++l) {
        store.reorganize(l, sink, state.per_layer[l].selected);
        frozen[l] = state.per_layer[l].selected;
      }
      result.tokens.push_back(token);
    } else {
      rec.slow = false;
      std::vector<SupportSet> support(static_cast<std::size_t>(spec.n_layers));
      for (int l = 0; l < spec.n_layers; ++l) {
        if (state.per_layer[l].selected != frozen[l])
          fail(ErrorCode::kOverlapViolation,
               "run_request: selected memory mutated during a fast segment");
        support[l] = state.per_layer[l].support();
      }
      out = sparse_attention_step(model, pending, store, support);
      rec.support_size = support[0].size_for_head(0);
      rec.allowed_size = 0;
      result.fast_retention.push_back(static_cast<double>(rec.support_size) /
                                      static_cast<double>(state.prefix_len));
      const TokenId token = argmax_token(out.vocab_logits);
      state.last_token = token;
      fast_step_update(state, limits);
      result.tokens.push_back(token);
    }
    result.total_flops += out.flop_count;
    result.total_kv_reads += out.kv_read_count;
    result.dense_equiv_reads += dense_reads_for(spec, rec.prefix_len);
    if (opts.collect_logits) result.step_logits.push_back(std::move(out.vocab_logits));
    if (opts.capture_selected) {
      std::vector<std::vector<std::vector<Pos>>> snapshot(
          static_cast<std::size_t>(spec.n_layers));
      for (int l = 0; l < spec.n_layers; ++l) snapshot[l] = state.per_layer[l].selected;
      result.selected_per_step.push_back(std::move(snapshot));
    }
    result.log.push_back(rec);
    pending = result.tokens.back();
    state.g = next_step_type(state, trig);
  }
  if (trace_ptr) result.selector_trace = std::move(trace.debug_lines);
  return result;
}

DenseResult run_dense(const ToyModel& model, const std::vector<TokenId>& prompt,
                      int max_new, int stability_top_k) {
  if (prompt.empty()) fail(ErrorCode::kOutOfRange, "run_dense: empty prompt");
  if (max_new < 1) fail(ErrorCode::kOutOfRange, "run_dense: max_new must be >= 1");
  const ModelSpec& spec = model.spec();
  if (static_cast<Pos>(prompt.size()) + max_new > spec.max_positions)
    fail(ErrorCode::kContextOverflow,
         "run_dense: prompt plus max_new exceeds max_positions");

  KvStore store(spec);
  if (prompt.size() > 1) {
    std::vector<TokenId> block(prompt.begin(), prompt.end() - 1);
    prefill_dense(model, block, store, 1, {}, PoolMode::kMean);
  }
  DenseResult result;
  TokenId pending = prompt.back();
  for (int step = 0; step < max_new; ++step) {
    CaptureSpec cap;
    cap.full_attention = stability_top_k > 0;
    StepOutput out = dense_attention_step(model, pending, store, cap);
    const TokenId token = argmax_token(out.vocab_logits);
    result.tokens.push_back(token);
    result.total_kv_reads += out.kv_read_count;
    result.total_flops += out.flop_count;
    result.step_logits.push_back(std::move(out.vocab_logits));
    if (stability_top_k > 0)
      result.topk_sets.push_back(
          topk_sets_from_probs(out.full_attention, stability_top_k));
    pending = token;
  }
  return result;
}

}  // namespace sfi
