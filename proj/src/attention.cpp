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
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "sfi/attention.hpp"
#include "sfi/error.hpp"

namespace sfi {

namespace {

constexpr double kNormEps = 1e-6;

Eigen::VectorXd rmsnorm(const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
  const double ms = x.squaredNorm() / static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + kNormEps);
  return (x.array() * inv * g.array()).matrix();
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Rotates pairs (2i, 2i+1) of each head slice in place. Angles use the
// 0-based position so position 1 is the identity rotation.
void apply_rope(double* vec, int n_heads, int d, Pos pos, double base) {
  const double p = static_cast<double>(pos - 1);
  for (int h = 0; h < n_heads; ++h) {
    double* head = vec + static_cast<std::ptrdiff_t>(h) * d;
    for (int i = 0; i < d / 2; ++i) {
      const double theta = p * std::pow(base, -2.0 * i / d);
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      const double a = head[2 * i];
      const double b = head[2 * i + 1];
      head[2 * i] = a * c - b * s;
      head[2 * i + 1] = a * s + b * c;
    }
  }
}

// One contiguous run of KV entries for a single KV head. `stride` is the
// float distance between consecutive entries of this head.
struct Seg {
  const float* k = nullptr;
  const float* v = nullptr;
  int count = 0;
  int stride = 0;
  bool traced = false;  // compact-segment read instrumentation
};

struct HeadSegments {
  Seg segs[2];
  int n_segs = 0;
  int total = 0;
};

struct AttendResult {
  double max_logit = 0.0;
  double exp_sum = 0.0;
};

// Two-pass softmax attention for one query head over the given segments.
// Raw logits land in `logits` (entry order); the context accumulates into
// `out` (d doubles). All accumulation is 64-bit.
AttendResult attend(const double* q, const HeadSegments& hs, int d,
                    double inv_sqrt_d, std::vector<double>& logits,
                    double* out, const KvStore* store, int layer, int head) {
  logits.resize(static_cast<std::size_t>(hs.total));
  double max_logit = -std::numeric_limits<double>::infinity();
  std::size_t idx = 0;
  for (int s = 0; s < hs.n_segs; ++s) {
    const Seg& seg = hs.segs[s];
    for (int i = 0; i < seg.count; ++i) {
      const float* kp = seg.k + static_cast<std::ptrdiff_t>(i) * seg.stride;
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += q[c] * static_cast<double>(kp[c]);
      const double logit = acc * inv_sqrt_d;
      logits[idx++] = logit;
      max_logit = std::max(max_logit, logit);
      if (seg.traced) store->record_compact_access(layer, head, i);
    }
  }
  double exp_sum = 0.0;
  std::fill(out, out + d, 0.0);
  idx = 0;
  for (int s = 0; s < hs.n_segs; ++s) {
    const Seg& seg = hs.segs[s];
    for (int i = 0; i < seg.count; ++i) {
      const double w = std::exp(logits[idx++] - max_logit);
      exp_sum += w;
      const float* vp = seg.v + static_cast<std::ptrdiff_t>(i) * seg.stride;
      for (int c = 0; c < d; ++c) out[c] += w * static_cast<double>(vp[c]);
    }
  }
  const double inv = 1.0 / exp_sum;
  for (int c = 0; c < d; ++c) out[c] *= inv;
  return {max_logit, exp_sum};
}

}  // namespace

// ---------------------------------------------------------------------------
// KvStore

KvStore::KvStore(const ModelSpec& spec) : spec_(spec), layers_(spec.n_layers) {
  spec.validate();
  for (auto& layer : layers_) {
    layer.key_norms.resize(spec.n_kv_heads);
    layer.compact.resize(spec.n_kv_heads);
  }
}

void KvStore::begin_token() {
  if (pending_layers_ != -1)
    fail(ErrorCode::kOutOfRange, "KvStore: token already open");
  if (len_ >= spec_.max_positions)
    fail(ErrorCode::kContextOverflow, "KvStore: max_positions exceeded");
  pending_layers_ = 0;
}

void KvStore::append_layer(int layer, const float* k, const float* v) {
  if (pending_layers_ != layer)
    fail(ErrorCode::kOutOfRange, "KvStore: layers must be appended in order");
  Layer& l = layers_[layer];
  const int hd = spec_.n_kv_heads * spec_.head_dim;
  l.k_paged.insert(l.k_paged.end(), k, k + hd);
  l.v_paged.insert(l.v_paged.end(), v, v + hd);
  for (int h = 0; h < spec_.n_kv_heads; ++h) {
    double acc = 0.0;
    for (int c = 0; c < spec_.head_dim; ++c) {
      const double x = static_cast<double>(k[h * spec_.head_dim + c]);
      acc += x * x;
    }
    l.key_norms[h].push_back(std::sqrt(acc));
  }
  ++pending_layers_;
}

void KvStore::end_token() {
  if (pending_layers_ != spec_.n_layers)
    fail(ErrorCode::kOutOfRange, "KvStore: token closed before all layers were appended");
  pending_layers_ = -1;
  ++len_;
}

const float* KvStore::key_at(int layer, Pos pos) const {
  const Layer& l = layers_[layer];
  const int hd = spec_.n_kv_heads * spec_.head_dim;
  const std::size_t off = static_cast<std::size_t>(pos - 1) * hd;
  if (pos < 1 || off + hd > l.k_paged.size())
    fail(ErrorCode::kOutOfRange, "KvStore: position " + std::to_string(pos) + " not written");
  return l.k_paged.data() + off;
}

const float* KvStore::value_at(int layer, Pos pos) const {
  const Layer& l = layers_[layer];
  const int hd = spec_.n_kv_heads * spec_.head_dim;
  const std::size_t off = static_cast<std::size_t>(pos - 1) * hd;
  if (pos < 1 || off + hd > l.v_paged.size())
    fail(ErrorCode::kOutOfRange, "KvStore: position " + std::to_string(pos) + " not written");
  return l.v_paged.data() + off;
}

double KvStore::key_norm(int layer, int head, Pos pos) const {
  const auto& norms = layers_[layer].key_norms[head];
  if (pos < 1 || static_cast<std::size_t>(pos) > norms.size())
    fail(ErrorCode::kOutOfRange, "KvStore: no key norm for position " + std::to_string(pos));
  return norms[static_cast<std::size_t>(pos - 1)];
}

void KvStore::reorganize(int layer, const std::vector<Pos>& sink,
                         const std::vector<std::vector<Pos>>& selected) {
  if (static_cast<int>(selected.size()) != spec_.n_kv_heads)
    fail(ErrorCode::kSupportMismatch, "reorganize: selected sets must cover every KV head");
  Layer& l = layers_[layer];
  const int d = spec_.head_dim;
  const int hd = spec_.n_kv_heads * d;
  for (int h = 0; h < spec_.n_kv_heads; ++h) {
    std::vector<Pos> merged;
    merged.reserve(sink.size() + selected[h].size());
    std::merge(sink.begin(), sink.end(), selected[h].begin(), selected[h].end(),
               std::back_inserter(merged));
    for (std::size_t i = 0; i + 1 < merged.size(); ++i)
      if (merged[i] >= merged[i + 1])
        fail(ErrorCode::kOverlapViolation,
             "reorganize: sink and selected sets overlap or are unsorted");
    CompactSegment& seg = l.compact[h];
    seg.positions = merged;
    seg.k.resize(merged.size() * d);
    seg.v.resize(merged.size() * d);
    for (std::size_t i = 0; i < merged.size(); ++i) {
      const Pos pos = merged[i];
      if (pos < 1 || pos > len_)
        fail(ErrorCode::kOutOfRange,
             "reorganize: position " + std::to_string(pos) + " not written");
      const std::size_t src = static_cast<std::size_t>(pos - 1) * hd + h * d;
      std::memcpy(seg.k.data() + i * d, l.k_paged.data() + src, sizeof(float) * d);
      std::memcpy(seg.v.data() + i * d, l.v_paged.data() + src, sizeof(float) * d);
    }
  }
  l.compact_valid = true;
}

bool KvStore::compact_matches(int layer, const std::vector<Pos>& sink,
                              const std::vector<std::vector<Pos>>& selected) const {
  const Layer& l = layers_[layer];
  if (!l.compact_valid) return false;
  if (static_cast<int>(selected.size()) != spec_.n_kv_heads) return false;
  for (int h = 0; h < spec_.n_kv_heads; ++h) {
    std::vector<Pos> merged;
    std::merge(sink.begin(), sink.end(), selected[h].begin(), selected[h].end(),
               std::back_inserter(merged));
    if (merged != l.compact[h].positions) return false;
  }
  return true;
}

const KvStore::CompactSegment& KvStore::compact(int layer, int head) const {
  return layers_[layer].compact[head];
}

std::pair<Pos, int> KvStore::recent_tail(int n_recent) const {
  const int len = std::min<int>(n_recent, len_);
  return {len_ - len + 1, len};
}

void KvStore::record_compact_access(int layer, int head, int slot) const {
  if (trace_on_) trace_.push_back({layer, head, slot});
}

// ---------------------------------------------------------------------------
// Steps

TokenId argmax_token(const std::vector<double>& logits) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

namespace {

HeadSegments dense_segments(const KvStore& store, int layer, int head, Pos len) {
  const ModelSpec& spec = store.spec();
  const int d = spec.head_dim;
  const int hd = spec.n_kv_heads * d;
  HeadSegments hs;
  hs.n_segs = 1;
  hs.segs[0] = {store.key_at(layer, 1) + head * d, store.value_at(layer, 1) + head * d,
                static_cast<int>(len), hd, false};
  hs.total = static_cast<int>(len);
  return hs;
}

HeadSegments sparse_segments(const KvStore& store, int layer, int head,
                             const SupportSet& support) {
  const ModelSpec& spec = store.spec();
  const int d = spec.head_dim;
  const int hd = spec.n_kv_heads * d;
  const KvStore::CompactSegment& seg = store.compact(layer, head);
  HeadSegments hs;
  if (!seg.positions.empty()) {
    hs.segs[hs.n_segs++] = {seg.k.data(), seg.v.data(),
                            static_cast<int>(seg.positions.size()), d, true};
    hs.total += static_cast<int>(seg.positions.size());
  }
  if (support.recent_len > 0) {
    hs.segs[hs.n_segs++] = {store.key_at(layer, support.recent_start) + head * d,
                            store.value_at(layer, support.recent_start) + head * d,
                            support.recent_len, hd, false};
    hs.total += support.recent_len;
  }
  if (hs.total == 0)
    fail(ErrorCode::kEmptySupport, "sparse_attention_step: empty support");
  return hs;
}

struct StepMode {
  const CaptureSpec* capture = nullptr;          // dense when set or support null
  const std::vector<SupportSet>* support = nullptr;  // sparse when set
  bool compute_logits = true;
  // Prefill rows capture against a frozen J that can extend past the row's
  // own position; such entries are masked instead of rejected.
  bool allow_forward_mask = false;
};

StepOutput run_step(const ToyModel& model, TokenId token, KvStore& store,
                    const StepMode& mode) {
  const ModelSpec& spec = model.spec();
  if (token < 0 || token >= spec.vocab_size)
    fail(ErrorCode::kOutOfRange, "step: token id out of range");
  const bool sparse = mode.support != nullptr;
  const CaptureSpec* cap = mode.capture;
  const int d = spec.head_dim;
  const int hq = spec.n_query_heads;
  const int hk = spec.n_kv_heads;
  const int group = spec.group_size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  store.begin_token();
  const Pos pos = store.size() + 1;

  if (cap != nullptr && cap->window) {
    for (Pos j : cap->allowed)
      if (j < 1 || (j > pos && !mode.allow_forward_mask))
        fail(ErrorCode::kOutOfRange, "dense_attention_step: allowed position " +
                                         std::to_string(j) + " out of range");
  }
  if (sparse) {
    if (static_cast<int>(mode.support->size()) != spec.n_layers)
      fail(ErrorCode::kSupportMismatch, "sparse_attention_step: one support per layer required");
    for (const SupportSet& s : *mode.support) {
      if (s.recent_len > 0 && s.recent_start + s.recent_len - 1 != pos)
        fail(ErrorCode::kOutOfRange,
             "sparse_attention_step: recent tail must end at the current position");
      if (s.recent_len == 0 &&
          !std::binary_search(s.sink.begin(), s.sink.end(), pos))
        fail(ErrorCode::kOutOfRange,
             "sparse_attention_step: current position not in support");
    }
  }

  StepOutput out;
  if (cap != nullptr && cap->window) out.attn_logits.emplace();

  Eigen::VectorXd h = model.embedding().row(token).transpose();
  std::vector<double> logits_scratch;
  std::vector<double> context(static_cast<std::size_t>(hq) * d);

  for (int l = 0; l < spec.n_layers; ++l) {
    const ToyModel::LayerWeights& lw = model.layer(l);
    const Eigen::VectorXd a = rmsnorm(h, lw.ln1);
    Eigen::VectorXd q = lw.wq * a;
    Eigen::VectorXd k = lw.wk * a;
    const Eigen::VectorXd v = lw.wv * a;
    apply_rope(q.data(), hq, d, pos, spec.rope_base);
    apply_rope(k.data(), hk, d, pos, spec.rope_base);

    std::vector<float> kf(static_cast<std::size_t>(hk) * d);
    std::vector<float> vf(static_cast<std::size_t>(hk) * d);
    for (int i = 0; i < hk * d; ++i) {
      kf[i] = static_cast<float>(k(i));
      vf[i] = static_cast<float>(v(i));
    }
    store.append_layer(l, kf.data(), vf.data());

    if (sparse && !store.compact_matches(l, (*mode.support)[l].sink,
                                         (*mode.support)[l].selected))
      fail(ErrorCode::kStaleCompact,
           "sparse_attention_step: compact buffer does not match the requested support");

    LogitWindow window;
    if (cap != nullptr && cap->window) {
      window.width = 1;
      window.allowed = cap->allowed;
      window.values.assign(hk, std::vector<double>(cap->allowed.size(),
                                                   cap->pool == PoolMode::kMax
                                                       ? kMaskedLogit
                                                       : 0.0));
    }
    std::vector<std::vector<double>> full_probs;
    if (cap != nullptr && cap->full_attention)
      full_probs.assign(hk, std::vector<double>(static_cast<std::size_t>(pos), 0.0));

    for (int head = 0; head < hk; ++head) {
      const HeadSegments hs = sparse
                                  ? sparse_segments(store, l, head, (*mode.support)[l])
                                  : dense_segments(store, l, head, pos);
      out.kv_read_count += static_cast<std::uint64_t>(hs.total);
      for (int g = 0; g < group; ++g) {
        const int qh = head * group + g;
        const AttendResult ar =
            attend(q.data() + static_cast<std::ptrdiff_t>(qh) * d, hs, d,
                   inv_sqrt_d, logits_scratch,
                   context.data() + static_cast<std::ptrdiff_t>(qh) * d, &store,
                   l, head);
        out.flop_count += 2ull * static_cast<std::uint64_t>(hs.total) * d;

        if (cap != nullptr && cap->window && !cap->allowed.empty()) {
          // Dense path: logits_scratch is indexed by absolute position.
          std::vector<double>& row = window.values[head];
          for (std::size_t c = 0; c < cap->allowed.size(); ++c) {
            const Pos j = cap->allowed[c];
            if (j > pos) {
              row[c] = kMaskedLogit;
              continue;
            }
            const double logit = logits_scratch[static_cast<std::size_t>(j - 1)];
            if (cap->pool == PoolMode::kMean)
              row[c] += logit / group;
            else
              row[c] = std::max(row[c], logit);
          }
        }
        if (cap != nullptr && cap->full_attention) {
          std::vector<double>& probs = full_probs[head];
          for (std::size_t i = 0; i < logits_scratch.size(); ++i)
            probs[i] += std::exp(logits_scratch[i] - ar.max_logit) / ar.exp_sum / group;
        }
      }
    }
    if (cap != nullptr && cap->window) out.attn_logits->push_back(std::move(window));
    if (cap != nullptr && cap->full_attention)
      out.full_attention.push_back(std::move(full_probs));
    if (cap != nullptr && cap->context) out.attn_context.push_back(context);

    Eigen::Map<const Eigen::VectorXd> ctx(context.data(), hq * d);
    h += lw.wo * ctx;
    const Eigen::VectorXd b = rmsnorm(h, lw.ln2);
    const Eigen::VectorXd gate = lw.w_gate * b;
    const Eigen::VectorXd up = lw.w_up * b;
    Eigen::VectorXd act(gate.size());
    for (int i = 0; i < gate.size(); ++i) act(i) = silu(gate(i)) * up(i);
    h += lw.w_down * act;
  }
  store.end_token();

  if (mode.compute_logits) {
    const Eigen::VectorXd hf = rmsnorm(h, model.final_norm());
    const Eigen::VectorXd logits = model.lm_head() * hf + model.lm_bias();
    out.vocab_logits.assign(logits.data(), logits.data() + logits.size());
    if (cap != nullptr && cap->final_hidden)
      out.final_hidden.assign(hf.data(), hf.data() + hf.size());
  }
  return out;
}

}  // namespace

StepOutput dense_attention_step(const ToyModel& model, TokenId token,
                                KvStore& store, const CaptureSpec& capture) {
  StepMode mode;
  mode.capture = &capture;
  return run_step(model, token, store, mode);
}

StepOutput sparse_attention_step(const ToyModel& model, TokenId token,
                                 KvStore& store,
                                 const std::vector<SupportSet>& support) {
  StepMode mode;
  mode.support = &support;
  return run_step(model, token, store, mode);
}

std::vector<LogitWindow> prefill_dense(const ToyModel& model,
                                       const std::vector<TokenId>& tokens,
                                       KvStore& store, int window_width,
                                       const std::vector<Pos>& allowed,
                                       PoolMode pool) {
  const ModelSpec& spec = model.spec();
  const int n = static_cast<int>(tokens.size());
  int rows = std::min(window_width, n);
  // a usable query row must causally reach at least one allowed position
  if (!allowed.empty()) rows = std::min(rows, n - allowed.front() + 1);
  rows = std::max(rows, 0);
  std::vector<LogitWindow> windows(spec.n_layers);
  for (auto& w : windows) {
    w.width = rows;
    w.allowed = allowed;
    w.values.assign(spec.n_kv_heads,
                    std::vector<double>(static_cast<std::size_t>(rows) * allowed.size()));
  }
  for (int i = 0; i < n; ++i) {
    const bool tail = i >= n - rows;
    CaptureSpec cap;
    cap.window = tail;
    cap.allowed = allowed;
    cap.pool = pool;
    StepMode mode;
    mode.capture = tail ? &cap : nullptr;
    mode.compute_logits = false;
    mode.allow_forward_mask = true;
    StepOutput out = run_step(model, tokens[i], store, mode);
    if (tail && !allowed.empty()) {
      const int row = i - (n - rows);
      for (int l = 0; l < spec.n_layers; ++l)
        for (int h = 0; h < spec.n_kv_heads; ++h)
          std::copy((*out.attn_logits)[l].values[h].begin(),
                    (*out.attn_logits)[l].values[h].end(),
                    windows[l].values[h].begin() +
                        static_cast<std::size_t>(row) * allowed.size());
    }
  }
  return windows;
}

std::vector<double> attention_kernel_dense(const KvStore& store, int layer,
                                           const std::vector<double>& q,
                                           KernelStats* stats) {
  const ModelSpec& spec = store.spec();
  const int d = spec.head_dim;
  const int group = spec.group_size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> context(q.size());
  std::vector<double> scratch;
  for (int head = 0; head < spec.n_kv_heads; ++head) {
    const HeadSegments hs = dense_segments(store, layer, head, store.size());
    if (stats) stats->reads += static_cast<std::uint64_t>(hs.total);
    for (int g = 0; g < group; ++g) {
      const int qh = head * group + g;
      attend(q.data() + static_cast<std::ptrdiff_t>(qh) * d, hs, d, inv_sqrt_d,
             scratch, context.data() + static_cast<std::ptrdiff_t>(qh) * d,
             &store, layer, head);
      if (stats) stats->flops += 2ull * static_cast<std::uint64_t>(hs.total) * d;
    }
  }
  return context;
}

std::vector<double> attention_kernel_sparse(const KvStore& store, int layer,
                                            const std::vector<double>& q,
                                            const SupportSet& support,
                                            KernelStats* stats) {
  const ModelSpec& spec = store.spec();
  const int d = spec.head_dim;
  const int group = spec.group_size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  if (!store.compact_matches(layer, support.sink, support.selected))
    fail(ErrorCode::kStaleCompact,
         "attention_kernel_sparse: compact buffer does not match the support");
  std::vector<double> context(q.size());
  std::vector<double> scratch;
  for (int head = 0; head < spec.n_kv_heads; ++head) {
    const HeadSegments hs = sparse_segments(store, layer, head, support);
    if (stats) stats->reads += static_cast<std::uint64_t>(hs.total);
    for (int g = 0; g < group; ++g) {
      const int qh = head * group + g;
      attend(q.data() + static_cast<std::ptrdiff_t>(qh) * d, hs, d, inv_sqrt_d,
             scratch, context.data() + static_cast<std::ptrdiff_t>(qh) * d,
             &store, layer, head);
      if (stats) stats->flops += 2ull * static_cast<std::uint64_t>(hs.total) * d;
    }
  }
  return context;
}

}  // namespace sfi
