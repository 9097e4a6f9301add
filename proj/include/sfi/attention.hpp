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

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfi/config.hpp"
#include "sfi/distribution.hpp"
#include "sfi/selector.hpp"

namespace sfi {

/// Architecture of the reference decoder-only transformer.
struct ModelSpec {
  int n_layers = 2;
  int n_query_heads = 4;  // H_q, integer multiple of n_kv_heads
  int n_kv_heads = 2;     // H
  int head_dim = 16;      // d, even (rotary pairing)
  int vocab_size = 256;
  int max_positions = 32768;
  double rope_base = 10000.0;

  int hidden() const { return n_query_heads * head_dim; }
  int ff_dim() const { return 2 * hidden(); }
  int group_size() const { return n_query_heads / n_kv_heads; }
  void validate() const;  // throws Error(kConfig) on violation
};

/// Small decoder-only transformer: embeddings, pre-norm rotary GQA attention,
/// gated MLP, final norm, LM head. Weights are 32-bit values held in doubles;
/// the forward pass accumulates in 64-bit. Keys are stored post-rotary.
class ToyModel {
 public:
  struct LayerWeights {
    Eigen::VectorXd ln1, ln2;
    Eigen::MatrixXd wq, wk, wv, wo;          // (out x in)
    Eigen::MatrixXd w_gate, w_up, w_down;
  };

  static ToyModel random(const ModelSpec& spec, std::uint64_t seed);
  static ToyModel load_weights(const std::string& path);
  void save_weights(const std::string& path) const;

  const ModelSpec& spec() const { return spec_; }
  const Eigen::MatrixXd& embedding() const { return embed_; }
  const LayerWeights& layer(int i) const { return layers_[i]; }
  const Eigen::VectorXd& final_norm() const { return ln_f_; }
  const Eigen::MatrixXd& lm_head() const { return lm_head_; }
  const Eigen::VectorXd& lm_bias() const { return lm_bias_; }

  Eigen::MatrixXd& mutable_embedding() { return embed_; }
  Eigen::MatrixXd& mutable_lm_head() { return lm_head_; }
  Eigen::VectorXd& mutable_lm_bias() { return lm_bias_; }

 private:
  ToyModel() = default;
  ModelSpec spec_;
  Eigen::MatrixXd embed_;  // vocab x hidden
  std::vector<LayerWeights> layers_;
  Eigen::VectorXd ln_f_;
  Eigen::MatrixXd lm_head_;  // vocab x hidden
  Eigen::VectorXd lm_bias_;  // vocab
};

/// Fast-step attention support, per layer: sink and selected entries are read
/// from the reorganized compact segment, the recent tail in place from paged
/// storage.
struct SupportSet {
  std::vector<Pos> sink;                   // ascending
  std::vector<std::vector<Pos>> selected;  // per KV head, ascending
  Pos recent_start = 1;
  int recent_len = 0;

  int size_for_head(int h) const {
    return static_cast<int>(sink.size() + selected[h].size()) + recent_len;
  }
};

/// Two-segment KV storage for one request: an append-only paged area indexed
/// by absolute position (keys post-rotary, 32-bit) plus a per-layer,
/// per-KV-head compact buffer holding bit-identical copies of the sink and
/// selected entries in ascending position order.
class KvStore {
 public:
  explicit KvStore(const ModelSpec& spec);

  Pos size() const { return len_; }
  const ModelSpec& spec() const { return spec_; }

  // Appending one token touches every layer exactly once.
  void begin_token();
  void append_layer(int layer, const float* k, const float* v);  // H*d each
  void end_token();

  const float* key_at(int layer, Pos pos) const;    // H*d floats
  const float* value_at(int layer, Pos pos) const;  // H*d floats
  double key_norm(int layer, int head, Pos pos) const;

  struct CompactSegment {
    std::vector<Pos> positions;  // ascending
    std::vector<float> k, v;     // packed, count * head_dim each
  };

  /// Rebuilds the per-head compact buffers for `layer` from the union of
  /// sink and selected positions. Pure gather; the recent tail is untouched.
  void reorganize(int layer, const std::vector<Pos>& sink,
                  const std::vector<std::vector<Pos>>& selected);

  bool compact_valid(int layer) const { return layers_[layer].compact_valid; }
  bool compact_matches(int layer, const std::vector<Pos>& sink,
                       const std::vector<std::vector<Pos>>& selected) const;
  const CompactSegment& compact(int layer, int head) const;

  /// View descriptor for the last min(n_recent, size()) appended positions.
  std::pair<Pos, int> recent_tail(int n_recent) const;

  // Compact read-order instrumentation (tests / invariant checks).
  void set_access_trace(bool on) { trace_on_ = on; }
  struct CompactAccess { int layer; int head; int slot; };
  std::vector<CompactAccess>& access_trace() { return trace_; }
  void record_compact_access(int layer, int head, int slot) const;

 private:
  struct Layer {
    std::vector<float> k_paged, v_paged;          // len * H * d
    std::vector<std::vector<double>> key_norms;   // per head, per position
    std::vector<CompactSegment> compact;          // per head
    bool compact_valid = false;
  };

  ModelSpec spec_;
  Pos len_ = 0;
  int pending_layers_ = -1;  // -1: no token open
  std::vector<Layer> layers_;
  bool trace_on_ = false;
  mutable std::vector<CompactAccess> trace_;
};

/// Output of one decode step.
struct StepOutput {
  std::vector<double> vocab_logits;
  /// Masked attention logit windows, one per layer; present iff the step was
  /// slow (dense with capture).
  std::optional<std::vector<LogitWindow>> attn_logits;
  std::uint64_t flop_count = 0;     // attention multiply-accumulates
  std::uint64_t kv_read_count = 0;  // KV positions read, over layers * KV heads
  /// Pooled post-softmax attention over the full prefix, per layer per KV
  /// head (captured on request; used by the stability measurement).
  std::vector<std::vector<std::vector<double>>> full_attention;
  /// Per-layer attention context (Hq * d), captured on request.
  std::vector<std::vector<double>> attn_context;
  /// Final normalized hidden state, captured on request.
  std::vector<double> final_hidden;
};

struct CaptureSpec {
  bool window = false;          // record masked logits over `allowed`
  std::vector<Pos> allowed;     // J, ascending; may be empty (zero columns)
  PoolMode pool = PoolMode::kMean;
  bool full_attention = false;  // record pooled attention probabilities
  bool context = false;         // record per-layer attention context
  bool final_hidden = false;    // record the final normalized hidden state
};

/// Appends `token` and runs full causal attention over all positions per
/// layer, recording masked logits over the capture set when requested.
StepOutput dense_attention_step(const ToyModel& model, TokenId token,
                                KvStore& store, const CaptureSpec& capture);

/// Appends `token` and runs attention restricted to the support per KV head:
/// sink+selected sequentially from the compact segment, the recent tail in
/// place from paged storage. Throws kStaleCompact if the compact buffer does
/// not match the requested sink/selected sets.
StepOutput sparse_attention_step(const ToyModel& model, TokenId token,
                                 KvStore& store,
                                 const std::vector<SupportSet>& support);

/// Dense causal pass over `tokens` (appending KV for each), capturing masked
/// logit windows for the last min(window_width, |tokens|) query rows against
/// the frozen `allowed` set. Rows a query cannot reach causally are masked.
std::vector<LogitWindow> prefill_dense(const ToyModel& model,
                                       const std::vector<TokenId>& tokens,
                                       KvStore& store, int window_width,
                                       const std::vector<Pos>& allowed,
                                       PoolMode pool);

/// Attention kernels for a single layer on explicit supports, exposed for
/// benchmarking. `q` is Hq*d doubles (post-rotary); returns Hq*d context.
struct KernelStats {
  std::uint64_t flops = 0;
  std::uint64_t reads = 0;
};
std::vector<double> attention_kernel_dense(const KvStore& store, int layer,
                                           const std::vector<double>& q,
                                           KernelStats* stats);
std::vector<double> attention_kernel_sparse(const KvStore& store, int layer,
                                            const std::vector<double>& q,
                                            const SupportSet& support,
                                            KernelStats* stats);

/// Deterministic greedy pick: highest logit, ties to the lowest token id.
TokenId argmax_token(const std::vector<double>& logits);

}  // namespace sfi
