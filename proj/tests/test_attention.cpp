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
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "sfi/attention.hpp"
#include "sfi/error.hpp"
#include "sfi/oracle.hpp"

using namespace sfi;

namespace {

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.n_layers = 2;
  spec.n_kv_heads = 2;
  spec.n_query_heads = 4;
  spec.head_dim = 16;
  spec.vocab_size = 32;
  spec.max_positions = 2048;
  return spec;
}

std::vector<TokenId> arange_prompt(int n, int vocab) {
  std::vector<TokenId> prompt(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) prompt[static_cast<std::size_t>(i)] = (i * 7 + 3) % vocab;
  return prompt;
}

// Builds a store by prefilling all but the last prompt token.
KvStore prefill_store(const ToyModel& model, const std::vector<TokenId>& prompt) {
  KvStore store(model.spec());
  std::vector<TokenId> block(prompt.begin(), prompt.end() - 1);
  prefill_dense(model, block, store, 1, {}, PoolMode::kMean);
  return store;
}

}  // namespace

TEST_CASE("model spec invariants") {
  ModelSpec spec = tiny_spec();
  spec.n_query_heads = 3;  // not a multiple of 2
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = tiny_spec();
  spec.head_dim = 7;  // odd
  CHECK_THROWS_AS(spec.validate(), Error);
  CHECK_THROWS_AS(ToyModel::random(spec, 1), Error);
}

TEST_CASE("same seed gives bitwise-identical weights and outputs") {
  const ModelSpec spec = tiny_spec();
  const ToyModel a = ToyModel::random(spec, 123);
  const ToyModel b = ToyModel::random(spec, 123);
  CHECK(a.embedding() == b.embedding());
  CHECK(a.layer(0).wq == b.layer(0).wq);
  CHECK(a.layer(1).w_down == b.layer(1).w_down);
  const ToyModel c = ToyModel::random(spec, 124);
  CHECK(a.embedding() != c.embedding());

  const auto prompt = arange_prompt(9, spec.vocab_size);
  KvStore sa = prefill_store(a, prompt);
  KvStore sb = prefill_store(b, prompt);
  const StepOutput oa = dense_attention_step(a, prompt.back(), sa, {});
  const StepOutput ob = dense_attention_step(b, prompt.back(), sb, {});
  CHECK(oa.vocab_logits == ob.vocab_logits);
}

TEST_CASE("weight file round-trip preserves forward outputs exactly") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 9);
  const std::string path = (std::filesystem::temp_directory_path() /
                            "sfi_roundtrip.weights").string();
  model.save_weights(path);
  const ToyModel loaded = ToyModel::load_weights(path);
  CHECK(loaded.spec().n_layers == spec.n_layers);
  CHECK(loaded.embedding() == model.embedding());

  const auto prompt = arange_prompt(12, spec.vocab_size);
  KvStore sa = prefill_store(model, prompt);
  KvStore sb = prefill_store(loaded, prompt);
  const StepOutput oa = dense_attention_step(model, prompt.back(), sa, {});
  const StepOutput ob = dense_attention_step(loaded, prompt.back(), sb, {});
  CHECK(oa.vocab_logits == ob.vocab_logits);
  std::remove(path.c_str());
}

TEST_CASE("malformed weight files report the offset") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 4);
  const std::string path = (std::filesystem::temp_directory_path() /
                            "sfi_malformed.weights").string();
  model.save_weights(path);

  // truncate
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(ToyModel::load_weights(path), doctest::Contains("offset"),
                       Error);

  // bad magic
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    const std::uint32_t junk = 0xDEADBEEF;
    for (int i = 0; i < 16; ++i)
      out.write(reinterpret_cast<const char*>(&junk), sizeof(junk));
  }
  CHECK_THROWS_WITH_AS(ToyModel::load_weights(path), doctest::Contains("magic"),
                       Error);
  std::remove(path.c_str());
}

TEST_CASE("single-token attention output is that token's value projection") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 77);
  KvStore store(spec);
  CaptureSpec cap;
  cap.context = true;
  const StepOutput out = dense_attention_step(model, 11, store, cap);
  REQUIRE(out.attn_context.size() == static_cast<std::size_t>(spec.n_layers));
  const int group = spec.group_size();
  for (int l = 0; l < spec.n_layers; ++l) {
    const float* v = store.value_at(l, 1);
    for (int qh = 0; qh < spec.n_query_heads; ++qh)
      for (int c = 0; c < spec.head_dim; ++c) {
        const double got = out.attn_context[l][qh * spec.head_dim + c];
        const double want = static_cast<double>(v[(qh / group) * spec.head_dim + c]);
        CHECK(got == want);  // one-key softmax reproduces the stored float exactly
      }
  }
}

TEST_CASE("empty capture set still produces vocab logits and a window") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 5);
  KvStore store(spec);
  CaptureSpec cap;
  cap.window = true;  // allowed stays empty
  const StepOutput out = dense_attention_step(model, 3, store, cap);
  REQUIRE(out.attn_logits.has_value());
  CHECK((*out.attn_logits)[0].allowed.empty());
  CHECK((*out.attn_logits)[0].values[0].empty());
  CHECK(out.vocab_logits.size() == static_cast<std::size_t>(spec.vocab_size));
}

TEST_CASE("captured window matches the oracle, mean and max pooling") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 31);
  const auto prompt = arange_prompt(24, spec.vocab_size);
  std::vector<Pos> allowed;
  for (Pos p = 3; p <= 18; p += 3) allowed.push_back(p);

  for (const PoolMode pool : {PoolMode::kMean, PoolMode::kMax}) {
    KvStore store = prefill_store(model, prompt);
    CaptureSpec cap;
    cap.window = true;
    cap.allowed = allowed;
    cap.pool = pool;
    const StepOutput engine = dense_attention_step(model, prompt.back(), store, cap);
    const oracle::MaskedAttentionResult ref =
        oracle::masked_attention_reference(model, prompt, {}, allowed, pool);
    REQUIRE(engine.attn_logits.has_value());
    for (int l = 0; l < spec.n_layers; ++l)
      for (int h = 0; h < spec.n_kv_heads; ++h)
        for (std::size_t c = 0; c < allowed.size(); ++c) {
          const double got = (*engine.attn_logits)[l].values[h][c];
          const double want = ref.window_logits[l][h][c];
          CHECK(got == doctest::Approx(want).epsilon(1e-9));
        }
  }
}

TEST_CASE("masked window row softmax equals the dense row renormalized on J") {
  ModelSpec spec = tiny_spec();
  spec.n_query_heads = 2;  // group size 1: probabilities pool trivially
  const ToyModel model = ToyModel::random(spec, 8);
  const auto prompt = arange_prompt(20, spec.vocab_size);
  std::vector<Pos> allowed = {2, 5, 7, 11, 13};

  KvStore store = prefill_store(model, prompt);
  CaptureSpec cap;
  cap.window = true;
  cap.allowed = allowed;
  cap.full_attention = true;
  const StepOutput out = dense_attention_step(model, prompt.back(), store, cap);
  for (int l = 0; l < spec.n_layers; ++l)
    for (int h = 0; h < spec.n_kv_heads; ++h) {
      const auto& probs = out.full_attention[l][h];
      double renorm = 0.0;
      for (Pos p : allowed) renorm += probs[static_cast<std::size_t>(p - 1)];
      // softmax of the captured logits
      const auto& row = (*out.attn_logits)[l].values[h];
      double max_logit = row[0];
      for (double v : row) max_logit = std::max(max_logit, v);
      double sum = 0.0;
      for (double v : row) sum += std::exp(v - max_logit);
      for (std::size_t c = 0; c < allowed.size(); ++c) {
        const double from_window = std::exp(row[c] - max_logit) / sum;
        const double from_dense =
            probs[static_cast<std::size_t>(allowed[c] - 1)] / renorm;
        CHECK(from_window == doctest::Approx(from_dense).epsilon(1e-9));
      }
    }
}

TEST_CASE("sparse step over the full support is bit-identical to dense") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 55);
  const auto prompt = arange_prompt(40, spec.vocab_size);
  const Pos len = static_cast<Pos>(prompt.size());

  KvStore dense_store = prefill_store(model, prompt);
  const StepOutput dense = dense_attention_step(model, prompt.back(), dense_store, {});

  KvStore sparse_store = prefill_store(model, prompt);
  SupportSet support;
  support.sink = {1, 2, 3, 4};
  support.recent_len = 8;
  support.recent_start = len - support.recent_len + 1;
  support.selected.assign(spec.n_kv_heads, {});
  for (Pos p = 5; p < support.recent_start; ++p)
    for (auto& sel : support.selected) sel.push_back(p);
  for (int l = 0; l < spec.n_layers; ++l)
    sparse_store.reorganize(l, support.sink, support.selected);
  const StepOutput sparse = sparse_attention_step(
      model, prompt.back(), sparse_store,
      std::vector<SupportSet>(spec.n_layers, support));

  CHECK(sparse.vocab_logits == dense.vocab_logits);
  CHECK(sparse.kv_read_count == dense.kv_read_count);
}

TEST_CASE("sparse step matches the masked oracle on a random support") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 91);
  const auto prompt = arange_prompt(48, spec.vocab_size);
  const Pos len = static_cast<Pos>(prompt.size());
  std::mt19937_64 rng(17);

  KvStore store = prefill_store(model, prompt);
  std::vector<SupportSet> support(spec.n_layers);
  std::vector<std::vector<std::vector<Pos>>> masks(spec.n_layers);
  for (int l = 0; l < spec.n_layers; ++l) {
    SupportSet& s = support[l];
    s.sink = {1, 2};
    s.recent_len = 6;
    s.recent_start = len - s.recent_len + 1;
    s.selected.assign(spec.n_kv_heads, {});
    masks[l].resize(spec.n_kv_heads);
    for (int h = 0; h < spec.n_kv_heads; ++h) {
      for (Pos p = 3; p < s.recent_start; ++p)
        if (rng() % 3 == 0) s.selected[h].push_back(p);
      masks[l][h] = s.sink;
      masks[l][h].insert(masks[l][h].end(), s.selected[h].begin(), s.selected[h].end());
      for (Pos p = s.recent_start; p <= len; ++p) masks[l][h].push_back(p);
    }
    store.reorganize(l, s.sink, s.selected);
  }
  const StepOutput got = sparse_attention_step(model, prompt.back(), store, support);
  const auto want = oracle::masked_attention_reference(model, prompt, masks);
  double scale = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < want.vocab_logits.size(); ++i) {
    scale = std::max(scale, std::abs(want.vocab_logits[i]));
    worst = std::max(worst, std::abs(got.vocab_logits[i] - want.vocab_logits[i]));
  }
  CHECK(worst / scale < 1e-6);
}

TEST_CASE("reorganize builds ascending bit-identical copies") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 2);
  const auto prompt = arange_prompt(30, spec.vocab_size);
  KvStore store = prefill_store(model, prompt);
  dense_attention_step(model, prompt.back(), store, {});

  const std::vector<Pos> sink = {1, 2, 3};
  std::vector<std::vector<Pos>> selected = {{7, 11, 19}, {5, 11}};
  store.reorganize(0, sink, selected);
  const auto& seg0 = store.compact(0, 0);
  CHECK(seg0.positions == std::vector<Pos>{1, 2, 3, 7, 11, 19});
  for (std::size_t i = 0; i < seg0.positions.size(); ++i) {
    const float* src = store.key_at(0, seg0.positions[i]);
    for (int c = 0; c < spec.head_dim; ++c)
      CHECK(seg0.k[i * spec.head_dim + c] == src[0 * spec.head_dim + c]);
  }
  const auto& seg1 = store.compact(0, 1);
  CHECK(seg1.positions == std::vector<Pos>{1, 2, 3, 5, 11});

  // determinism: same inputs, byte-identical buffers
  const auto k_before = seg0.k;
  store.reorganize(0, sink, selected);
  CHECK(store.compact(0, 0).k == k_before);

  // empty selection keeps exactly the sink entries
  store.reorganize(0, sink, {{}, {}});
  CHECK(store.compact(0, 0).positions == sink);

  // errors: unwritten position, overlap with sink
  CHECK_THROWS_AS(store.reorganize(0, sink, {{500}, {}}), Error);
  CHECK_THROWS_AS(store.reorganize(0, sink, {{3}, {}}), Error);
}

TEST_CASE("a stale compact buffer is a structured error") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 6);
  const auto prompt = arange_prompt(20, spec.vocab_size);
  KvStore store = prefill_store(model, prompt);

  SupportSet support;
  support.sink = {1, 2};
  support.recent_len = 5;
  support.recent_start = static_cast<Pos>(prompt.size()) - 4;
  support.selected.assign(spec.n_kv_heads, {7});
  for (int l = 0; l < spec.n_layers; ++l)
    store.reorganize(l, support.sink, support.selected);
  support.selected[0] = {8};  // reorg now pending
  try {
    sparse_attention_step(model, prompt.back(), store,
                          std::vector<SupportSet>(spec.n_layers, support));
    FAIL("expected kStaleCompact");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kStaleCompact);
  }
}

TEST_CASE("fast-step reads are an affine function of the support only") {
  ModelSpec spec = tiny_spec();
  spec.n_layers = 1;
  spec.max_positions = 1 << 18;
  std::mt19937_64 rng(3);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::uint64_t reads_at_len[3];
  int idx = 0;
  for (const int len : {1024, 4096, 16384}) {
    KvStore store(spec);
    std::vector<float> k(spec.n_kv_heads * spec.head_dim);
    std::vector<float> v(k.size());
    for (int pos = 0; pos < len; ++pos) {
      for (float& x : k) x = dist(rng);
      for (float& x : v) x = dist(rng);
      store.begin_token();
      store.append_layer(0, k.data(), v.data());
      store.end_token();
    }
    SupportSet support;
    support.sink = {1, 2, 3, 4};
    support.recent_len = 64;
    support.recent_start = len - 63;
    support.selected.assign(spec.n_kv_heads, {});
    for (Pos p = 5; p < 5 + 60; ++p)
      for (auto& sel : support.selected) sel.push_back(p);
    store.reorganize(0, support.sink, support.selected);
    std::vector<double> q(spec.n_query_heads * spec.head_dim, 0.5);
    KernelStats stats;
    attention_kernel_sparse(store, 0, q, support, &stats);
    reads_at_len[idx++] = stats.reads;
    // affine check: reads = n_kv_heads * per-head support size
    CHECK(stats.reads ==
          static_cast<std::uint64_t>(spec.n_kv_heads) * (4 + 60 + 64));
  }
  CHECK(reads_at_len[0] == reads_at_len[1]);
  CHECK(reads_at_len[1] == reads_at_len[2]);
}

TEST_CASE("compact reads are sequential") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 13);
  const auto prompt = arange_prompt(32, spec.vocab_size);
  KvStore store = prefill_store(model, prompt);
  SupportSet support;
  support.sink = {1, 2, 3};
  support.recent_len = 6;
  support.recent_start = static_cast<Pos>(prompt.size()) - 5;
  support.selected.assign(spec.n_kv_heads, {5, 9, 14, 20});
  for (int l = 0; l < spec.n_layers; ++l)
    store.reorganize(l, support.sink, support.selected);

  store.set_access_trace(true);
  sparse_attention_step(model, prompt.back(), store,
                        std::vector<SupportSet>(spec.n_layers, support));
  const auto& trace = store.access_trace();
  REQUIRE(!trace.empty());
  // strictly ascending slot order within each (layer, head) scan
  int prev_layer = -1, prev_head = -1, prev_slot = -1;
  for (const auto& a : trace) {
    if (a.layer == prev_layer && a.head == prev_head && prev_slot != -1 &&
        a.slot != 0)
      CHECK(a.slot == prev_slot + 1);
    prev_layer = a.layer;
    prev_head = a.head;
    prev_slot = a.slot;
  }
}

TEST_CASE("context overflow is a structured error") {
  ModelSpec spec = tiny_spec();
  spec.max_positions = 4;
  const ToyModel model = ToyModel::random(spec, 1);
  KvStore store(spec);
  for (int i = 0; i < 4; ++i) dense_attention_step(model, i % spec.vocab_size, store, {});
  try {
    dense_attention_step(model, 1, store, {});
    FAIL("expected kContextOverflow");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kContextOverflow);
  }
}

TEST_CASE("dense capture rejects out-of-range allowed positions") {
  const ModelSpec spec = tiny_spec();
  const ToyModel model = ToyModel::random(spec, 1);
  KvStore store(spec);
  CaptureSpec cap;
  cap.window = true;
  cap.allowed = {5};  // store will only hold position 1
  CHECK_THROWS_AS(dense_attention_step(model, 1, store, cap), Error);
}
