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

#include "sfi/error.hpp"
#include "sfi/oracle.hpp"

using namespace sfi;
using namespace sfi::oracle;

TEST_CASE("kl_objective endpoints") {
  const ScoreDistribution f{{1, 2}, {1.0, 0.0}};
  const ScoreDistribution r{{1, 2}, {0.25, 0.75}};
  const ScoreDistribution half{{1, 2}, {0.5, 0.5}};
  CHECK(kl_objective(f, r, f, 0.0) == doctest::Approx(0.0));
  CHECK(kl_objective(f, r, half, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(kl_objective(f, r, r, 1.0) == doctest::Approx(0.0));
  // zero mass where f is positive: +inf sentinel
  const ScoreDistribution zero{{1, 2}, {0.0, 1.0}};
  CHECK(std::isinf(kl_objective(f, r, zero, 0.0)));
}

TEST_CASE("lambda_grid_min examples") {
  const ScoreDistribution f{{1, 2, 3}, {0.5, 0.3, 0.2}};
  const ScoreDistribution uniform{{1, 2, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  CHECK(lambda_grid_min(f, f, 0.5, 1e-4) == doctest::Approx(0.0));
  CHECK(lambda_grid_min(f, uniform, 0.02, 1e-5) == doctest::Approx(0.02));
  CHECK(lambda_grid_min(f, uniform, 0.0, 1e-5) == doctest::Approx(0.0));
}

TEST_CASE("geometric mixture endpoints and the false-negative contrast") {
  const ScoreDistribution f{{1, 2}, {0.9, 0.1}};
  const ScoreDistribution r{{1, 2}, {1e-8, 1.0 - 1e-8}};
  CHECK(geometric_mixture(f, r, 0.0).mass[0] == doctest::Approx(0.9));
  // a position with large evidence but tiny prior collapses geometrically
  const ScoreDistribution geo = geometric_mixture(f, r, 0.5);
  CHECK(geo.mass[0] < 0.05);
  // but survives arithmetic fusion at the same lambda
  const double arith0 = 0.5 * 0.9 + 0.5 * 1e-8;
  CHECK(arith0 >= 0.45);
  const ScoreDistribution same = geometric_mixture(f, f, 0.7);
  CHECK(same.mass[0] == doctest::Approx(0.9).epsilon(1e-12));
  const ScoreDistribution z1{{1, 2}, {1.0, 0.0}};
  const ScoreDistribution z2{{1, 2}, {0.0, 1.0}};
  CHECK_THROWS_AS(geometric_mixture(z1, z2, 0.5), Error);
}

TEST_CASE("exhaustive_top_k examples") {
  CHECK(exhaustive_top_k({3.0, 1.0, 2.0}, {1, 2, 3}, 2) == std::vector<Pos>{1, 3});
  CHECK(exhaustive_top_k({1.0, 1.0, 1.0}, {4, 5, 6}, 2) == std::vector<Pos>{4, 5});
  CHECK(exhaustive_top_k({1.0, 2.0}, {1, 2}, 2) == std::vector<Pos>{1, 2});
  CHECK(exhaustive_top_k({1.0, 2.0}, {1, 2}, 0).empty());
}

TEST_CASE("masked reference with a full mask equals the dense engine step") {
  ModelSpec spec;
  spec.n_layers = 2;
  spec.n_kv_heads = 2;
  spec.n_query_heads = 4;
  spec.head_dim = 16;
  spec.vocab_size = 32;
  const ToyModel model = ToyModel::random(spec, 42);
  const std::vector<TokenId> prompt = {5, 9, 1, 30, 2, 17, 8};

  KvStore store(spec);
  std::vector<TokenId> block(prompt.begin(), prompt.end() - 1);
  prefill_dense(model, block, store, 1, {}, PoolMode::kMean);
  const StepOutput engine = dense_attention_step(model, prompt.back(), store, {});

  const MaskedAttentionResult ref = masked_attention_reference(model, prompt, {});
  double scale = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < ref.vocab_logits.size(); ++i) {
    scale = std::max(scale, std::abs(ref.vocab_logits[i]));
    worst = std::max(worst, std::abs(ref.vocab_logits[i] - engine.vocab_logits[i]));
  }
  CHECK(worst / scale < 1e-9);
}

TEST_CASE("one-key mask returns that position's value vector per head") {
  // single layer: the masked last row cannot perturb later-layer inputs, so
  // the engine's stored value vector is directly comparable
  ModelSpec spec;
  spec.n_layers = 1;
  spec.n_kv_heads = 2;
  spec.n_query_heads = 4;
  spec.head_dim = 8;
  spec.vocab_size = 16;
  const ToyModel model = ToyModel::random(spec, 3);
  const std::vector<TokenId> prompt = {1, 7, 4, 11};
  const Pos last = static_cast<Pos>(prompt.size());

  // engine store gives the independent value-vector source
  KvStore store(spec);
  std::vector<TokenId> block(prompt.begin(), prompt.end() - 1);
  prefill_dense(model, block, store, 1, {}, PoolMode::kMean);
  dense_attention_step(model, prompt.back(), store, {});

  std::vector<std::vector<std::vector<Pos>>> masks(
      spec.n_layers, std::vector<std::vector<Pos>>(spec.n_kv_heads, {last}));
  const MaskedAttentionResult ref = masked_attention_reference(model, prompt, masks);
  const int group = spec.group_size();
  const float* v = store.value_at(0, last);
  for (int qh = 0; qh < spec.n_query_heads; ++qh) {
    const int kv = qh / group;
    for (int c = 0; c < spec.head_dim; ++c) {
      const double got = ref.attn_context[0][qh * spec.head_dim + c];
      const double want = static_cast<double>(v[kv * spec.head_dim + c]);
      CHECK(got == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("randomized cross-checks pass at smoke scale") {
  CHECK(check_lambda_closed_form(11, 100, 2e-5, 1e-5).passed());
  CHECK(check_fusion_objective(12, 10, 1e-3).passed());
  CHECK(check_kl_minimizer(13, 20, 25).passed());
  CHECK(check_amgm_dominance(14, 2000).passed());
  CHECK(check_w1_exactness(15, 20, 1e-12).passed());
  CHECK(check_top_k(16, 100).passed());
  CHECK(check_attention_equivalence(17, 10, 1e-6).passed());
}
