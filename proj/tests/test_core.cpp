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

#include <random>
#include <sstream>

#include "sfi/config.hpp"
#include "sfi/distribution.hpp"
#include "sfi/error.hpp"

using namespace sfi;

TEST_CASE("default config carries the documented values") {
  const Config cfg = default_config();
  CHECK(cfg.limits.n_sink == 4);
  CHECK(cfg.limits.n_recent == 256);
  CHECK(cfg.limits.k_budget == 2048);
  CHECK(cfg.selector.k_budget == 2048);
  CHECK(cfg.trigger.t_max == 64);
  CHECK(cfg.trigger.window_decode == 1);
  CHECK(cfg.trigger.window_prefill == 16);
  CHECK(cfg.selector.lambda_clip == doctest::Approx(0.02));
  CHECK(cfg.selector.alpha_soft == doctest::Approx(0.5));
  CHECK(cfg.selector.alpha_cross == doctest::Approx(0.35));
  CHECK(cfg.selector.epsilon == doctest::Approx(1e-8));
  // ledger defaults
  CHECK(cfg.selector.alpha == doctest::Approx(1.0));
  CHECK(cfg.selector.gamma == doctest::Approx(1.0));
  CHECK(cfg.selector.beta == doctest::Approx(1.0));
  CHECK(cfg.selector.p_curve == doctest::Approx(2.0));
  CHECK(cfg.selector.eta == doctest::Approx(0.5));
  CHECK(cfg.selector.temperature == doctest::Approx(1.0));
  CHECK(cfg.selector.nms_radius == 2);
  // five boundary ids standing for . ? ! ; \n
  CHECK(cfg.trigger.trigger_tokens == std::vector<TokenId>{0, 1, 2, 3, 4});
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config round-trips losslessly through the file format") {
  Config cfg = default_config();
  cfg.selector.alpha = 0.30000000000000004;  // not representable in short decimal
  cfg.selector.beta = 1.0 / 3.0;
  cfg.selector.epsilon = 1e-8;
  cfg.selector.k_budget = 3836;
  cfg.limits.k_budget = 3836;
  cfg.trigger.trigger_tokens = {7, 99, 255};
  std::stringstream ss;
  save_config(cfg, ss);
  const Config back = load_config(ss);
  CHECK(back.selector.alpha == cfg.selector.alpha);
  CHECK(back.selector.beta == cfg.selector.beta);
  CHECK(back.selector.epsilon == cfg.selector.epsilon);
  CHECK(back.selector.k_budget == 3836);
  CHECK(back.limits.k_budget == 3836);
  CHECK(back.trigger.trigger_tokens == cfg.trigger.trigger_tokens);
  std::stringstream again;
  save_config(back, again);
  std::stringstream first;
  save_config(cfg, first);
  CHECK(again.str() == first.str());
}

TEST_CASE("unknown config keys are a hard error") {
  std::stringstream ss("alpha=0.5\nbudget=4\n");
  CHECK_THROWS_WITH_AS(load_config(ss), doctest::Contains("unknown key"), Error);
}

TEST_CASE("config validation rejects out-of-range values") {
  std::stringstream a("alpha=0\n");
  CHECK_THROWS_AS(load_config(a), Error);
  std::stringstream b("lambda_clip=1.5\n");
  CHECK_THROWS_AS(load_config(b), Error);
  std::stringstream c("p_curve=0.5\n");
  CHECK_THROWS_AS(load_config(c), Error);
  std::stringstream d("t_max=0\n");
  CHECK_THROWS_AS(load_config(d), Error);
}

TEST_CASE("validate_distribution spec examples") {
  ScoreDistribution d;
  d.support = {1, 2};
  d.mass = {0.5, 0.5};
  CHECK(validate_distribution(d));
  d.mass = {0.7, 0.4};  // sums to 1.1
  CHECK(!validate_distribution(d));
  d.mass = {1.0, -0.0};  // boundary of the simplex; negative zero normalizes
  CHECK(validate_distribution(d));
}

TEST_CASE("validate_distribution rejects structural violations") {
  ScoreDistribution d;
  d.support = {3, 2};  // not increasing
  d.mass = {0.5, 0.5};
  CHECK(!validate_distribution(d));
  d.support = {0, 2};  // positions are 1-based
  CHECK(!validate_distribution(d));
  d.support = {1};
  d.mass = {0.5, 0.5};  // misaligned
  CHECK(!validate_distribution(d));
  d.support = {1, 2};
  d.mass = {1.5, -0.5};  // negative mass
  CHECK(!validate_distribution(d));
}

TEST_CASE("normalize of any non-negative non-zero vector validates") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 64);
    std::vector<Pos> support(n);
    Pos p = 0;
    for (Pos& s : support) s = (p += 1 + static_cast<Pos>(rng() % 3));
    std::vector<double> w(n, 0.0);
    for (double& x : w) x = u(rng);
    w[rng() % n] += 1e-6;  // ensure non-zero
    CHECK(validate_distribution(normalize(support, w)));
  }
}

TEST_CASE("normalize error paths") {
  CHECK_THROWS_AS(normalize(std::vector<Pos>{}, std::vector<double>{}), Error);
  CHECK_THROWS_AS(normalize(std::vector<Pos>{1, 2}, std::vector<double>{0.0, 0.0}), Error);
  CHECK_THROWS_AS(normalize(std::vector<Pos>{1, 2}, std::vector<double>{1.0, -1.0}), Error);
}
