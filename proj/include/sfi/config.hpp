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

#include <iosfwd>
#include <string>
#include <vector>

#include "sfi/distribution.hpp"

namespace sfi {

/// How query-head attention logits are pooled into their shared KV head
/// before the selector consumes them.
enum class PoolMode { kMean, kMax };

/// Selector hyperparameters. All selector arithmetic is 64-bit.
struct SelectorConfig {
  double alpha = 1.0;         // power-mean exponent, in (0, 1]
  double gamma = 1.0;         // key-norm prior exponent, >= 0
  double beta = 1.0;          // position-decay strength, >= 0
  double p_curve = 2.0;       // position-decay curvature, >= 1
  double eta = 0.5;           // tail-brake exponent, >= 0
  double lambda_clip = 0.02;  // prior-injection cap, in [0, 1]
  double alpha_soft = 0.5;    // soft-NMS strength, >= 0
  double alpha_cross = 0.35;  // cross-head exclusivity strength, >= 0
  double temperature = 1.0;   // head-softmax temperature, > 0
  int nms_radius = 2;         // neighborhood half-width in support rank order
  double epsilon = 1e-8;      // stability constant, > 0
  int k_budget = 2048;        // selected tokens per KV head, >= 0
  PoolMode pool = PoolMode::kMean;

  void validate() const;  // throws Error(kConfig) on violation
};

/// Slow-step trigger policy parameters. Trigger tokens are integer ids
/// produced offline by the tokenizer; no string matching happens at runtime.
struct TriggerConfig {
  std::vector<TokenId> trigger_tokens = {0, 1, 2, 3, 4};
  int t_max = 64;           // forced-refresh budget in decode steps, >= 1
  int window_decode = 1;    // slow-step observation width W during decode
  int window_prefill = 16;  // observation width for the prefill tail

  void validate() const;
  bool is_trigger(TokenId id) const;
};

/// Sparse-cache sizing.
struct CacheLimits {
  int n_sink = 4;       // sink count, >= 0
  int n_recent = 256;   // recent window length, >= 1
  int k_budget = 2048;  // per-head selected budget, >= 0

  void validate() const;
};

struct Config {
  SelectorConfig selector;
  TriggerConfig trigger;
  CacheLimits limits;

  void validate() const;
};

/// Returns the default configuration: sink 4 / recent 256 / budget 2048,
/// t_max 64, decode window 1, prefill window 16, lambda_clip 0.02,
/// alpha_soft 0.5, alpha_cross 0.35, epsilon 1e-8, and the documented
/// defaults for the remaining knobs. The default trigger set {0,1,2,3,4}
/// stands for {., ?, !, ;, \n} under the identity toy tokenizer.
Config default_config();

// Plain-text key=value config file. Unknown keys are a hard error; every
// key is listed in the README config reference. Values round-trip
// losslessly (shortest round-trip formatting for floating point).
Config load_config(std::istream& in);
Config load_config_file(const std::string& path);
void save_config(const Config& cfg, std::ostream& out);
void save_config_file(const Config& cfg, const std::string& path);

}  // namespace sfi
