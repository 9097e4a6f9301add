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
#include "sfi/distribution.hpp"

#include <cmath>
#include <cstdlib>

#include "sfi/error.hpp"

namespace sfi {

bool validate_distribution(const ScoreDistribution& d) {
  if (d.support.size() != d.mass.size()) return false;
  if (d.support.empty()) return false;
  Pos prev = 0;  // positions are 1-based, so 0 is below any valid entry
  double sum = 0.0;
  for (std::size_t i = 0; i < d.support.size(); ++i) {
    if (d.support[i] <= prev) return false;
    prev = d.support[i];
    const double m = d.mass[i];
    if (!std::isfinite(m)) return false;
    if (m < 0.0) return false;  // -0.0 passes: it normalizes to zero mass
    sum += m;
  }
  return std::abs(sum - 1.0) <= 1e-9;
}

ScoreDistribution normalize(std::span<const Pos> support,
                            std::span<const double> weights) {
  if (support.empty() || weights.empty())
    fail(ErrorCode::kEmptySupport, "normalize: empty support");
  if (support.size() != weights.size())
    fail(ErrorCode::kSupportMismatch, "normalize: support/weight length mismatch");
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0)
      fail(ErrorCode::kNonFiniteInput, "normalize: weights must be finite and >= 0");
    sum += w;
  }
  if (sum <= 0.0)
    fail(ErrorCode::kEmptySupport, "normalize: all weights are zero");
  ScoreDistribution d;
  d.support.assign(support.begin(), support.end());
  d.mass.resize(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) d.mass[i] = weights[i] / sum;
  return d;
}

bool same_support(const ScoreDistribution& a, const ScoreDistribution& b) {
  return a.support == b.support;
}

double dot(const ScoreDistribution& a, const ScoreDistribution& b) {
  if (!same_support(a, b))
    fail(ErrorCode::kSupportMismatch, "dot: distributions on different supports");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.mass.size(); ++i) acc += a.mass[i] * b.mass[i];
  return acc;
}

double squared_norm(const ScoreDistribution& d) {
  double acc = 0.0;
  for (double m : d.mass) acc += m * m;
  return acc;
}

}  // namespace sfi
