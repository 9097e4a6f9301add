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
#include <span>
#include <vector>

namespace sfi {

/// Absolute prefix position, 1-based. Position 1 is the first prompt token.
using Pos = std::int32_t;
using TokenId = std::int32_t;

/// A probability distribution over an ordered set of prefix positions.
/// `support` is strictly increasing and `mass` is aligned with it.
struct ScoreDistribution {
  std::vector<Pos> support;
  std::vector<double> mass;

  std::size_t size() const { return support.size(); }
};

/// Pure predicate: true iff `d` satisfies all ScoreDistribution invariants
/// (aligned lengths, strictly increasing positive support, non-negative
/// finite mass summing to 1 within 1e-9).
bool validate_distribution(const ScoreDistribution& d);

/// L1-normalizes a non-negative weight vector onto `support`.
/// Throws kEmptySupport for an empty vector, kNonFiniteInput for NaN/Inf or
/// negative weights, and kEmptySupport if all weights are zero.
ScoreDistribution normalize(std::span<const Pos> support,
                            std::span<const double> weights);

/// Dot product of two distributions on identical supports.
double dot(const ScoreDistribution& a, const ScoreDistribution& b);

/// Squared L2 norm of the mass vector.
double squared_norm(const ScoreDistribution& d);

/// True iff both distributions live on the same ordered support.
bool same_support(const ScoreDistribution& a, const ScoreDistribution& b);

}  // namespace sfi
