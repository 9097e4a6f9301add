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
#include "sfi/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sfi/error.hpp"

namespace sfi {

namespace {

void count_ops(SelectorTrace* trace, std::uint64_t n) {
  if (trace) trace->elementary_ops += n;
}

void dump_scores(SelectorTrace* trace, const char* stage, int head,
                 const std::vector<Pos>& support,
                 const std::vector<double>& scores) {
  if (!trace || !trace->capture_debug) return;
  std::ostringstream os;
  os << "{\"stage\":\"" << stage << "\",\"head\":" << head << ",\"support\":[";
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (i) os << ',';
    os << support[i];
  }
  os << "],\"scores\":[";
  os.precision(17);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i) os << ',';
    os << scores[i];
  }
  os << "]}";
  trace->debug_lines.push_back(os.str());
}

// Numerically stable softmax of one window row over J.
std::vector<double> row_softmax(const LogitWindow& w, int head, int row) {
  const std::size_t n = w.allowed.size();
  std::vector<double> p(n);
  double max_logit = kMaskedLogit;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = w.at(head, row, static_cast<int>(j));
    if (!std::isfinite(v))
      fail(ErrorCode::kNonFiniteInput, "evidence_from_window: non-finite logit");
    max_logit = std::max(max_logit, v);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = w.at(head, row, static_cast<int>(j));
    p[j] = (v <= kMaskedLogit) ? 0.0 : std::exp(v - max_logit);
    sum += p[j];
  }
  if (sum <= 0.0)
    fail(ErrorCode::kEmptySupport, "evidence_from_window: fully masked row");
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace

CacheStats make_cache_stats(std::vector<std::vector<double>> key_norms,
                            const std::vector<Pos>& allowed, double epsilon) {
  if (allowed.empty())
    fail(ErrorCode::kEmptySupport, "make_cache_stats: empty allowed set");
  for (const auto& per_head : key_norms)
    if (per_head.size() != allowed.size())
      fail(ErrorCode::kSupportMismatch, "make_cache_stats: key_norms misaligned with J");
  CacheStats stats;
  stats.key_norms = std::move(key_norms);
  stats.j_min = allowed.front();
  stats.j_max = allowed.back();
  stats.normalized_pos.resize(allowed.size());
  const double denom = static_cast<double>(stats.j_max - stats.j_min) + epsilon;
  for (std::size_t i = 0; i < allowed.size(); ++i)
    stats.normalized_pos[i] = static_cast<double>(allowed[i] - stats.j_min) / denom;
  return stats;
}

std::vector<ScoreDistribution> evidence_from_window(const LogitWindow& w,
                                                    const SelectorConfig& cfg,
                                                    SelectorTrace* trace) {
  if (w.allowed.empty())
    fail(ErrorCode::kEmptySupport, "evidence_from_window: empty support");
  if (w.width < 1)
    fail(ErrorCode::kOutOfRange, "evidence_from_window: window width must be >= 1");
  const std::size_t n = w.allowed.size();
  std::vector<ScoreDistribution> out;
  out.reserve(w.values.size());
  for (int h = 0; h < w.heads(); ++h) {
    if (w.values[h].size() != static_cast<std::size_t>(w.width) * n)
      fail(ErrorCode::kSupportMismatch, "evidence_from_window: bad window shape");
    // Power-mean aggregation across the window rows.
    std::vector<double> mu(n, 0.0);
    for (int row = 0; row < w.width; ++row) {
      const std::vector<double> p = row_softmax(w, h, row);
      for (std::size_t j = 0; j < n; ++j)
        mu[j] += std::pow(p[j], cfg.alpha);
      count_ops(trace, 3 * n);
    }
    // Inverse power map, then L1 projection onto the simplex.
    std::vector<double> weights(n);
    const double inv_w = 1.0 / static_cast<double>(w.width);
    for (std::size_t j = 0; j < n; ++j)
      weights[j] = std::pow(mu[j] * inv_w, 1.0 / cfg.alpha);
    count_ops(trace, 2 * n);
    out.push_back(normalize(w.allowed, weights));
    dump_scores(trace, "evidence", h, w.allowed, out.back().mass);
  }
  return out;
}

std::vector<ScoreDistribution> prior_from_stats(const CacheStats& stats,
                                                const std::vector<Pos>& allowed,
                                                const SelectorConfig& cfg,
                                                SelectorTrace* trace) {
  if (allowed.empty())
    fail(ErrorCode::kEmptySupport, "prior_from_stats: empty allowed set");
  if (stats.normalized_pos.size() != allowed.size())
    fail(ErrorCode::kSupportMismatch, "prior_from_stats: stats misaligned with J");
  const std::size_t n = allowed.size();
  std::vector<ScoreDistribution> out;
  out.reserve(stats.key_norms.size());
  for (std::size_t h = 0; h < stats.key_norms.size(); ++h) {
    const auto& norms = stats.key_norms[h];
    if (norms.size() != n)
      fail(ErrorCode::kSupportMismatch, "prior_from_stats: key_norms misaligned with J");
    std::vector<double> weights(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double norm = norms[j];
      if (!std::isfinite(norm) || norm < 0.0)
        fail(ErrorCode::kNonFiniteInput, "prior_from_stats: bad key norm");
      const double u = stats.normalized_pos[j];
      const double pi_kn = std::pow(norm + cfg.epsilon, -cfg.gamma);
      const double pi_pos = std::exp(-cfg.beta * std::pow(u, cfg.p_curve)) *
                            std::pow(1.0 - u + cfg.epsilon, cfg.eta);
      weights[j] = pi_kn * pi_pos;
    }
    count_ops(trace, 5 * n);
    out.push_back(normalize(allowed, weights));
    dump_scores(trace, "prior", static_cast<int>(h), allowed, out.back().mass);
  }
  return out;
}

FusedScore fuse(const ScoreDistribution& f, const ScoreDistribution& r,
                const SelectorConfig& cfg, SelectorTrace* trace) {
  if (!same_support(f, r))
    fail(ErrorCode::kSupportMismatch, "fuse: evidence and prior on different supports");
  const double ff = squared_norm(f);
  const double fr = dot(f, r);
  const double rr = squared_norm(r);
  const double denom = ff - 2.0 * fr + rr;  // == |f - r|^2 >= 0
  double lambda = 0.0;
  if (std::abs(denom) >= cfg.epsilon) {
    lambda = (ff - fr) / denom;
    lambda = std::clamp(lambda, 0.0, cfg.lambda_clip);
  }
  FusedScore result;
  result.evidence = f;
  result.prior = r;
  result.lambda_star = lambda;
  result.fused.support = f.support;
  result.fused.mass.resize(f.mass.size());
  for (std::size_t j = 0; j < f.mass.size(); ++j)
    result.fused.mass[j] = (1.0 - lambda) * f.mass[j] + lambda * r.mass[j];
  count_ops(trace, 5 * f.mass.size());
  return result;
}

std::vector<double> refine_soft_nms(const std::vector<double>& z,
                                    const SelectorConfig& cfg,
                                    SelectorTrace* trace) {
  const int n = static_cast<int>(z.size());
  std::vector<double> out(z.size());
  for (int j = 0; j < n; ++j) {
    const int lo = std::max(0, j - cfg.nms_radius);
    const int hi = std::min(n - 1, j + cfg.nms_radius);
    double m = z[j];
    for (int i = lo; i <= hi; ++i) m = std::max(m, z[i]);
    const double gap = m - z[j];  // >= 0 by construction
    out[j] = z[j] - cfg.alpha_soft * gap;
    count_ops(trace, static_cast<std::uint64_t>(hi - lo + 1) + 2);
  }
  return out;
}

std::vector<std::vector<double>> refine_cross_head(
    const std::vector<std::vector<double>>& z, const SelectorConfig& cfg,
    SelectorTrace* trace) {
  const std::size_t heads = z.size();
  if (heads == 0) return {};
  const std::size_t n = z[0].size();
  for (const auto& zh : z)
    if (zh.size() != n)
      fail(ErrorCode::kSupportMismatch, "refine_cross_head: ragged score matrix");
  std::vector<std::vector<double>> out(heads, std::vector<double>(n));
  std::vector<double> resp(heads);
  for (std::size_t j = 0; j < n; ++j) {
    double max_s = z[0][j];
    for (std::size_t h = 1; h < heads; ++h) max_s = std::max(max_s, z[h][j]);
    double sum = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      resp[h] = std::exp((z[h][j] - max_s) / cfg.temperature);
      sum += resp[h];
    }
    for (std::size_t h = 0; h < heads; ++h) {
      const double r = resp[h] / sum;
      out[h][j] = z[h][j] + cfg.alpha_cross * std::log(std::max(r, cfg.epsilon));
    }
    count_ops(trace, 6 * heads);
  }
  return out;
}

std::vector<Pos> select_top_k(const std::vector<double>& scores,
                              const std::vector<Pos>& allowed, int k) {
  if (scores.size() != allowed.size())
    fail(ErrorCode::kSupportMismatch, "select_top_k: score/support mismatch");
  if (k < 0) fail(ErrorCode::kOutOfRange, "select_top_k: negative budget");
  const int n = static_cast<int>(allowed.size());
  if (k == 0) return {};
  if (n <= k) return allowed;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Higher score first; ties broken by lower absolute position.
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](int a, int b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return allowed[a] < allowed[b];
                    });
  std::vector<Pos> picked(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) picked[i] = allowed[order[i]];
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::vector<std::vector<Pos>> run_selector(const LogitWindow& w,
                                           const CacheStats& stats,
                                           const SelectorConfig& cfg,
                                           SelectorTrace* trace) {
  if (w.heads() != static_cast<int>(stats.key_norms.size()))
    fail(ErrorCode::kSupportMismatch, "run_selector: window/stats head count mismatch");

  // Stage A: continuous importance per head.
  const std::vector<ScoreDistribution> evidence = evidence_from_window(w, cfg, trace);
  const std::vector<ScoreDistribution> prior =
      prior_from_stats(stats, w.allowed, cfg, trace);

  const std::size_t heads = evidence.size();
  const std::size_t n = w.allowed.size();
  std::vector<std::vector<double>> z_base(heads, std::vector<double>(n));
  std::vector<FusedScore> fusion(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    fusion[h] = fuse(evidence[h], prior[h], cfg, trace);
    for (std::size_t j = 0; j < n; ++j)
      z_base[h][j] = std::log(fusion[h].fused.mass[j] + cfg.epsilon);
    count_ops(trace, 2 * n);
    dump_scores(trace, "z_base", static_cast<int>(h), w.allowed, z_base[h]);
  }

  // Stage B: log-score refinement and discretization.
  std::vector<std::vector<double>> z_nms(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    z_nms[h] = refine_soft_nms(z_base[h], cfg, trace);
    dump_scores(trace, "soft_nms", static_cast<int>(h), w.allowed, z_nms[h]);
  }
  std::vector<std::vector<double>> z_adj = refine_cross_head(z_nms, cfg, trace);
  for (std::size_t h = 0; h < heads; ++h)
    dump_scores(trace, "cross_head", static_cast<int>(h), w.allowed, z_adj[h]);

  if (trace && trace->capture_stages) {
    trace->stages.base = z_base;
    trace->stages.after_nms = z_nms;
    trace->stages.after_cross = z_adj;
    trace->fusion = fusion;
  }

  std::vector<std::vector<Pos>> selected(heads);
  for (std::size_t h = 0; h < heads; ++h)
    selected[h] = select_top_k(z_adj[h], w.allowed, cfg.k_budget);
  return selected;
}

}  // namespace sfi
