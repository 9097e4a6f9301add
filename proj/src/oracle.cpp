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
#include "sfi/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "sfi/error.hpp"
#include "sfi/selector.hpp"

namespace sfi::oracle {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double uniform01(std::uint64_t& state) {
  return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

int uniform_int(std::uint64_t& state, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(splitmix64(state) %
                               static_cast<std::uint64_t>(hi - lo + 1));
}

double normal01(std::uint64_t& state) {
  const double u1 = std::max(uniform01(state), 1e-300);
  const double u2 = uniform01(state);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::string describe_trial(const char* what, int trial, std::size_t size) {
  std::ostringstream os;
  os << "{\"check\":\"" << what << "\",\"trial\":" << trial
     << ",\"support\":" << size << "}";
  return os.str();
}

}  // namespace

std::vector<Pos> random_support(std::uint64_t& state, int size) {
  std::vector<Pos> support(static_cast<std::size_t>(size));
  Pos p = 0;
  for (int i = 0; i < size; ++i) {
    p += 1 + static_cast<Pos>(splitmix64(state) % 4);
    support[i] = p;
  }
  return support;
}

ScoreDistribution random_distribution(std::uint64_t& state, int size,
                                      double shape) {
  ScoreDistribution d;
  d.support = random_support(state, size);
  d.mass.resize(static_cast<std::size_t>(size));
  double sum = 0.0;
  for (double& m : d.mass) {
    const double e = -std::log(std::max(uniform01(state), 1e-300));
    m = std::pow(e, 1.0 / shape);
    sum += m;
  }
  for (double& m : d.mass) m /= sum;
  return d;
}

double kl_objective(const ScoreDistribution& f, const ScoreDistribution& r,
                    const ScoreDistribution& s, double lambda) {
  if (!same_support(f, r) || !same_support(f, s))
    fail(ErrorCode::kSupportMismatch, "kl_objective: mismatched supports");
  const double inf = std::numeric_limits<double>::infinity();
  double kl_f = 0.0;
  double kl_r = 0.0;
  for (std::size_t j = 0; j < s.mass.size(); ++j) {
    const double sj = s.mass[j];
    if (f.mass[j] > 0.0)
      kl_f = (sj <= 0.0) ? inf : kl_f + f.mass[j] * std::log(f.mass[j] / sj);
    if (r.mass[j] > 0.0)
      kl_r = (sj <= 0.0) ? inf : kl_r + r.mass[j] * std::log(r.mass[j] / sj);
  }
  // a term with zero weight cannot poison the objective
  double total = 0.0;
  if (lambda < 1.0) {
    if (std::isinf(kl_f)) return inf;
    total += (1.0 - lambda) * kl_f;
  }
  if (lambda > 0.0) {
    if (std::isinf(kl_r)) return inf;
    total += lambda * kl_r;
  }
  return total;
}

double lambda_grid_min(const ScoreDistribution& f, const ScoreDistribution& r,
                       double lambda_clip, double step) {
  if (step <= 0.0) fail(ErrorCode::kOutOfRange, "lambda_grid_min: step must be > 0");
  if (!same_support(f, r))
    fail(ErrorCode::kSupportMismatch, "lambda_grid_min: mismatched supports");
  const std::size_t n = f.mass.size();
  const long cells = static_cast<long>(std::floor(lambda_clip / step + 1e-12));
  double best_lambda = 0.0;
  double best_value = std::numeric_limits<double>::infinity();
  for (long i = 0;; ++i) {
    double lambda = static_cast<double>(i) * step;
    bool last = false;
    if (i > cells) {
      lambda = lambda_clip;
      last = true;
    }
    double value = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = (1.0 - lambda) * f.mass[j] + lambda * r.mass[j];
      value += s * s;
    }
    // first minimizer wins on ties (up to rounding noise)
    if (value < best_value - 1e-15) {
      best_value = value;
      best_lambda = lambda;
    }
    if (last || lambda >= lambda_clip) break;
  }
  return best_lambda;
}

ScoreDistribution geometric_mixture(const ScoreDistribution& f,
                                    const ScoreDistribution& r, double lambda) {
  if (!same_support(f, r))
    fail(ErrorCode::kSupportMismatch, "geometric_mixture: mismatched supports");
  ScoreDistribution out;
  out.support = f.support;
  out.mass.resize(f.mass.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < f.mass.size(); ++j) {
    out.mass[j] = std::pow(f.mass[j], 1.0 - lambda) * std::pow(r.mass[j], lambda);
    sum += out.mass[j];
  }
  if (sum <= 0.0)
    fail(ErrorCode::kEmptySupport, "geometric_mixture: all-zero product vector");
  for (double& m : out.mass) m /= sum;
  return out;
}

std::vector<Pos> exhaustive_top_k(const std::vector<double>& scores,
                                  const std::vector<Pos>& positions, int k) {
  const int n = static_cast<int>(scores.size());
  if (positions.size() != scores.size())
    fail(ErrorCode::kSupportMismatch, "exhaustive_top_k: size mismatch");
  if (n > 20) fail(ErrorCode::kOutOfRange, "exhaustive_top_k: support too large to enumerate");
  if (k >= n) return positions;
  if (k <= 0) return {};

  std::vector<int> idx(static_cast<std::size_t>(k));
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<Pos> best;
  double best_sum = -std::numeric_limits<double>::infinity();
  while (true) {
    double sum = 0.0;
    std::vector<Pos> tuple(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      sum += scores[idx[i]];
      tuple[i] = positions[idx[i]];
    }
    if (sum > best_sum ||
        (sum == best_sum &&
         std::lexicographical_compare(tuple.begin(), tuple.end(), best.begin(),
                                      best.end()))) {
      best_sum = sum;
      best = tuple;
    }
    // next combination in lexicographic index order
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return best;
}

MaskedAttentionResult masked_attention_reference(
    const ToyModel& model, const std::vector<TokenId>& prompt,
    const std::vector<std::vector<std::vector<Pos>>>& masks,
    const std::vector<Pos>& capture_allowed, PoolMode pool) {
  const ModelSpec& spec = model.spec();
  const int hidden = spec.hidden();
  const int d = spec.head_dim;
  const int hq = spec.n_query_heads;
  const int hk = spec.n_kv_heads;
  const int ff = spec.ff_dim();
  const int group = hq / hk;
  const int n = static_cast<int>(prompt.size());
  if (!masks.empty() && static_cast<int>(masks.size()) != spec.n_layers)
    fail(ErrorCode::kSupportMismatch, "masked_attention_reference: one mask per layer");

  // Per layer KV history, quantized to 32-bit per the storage contract.
  std::vector<std::vector<float>> keys(spec.n_layers), values(spec.n_layers);

  auto rms = [&](const std::vector<double>& x, const Eigen::VectorXd& g) {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(ms + 1e-6);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * g(static_cast<int>(i));
    return out;
  };
  auto matvec = [](const Eigen::MatrixXd& w, const std::vector<double>& x) {
    std::vector<double> out(static_cast<std::size_t>(w.rows()), 0.0);
    for (int r = 0; r < w.rows(); ++r) {
      double acc = 0.0;
      for (int c = 0; c < w.cols(); ++c) acc += w(r, c) * x[static_cast<std::size_t>(c)];
      out[static_cast<std::size_t>(r)] = acc;
    }
    return out;
  };
  auto rope = [&](std::vector<double>& vec, int heads, Pos pos) {
    const double p = static_cast<double>(pos - 1);
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < d / 2; ++i) {
        const double theta = p * std::pow(spec.rope_base, -2.0 * i / d);
        const double c = std::cos(theta), s = std::sin(theta);
        const double a = vec[static_cast<std::size_t>(h * d + 2 * i)];
        const double b = vec[static_cast<std::size_t>(h * d + 2 * i + 1)];
        vec[static_cast<std::size_t>(h * d + 2 * i)] = a * c - b * s;
        vec[static_cast<std::size_t>(h * d + 2 * i + 1)] = a * s + b * c;
      }
    }
  };

  MaskedAttentionResult result;
  std::vector<double> last_h;
  for (int row = 0; row < n; ++row) {
    const Pos pos = row + 1;
    std::vector<double> h(static_cast<std::size_t>(hidden));
    for (int i = 0; i < hidden; ++i) h[static_cast<std::size_t>(i)] = model.embedding()(prompt[row], i);
    const bool is_last = row == n - 1;
    if (is_last) {
      result.attn_context.clear();
      if (!capture_allowed.empty())
        result.window_logits.assign(
            static_cast<std::size_t>(spec.n_layers),
            std::vector<std::vector<double>>(
                static_cast<std::size_t>(hk),
                std::vector<double>(capture_allowed.size(),
                                    pool == PoolMode::kMax ? kMaskedLogit : 0.0)));
    }

    for (int l = 0; l < spec.n_layers; ++l) {
      const ToyModel::LayerWeights& lw = model.layer(l);
      const std::vector<double> a = rms(h, lw.ln1);
      std::vector<double> q = matvec(lw.wq, a);
      std::vector<double> k = matvec(lw.wk, a);
      std::vector<double> v = matvec(lw.wv, a);
      rope(q, hq, pos);
      rope(k, hk, pos);
      for (std::size_t i = 0; i < k.size(); ++i) {
        keys[l].push_back(static_cast<float>(k[i]));
        values[l].push_back(static_cast<float>(v[i]));
      }

      std::vector<double> context(static_cast<std::size_t>(hq) * d, 0.0);
      for (int head = 0; head < hk; ++head) {
        // Attendable positions for this row.
        std::vector<Pos> span;
        if (is_last && !masks.empty()) {
          span = masks[l][static_cast<std::size_t>(head)];
        } else {
          span.resize(static_cast<std::size_t>(pos));
          std::iota(span.begin(), span.end(), Pos{1});
        }
        if (span.empty())
          fail(ErrorCode::kEmptySupport, "masked_attention_reference: empty mask");
        for (int g = 0; g < group; ++g) {
          const int qh = head * group + g;
          std::vector<double> logits(span.size());
          double max_logit = -std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < span.size(); ++i) {
            if (span[i] < 1 || span[i] > pos)
              fail(ErrorCode::kOutOfRange, "masked_attention_reference: mask out of range");
            const std::size_t base =
                (static_cast<std::size_t>(span[i] - 1) * hk + head) * d;
            double acc = 0.0;
            for (int c = 0; c < d; ++c)
              acc += q[static_cast<std::size_t>(qh * d + c)] *
                     static_cast<double>(keys[l][base + static_cast<std::size_t>(c)]);
            logits[i] = acc / std::sqrt(static_cast<double>(d));
            max_logit = std::max(max_logit, logits[i]);
          }
          double exp_sum = 0.0;
          std::vector<double> w(span.size());
          for (std::size_t i = 0; i < span.size(); ++i) {
            w[i] = std::exp(logits[i] - max_logit);
            exp_sum += w[i];
          }
          for (std::size_t i = 0; i < span.size(); ++i) {
            const double weight = w[i] / exp_sum;
            const std::size_t base =
                (static_cast<std::size_t>(span[i] - 1) * hk + head) * d;
            for (int c = 0; c < d; ++c)
              context[static_cast<std::size_t>(qh * d + c)] +=
                  weight * static_cast<double>(values[l][base + static_cast<std::size_t>(c)]);
          }
          if (is_last && !capture_allowed.empty()) {
            std::vector<double>& row_out =
                result.window_logits[static_cast<std::size_t>(l)][static_cast<std::size_t>(head)];
            for (std::size_t c = 0; c < capture_allowed.size(); ++c) {
              const Pos j = capture_allowed[c];
              if (j > pos) {
                row_out[c] = kMaskedLogit;
                continue;
              }
              const std::size_t base =
                  (static_cast<std::size_t>(j - 1) * hk + head) * d;
              double acc = 0.0;
              for (int cc = 0; cc < d; ++cc)
                acc += q[static_cast<std::size_t>(qh * d + cc)] *
                       static_cast<double>(keys[l][base + static_cast<std::size_t>(cc)]);
              const double logit = acc / std::sqrt(static_cast<double>(d));
              if (pool == PoolMode::kMean)
                row_out[c] += logit / group;
              else
                row_out[c] = std::max(row_out[c], logit);
            }
          }
        }
      }
      if (is_last) result.attn_context.push_back(context);

      const std::vector<double> o = matvec(lw.wo, context);
      for (int i = 0; i < hidden; ++i) h[static_cast<std::size_t>(i)] += o[static_cast<std::size_t>(i)];
      const std::vector<double> b = rms(h, lw.ln2);
      const std::vector<double> gate = matvec(lw.w_gate, b);
      const std::vector<double> up = matvec(lw.w_up, b);
      std::vector<double> act(static_cast<std::size_t>(ff));
      for (int i = 0; i < ff; ++i) {
        const double g = gate[static_cast<std::size_t>(i)];
        act[static_cast<std::size_t>(i)] = g / (1.0 + std::exp(-g)) * up[static_cast<std::size_t>(i)];
      }
      const std::vector<double> down = matvec(lw.w_down, act);
      for (int i = 0; i < hidden; ++i) h[static_cast<std::size_t>(i)] += down[static_cast<std::size_t>(i)];
    }
    if (is_last) last_h = h;
  }

  const std::vector<double> hf = [&] {
    double ms = 0.0;
    for (double v : last_h) ms += v * v;
    ms /= static_cast<double>(last_h.size());
    const double inv = 1.0 / std::sqrt(ms + 1e-6);
    std::vector<double> out(last_h.size());
    for (std::size_t i = 0; i < last_h.size(); ++i)
      out[i] = last_h[i] * inv * model.final_norm()(static_cast<int>(i));
    return out;
  }();
  result.vocab_logits.resize(static_cast<std::size_t>(spec.vocab_size));
  for (int r = 0; r < spec.vocab_size; ++r) {
    double acc = model.lm_bias()(r);
    for (int c = 0; c < hidden; ++c) acc += model.lm_head()(r, c) * hf[static_cast<std::size_t>(c)];
    result.vocab_logits[static_cast<std::size_t>(r)] = acc;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Randomized cross-checks

OracleReport check_lambda_closed_form(std::uint64_t seed, int trials,
                                      double tolerance, double grid_step) {
  OracleReport report{"lambda_closed_form_vs_grid"};
  std::uint64_t state = seed;
  const double clips[] = {0.02, 0.1, 0.5, 1.0};
  SelectorConfig cfg;
  for (int trial = 0; trial < trials; ++trial) {
    const int size = uniform_int(state, 8, 512);
    const double shape_f = 0.2 + uniform01(state) * 4.8;
    const double shape_r = 0.2 + uniform01(state) * 4.8;
    ScoreDistribution f = random_distribution(state, size, shape_f);
    ScoreDistribution r = random_distribution(state, size, shape_r);
    r.support = f.support;
    cfg.lambda_clip = clips[splitmix64(state) % 4];
    const FusedScore fused = fuse(f, r, cfg);
    const double grid = lambda_grid_min(f, r, cfg.lambda_clip, grid_step);
    const double diff = std::abs(fused.lambda_star - grid);
    if (diff > report.max_abs_error) {
      report.max_abs_error = diff;
      report.worst_case = describe_trial("lambda", trial, f.size());
    }
    if (diff > tolerance) ++report.violations;
  }
  report.trials = trials;
  return report;
}

OracleReport check_fusion_objective(std::uint64_t seed, int trials,
                                    double grid_step) {
  OracleReport report{"fusion_objective_vs_grid_points"};
  std::uint64_t state = seed;
  SelectorConfig cfg;
  for (int trial = 0; trial < trials; ++trial) {
    const int size = uniform_int(state, 8, 128);
    ScoreDistribution f = random_distribution(state, size, 0.2 + uniform01(state) * 4.8);
    ScoreDistribution r = random_distribution(state, size, 0.2 + uniform01(state) * 4.8);
    r.support = f.support;
    cfg.lambda_clip = uniform01(state);
    const FusedScore fused = fuse(f, r, cfg);
    const double lam = fused.lambda_star;
    const double own = kl_objective(f, r, fused.fused, lam);
    // The fused s must minimize the fixed-lambda objective over the whole
    // mixture family sampled on the grid.
    bool violated = false;
    double worst_gap = 0.0;
    for (double mu = 0.0; mu <= cfg.lambda_clip + 1e-15; mu += grid_step) {
      ScoreDistribution s_mu;
      s_mu.support = f.support;
      s_mu.mass.resize(f.mass.size());
      for (std::size_t j = 0; j < f.mass.size(); ++j)
        s_mu.mass[j] = (1.0 - mu) * f.mass[j] + mu * r.mass[j];
      const double value = kl_objective(f, r, s_mu, lam);
      worst_gap = std::min(worst_gap, value - own);
      if (value < own - 1e-12) violated = true;
    }
    report.max_abs_error = std::max(report.max_abs_error, -worst_gap);
    if (violated) {
      ++report.violations;
      report.worst_case = describe_trial("fusion_objective", trial, f.size());
    }
  }
  report.trials = trials;
  return report;
}

OracleReport check_kl_minimizer(std::uint64_t seed, int trials, int perturbations) {
  OracleReport report{"kl_minimizer_vs_perturbations"};
  std::uint64_t state = seed;
  const double sigmas[] = {0.01, 0.1, 0.5};
  for (int trial = 0; trial < trials; ++trial) {
    const int size = uniform_int(state, 8, 128);
    ScoreDistribution f = random_distribution(state, size, 0.2 + uniform01(state) * 4.8);
    ScoreDistribution r = random_distribution(state, size, 0.2 + uniform01(state) * 4.8);
    r.support = f.support;
    const double lambda = uniform01(state);
    ScoreDistribution s;
    s.support = f.support;
    s.mass.resize(f.mass.size());
    for (std::size_t j = 0; j < f.mass.size(); ++j)
      s.mass[j] = (1.0 - lambda) * f.mass[j] + lambda * r.mass[j];
    const double own = kl_objective(f, r, s, lambda);
    for (int p = 0; p < perturbations; ++p) {
      const double sigma = sigmas[splitmix64(state) % 3];
      std::vector<double> weights(s.mass.size());
      for (std::size_t j = 0; j < weights.size(); ++j)
        weights[j] = s.mass[j] * std::exp(sigma * normal01(state));
      const ScoreDistribution sp = normalize(s.support, weights);
      const double value = kl_objective(f, r, sp, lambda);
      if (!(value > own)) {
        ++report.violations;
        report.worst_case = describe_trial("kl_minimizer", trial, s.size());
      }
      report.max_abs_error = std::max(report.max_abs_error, own - value);
    }
  }
  report.trials = trials;
  return report;
}

OracleReport check_amgm_dominance(std::uint64_t seed, int trials) {
  OracleReport report{"amgm_dominance"};
  std::uint64_t state = seed;
  for (int trial = 0; trial < trials; ++trial) {
    const int size = uniform_int(state, 8, 32);
    ScoreDistribution f = random_distribution(state, size, 0.2 + uniform01(state) * 4.8);
    ScoreDistribution r = random_distribution(state, size, 0.2 + uniform01(state) * 4.8);
    r.support = f.support;
    const double lambda = uniform01(state);
    for (std::size_t j = 0; j < f.mass.size(); ++j) {
      const double arith = (1.0 - lambda) * f.mass[j] + lambda * r.mass[j];
      const double geom = std::pow(f.mass[j], 1.0 - lambda) * std::pow(r.mass[j], lambda);
      // floating-point slack only; the inequality itself is exact
      if (arith < geom - 1e-12 * std::max(arith, geom)) {
        ++report.violations;
        report.worst_case = describe_trial("amgm", trial, f.size());
      }
    }
  }
  report.trials = trials;
  return report;
}

OracleReport check_w1_exactness(std::uint64_t seed, int trials, double tolerance) {
  OracleReport report{"w1_evidence_equals_softmax"};
  std::uint64_t state = seed;
  for (int trial = 0; trial < trials; ++trial) {
    const int size = uniform_int(state, 2, 64);
    LogitWindow w;
    w.width = 1;
    w.allowed = random_support(state, size);
    w.values.resize(1);
    w.values[0].resize(static_cast<std::size_t>(size));
    for (double& v : w.values[0]) v = (uniform01(state) - 0.5) * 40.0;
    SelectorConfig cfg;
    cfg.alpha = std::max(uniform01(state), 1e-3);
    const std::vector<ScoreDistribution> f = evidence_from_window(w, cfg);
    // direct softmax, no shift (logits bounded by construction)
    double sum = 0.0;
    for (double v : w.values[0]) sum += std::exp(v);
    double worst = 0.0;
    for (std::size_t j = 0; j < f[0].mass.size(); ++j)
      worst = std::max(worst, std::abs(f[0].mass[j] - std::exp(w.values[0][j]) / sum));
    report.max_abs_error = std::max(report.max_abs_error, worst);
    if (worst > tolerance) {
      ++report.violations;
      report.worst_case = describe_trial("w1", trial, w.allowed.size());
    }
  }
  report.trials = trials;
  return report;
}

OracleReport check_top_k(std::uint64_t seed, int trials) {
  OracleReport report{"top_k_vs_exhaustive"};
  std::uint64_t state = seed;
  for (int trial = 0; trial < trials; ++trial) {
    const int size = uniform_int(state, 1, 12);
    const int k = uniform_int(state, 0, 6);
    const std::vector<Pos> positions = random_support(state, size);
    std::vector<double> scores(static_cast<std::size_t>(size));
    const bool quantized = uniform01(state) < 0.5;
    for (double& s : scores) {
      s = uniform01(state) * 2.0 - 1.0;
      if (quantized) s = std::round(s * 4.0) / 4.0;  // force ties
    }
    const std::vector<Pos> got = select_top_k(scores, positions, k);
    const std::vector<Pos> want = exhaustive_top_k(scores, positions, k);
    if (got != want) {
      ++report.violations;
      report.worst_case = describe_trial("top_k", trial, positions.size());
    }
  }
  report.trials = trials;
  return report;
}

OracleReport check_attention_equivalence(std::uint64_t seed, int trials,
                                         double tolerance) {
  OracleReport report{"sparse_attention_vs_masked_reference"};
  std::uint64_t state = seed;
  ModelSpec spec;
  spec.n_layers = 2;
  spec.n_kv_heads = 2;
  spec.n_query_heads = 4;
  spec.head_dim = 16;
  spec.vocab_size = 64;
  spec.max_positions = 512;
  for (int trial = 0; trial < trials; ++trial) {
    const ToyModel model = ToyModel::random(spec, splitmix64(state));
    const int len = uniform_int(state, 4, 128);
    std::vector<TokenId> prompt(static_cast<std::size_t>(len));
    for (TokenId& t : prompt) t = uniform_int(state, 0, spec.vocab_size - 1);

    const int n_sink = uniform_int(state, 0, std::min(4, len - 2));
    const int recent_len = uniform_int(state, 1, std::min(16, len - n_sink));
    const Pos recent_start = static_cast<Pos>(len - recent_len + 1);
    std::vector<Pos> sink(static_cast<std::size_t>(n_sink));
    std::iota(sink.begin(), sink.end(), Pos{1});

    KvStore store(spec);
    std::vector<TokenId> block(prompt.begin(), prompt.end() - 1);
    prefill_dense(model, block, store, 1, {}, PoolMode::kMean);

    std::vector<SupportSet> support(static_cast<std::size_t>(spec.n_layers));
    std::vector<std::vector<std::vector<Pos>>> masks(
        static_cast<std::size_t>(spec.n_layers));
    for (int l = 0; l < spec.n_layers; ++l) {
      SupportSet& s = support[l];
      s.sink = sink;
      s.recent_start = recent_start;
      s.recent_len = recent_len;
      s.selected.resize(static_cast<std::size_t>(spec.n_kv_heads));
      masks[l].resize(static_cast<std::size_t>(spec.n_kv_heads));
      for (int h = 0; h < spec.n_kv_heads; ++h) {
        for (Pos p = n_sink + 1; p < recent_start; ++p)
          if (uniform01(state) < 0.3) s.selected[h].push_back(p);
        std::vector<Pos>& mask = masks[l][static_cast<std::size_t>(h)];
        mask = sink;
        mask.insert(mask.end(), s.selected[h].begin(), s.selected[h].end());
        for (Pos p = recent_start; p <= len; ++p) mask.push_back(p);
      }
      store.reorganize(l, s.sink, s.selected);
    }

    const StepOutput got = sparse_attention_step(model, prompt.back(), store, support);
    const MaskedAttentionResult want = masked_attention_reference(model, prompt, masks);

    double scale = 0.0;
    for (double v : want.vocab_logits) scale = std::max(scale, std::abs(v));
    double worst = 0.0;
    for (std::size_t i = 0; i < want.vocab_logits.size(); ++i)
      worst = std::max(worst, std::abs(got.vocab_logits[i] - want.vocab_logits[i]));
    const double rel = worst / (scale + 1e-300);
    report.max_abs_error = std::max(report.max_abs_error, worst);
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (rel > tolerance) {
      ++report.violations;
      report.worst_case = describe_trial("attention", trial, prompt.size());
    }
  }
  report.trials = trials;
  return report;
}

std::vector<OracleReport> run_all(std::uint64_t seed) {
  std::vector<OracleReport> reports;
  reports.push_back(check_lambda_closed_form(seed + 1, 1000, 2e-5, 1e-5));
  reports.push_back(check_fusion_objective(seed + 2, 50, 1e-3));
  reports.push_back(check_kl_minimizer(seed + 3, 200, 100));
  reports.push_back(check_amgm_dominance(seed + 4, 100000));
  reports.push_back(check_w1_exactness(seed + 5, 100, 1e-12));
  reports.push_back(check_top_k(seed + 6, 500));
  reports.push_back(check_attention_equivalence(seed + 7, 200, 1e-6));
  return reports;
}

}  // namespace sfi::oracle
