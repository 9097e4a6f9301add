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
#include "sfi/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sfi/error.hpp"

namespace sfi {

namespace {

using json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

RunMode parse_mode(const std::string& s) {
  if (s == "sfi") return RunMode::kSfi;
  if (s == "dense") return RunMode::kDense;
  if (s == "both") return RunMode::kBoth;
  fail(ErrorCode::kConfig, "experiment: mode must be sfi, dense or both");
}

const char* mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::kSfi: return "sfi";
    case RunMode::kDense: return "dense";
    case RunMode::kBoth: return "both";
  }
  return "?";
}

double jaccard(const std::vector<Pos>& a, const std::vector<Pos>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_of(const std::vector<double>& v, double fallback) {
  if (v.empty()) return fallback;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size())
    fail(ErrorCode::kSupportMismatch, "cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
  return dot / std::sqrt(na * nb);
}

ExperimentSpec load_experiment_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open experiment file: " + path);
  ExperimentSpec spec;
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::kConfig, "experiment: line " + std::to_string(lineno) +
                                   " is not key=value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string val = trim(stripped.substr(eq + 1));
    if (key == "mode") spec.mode = parse_mode(val);
    else if (key == "max_new") spec.max_new = std::stoi(val);
    else if (key == "prompts") spec.prompt_file = resolve(val);
    else if (key == "weights") spec.weights_path = resolve(val);
    else if (key == "model_seed") spec.model_seed = std::stoull(val);
    else if (key == "n_layers") spec.model.n_layers = std::stoi(val);
    else if (key == "n_query_heads") spec.model.n_query_heads = std::stoi(val);
    else if (key == "n_kv_heads") spec.model.n_kv_heads = std::stoi(val);
    else if (key == "head_dim") spec.model.head_dim = std::stoi(val);
    else if (key == "vocab_size") spec.model.vocab_size = std::stoi(val);
    else if (key == "max_positions") spec.model.max_positions = std::stoi(val);
    else if (key == "rope_base") spec.model.rope_base = std::stod(val);
    else if (key == "config") spec.config = load_config_file(resolve(val));
    else if (key == "out") spec.out_dir = resolve(val);
    else if (key == "trace_selector") spec.trace_selector = val == "1" || val == "true";
    else
      fail(ErrorCode::kConfig, "experiment: unknown key '" + key + "' (line " +
                                   std::to_string(lineno) + ")");
  }
  if (spec.prompt_file.empty())
    fail(ErrorCode::kConfig, "experiment: prompts= is required");
  spec.model.validate();
  spec.config.validate();
  return spec;
}

std::vector<std::vector<TokenId>> load_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open prompt file: " + path);
  std::vector<std::vector<TokenId>> prompts;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream ss(line);
    std::vector<TokenId> prompt;
    long long id;
    while (ss >> id) prompt.push_back(static_cast<TokenId>(id));
    if (!ss.eof())
      fail(ErrorCode::kIo, "prompt file: non-numeric token id in: " + line);
    prompts.push_back(std::move(prompt));
  }
  if (prompts.empty()) fail(ErrorCode::kIo, "prompt file has no prompts: " + path);
  return prompts;
}

void save_prompts(const std::vector<std::vector<TokenId>>& prompts,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot open prompt file for writing: " + path);
  for (const auto& prompt : prompts) {
    for (std::size_t i = 0; i < prompt.size(); ++i) {
      if (i) out << ' ';
      out << prompt[i];
    }
    out << '\n';
  }
}

std::vector<std::vector<TokenId>> generate_prompts(
    std::uint64_t seed, int count, int min_len, int max_len, int vocab_size,
    const std::vector<TokenId>& boundary_tokens, double boundary_rate) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(min_len, max_len);
  std::uniform_int_distribution<int> tok_dist(0, vocab_size - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<std::vector<TokenId>> prompts;
  prompts.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int len = len_dist(rng);
    std::vector<TokenId> prompt(static_cast<std::size_t>(len));
    for (TokenId& t : prompt) {
      if (!boundary_tokens.empty() && u01(rng) < boundary_rate) {
        std::uniform_int_distribution<std::size_t> pick(0, boundary_tokens.size() - 1);
        t = boundary_tokens[pick(rng)];
      } else {
        t = tok_dist(rng);
      }
    }
    prompts.push_back(std::move(prompt));
  }
  return prompts;
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

json request_to_json(const RequestReport& r, RunMode mode) {
  json j;
  j["index"] = r.index;
  j["prompt_len"] = r.prompt_len;
  j["new_tokens"] = r.new_tokens;
  j["slow_steps"] = r.slow_steps;
  j["fast_steps"] = r.fast_steps;
  j["slow_fraction"] = r.slow_fraction;
  j["retention_mean"] = r.retention_mean;
  j["flop_ratio"] = r.flop_ratio;
  if (mode == RunMode::kBoth) {
    j["token_match_rate"] = r.token_match_rate;
    j["logit_cosine_mean"] = r.logit_cosine_mean;
  }
  return j;
}

}  // namespace

std::string report_to_json(const RunReport& report) {
  json j;
  j["schema_version"] = report.schema_version;
  j["mode"] = mode_name(report.mode);
  j["aggregate"]["slow_fraction"] = report.mean_slow_fraction;
  j["aggregate"]["retention_mean"] = report.mean_retention;
  j["aggregate"]["flop_ratio"] = report.mean_flop_ratio;
  if (report.mode == RunMode::kBoth) {
    j["aggregate"]["token_match_rate"] = report.mean_token_match_rate;
    j["aggregate"]["logit_cosine_mean"] = report.mean_logit_cosine;
  }
  j["requests"] = json::array();
  for (const RequestReport& r : report.requests)
    j["requests"].push_back(request_to_json(r, report.mode));
  return j.dump(2) + "\n";
}

std::string report_to_csv(const RunReport& report) {
  std::ostringstream os;
  os << "schema_version,request,prompt_len,new_tokens,slow_steps,fast_steps,"
        "slow_fraction,retention_mean,flop_ratio,token_match_rate,"
        "logit_cosine_mean\n";
  os.precision(12);
  for (const RequestReport& r : report.requests) {
    os << report.schema_version << ',' << r.index << ',' << r.prompt_len << ','
       << r.new_tokens << ',' << r.slow_steps << ',' << r.fast_steps << ','
       << r.slow_fraction << ',' << r.retention_mean << ',' << r.flop_ratio << ',';
    if (report.mode == RunMode::kBoth)
      os << r.token_match_rate << ',' << r.logit_cosine_mean;
    else
      os << ',';
    os << '\n';
  }
  return os.str();
}

std::string oracle_reports_to_json(const std::vector<oracle::OracleReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    json j;
    j["name"] = r.name;
    j["trials"] = r.trials;
    j["max_abs_error"] = r.max_abs_error;
    j["max_rel_error"] = r.max_rel_error;
    j["violations"] = r.violations;
    j["worst_case"] = r.worst_case;
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

RunReport run_experiment(const ExperimentSpec& spec) {
  spec.config.validate();
  const ToyModel model = spec.weights_path.empty()
                             ? ToyModel::random(spec.model, spec.model_seed)
                             : ToyModel::load_weights(spec.weights_path);
  const auto prompts = load_prompts(spec.prompt_file);

  RunReport report;
  report.mode = spec.mode;
  std::vector<std::string> step_lines;
  std::vector<std::string> trace_lines;

  for (std::size_t i = 0; i < prompts.size(); ++i) {
    RequestReport rr;
    rr.index = static_cast<int>(i);
    rr.prompt_len = static_cast<int>(prompts[i].size());
    rr.new_tokens = spec.max_new;

    DenseResult dense;
    if (spec.mode != RunMode::kSfi)
      dense = run_dense(model, prompts[i], spec.max_new);

    if (spec.mode == RunMode::kDense) {
      rr.slow_fraction = 1.0;
      rr.retention_mean = 1.0;
      rr.flop_ratio = 1.0;
      rr.slow_steps = spec.max_new;
    } else {
      RunOptions opts;
      opts.collect_logits = spec.mode == RunMode::kBoth;
      opts.trace_selector = spec.trace_selector;
      const RequestResult res = run_request(model, prompts[i], spec.config.limits,
                                            spec.config.trigger, spec.config.selector,
                                            spec.max_new, opts);
      for (const StepRecord& rec : res.log) {
        std::ostringstream os;
        os << "{\"request\":" << i << ','
           << step_record_to_json(rec).substr(1);
        step_lines.push_back(os.str());
        if (rec.slow) ++rr.slow_steps; else ++rr.fast_steps;
      }
      rr.slow_fraction = static_cast<double>(rr.slow_steps) /
                         static_cast<double>(res.log.size());
      rr.retention_mean = mean_of(res.fast_retention, 1.0);
      rr.flop_ratio = res.total_kv_reads == 0
                          ? 1.0
                          : static_cast<double>(res.dense_equiv_reads) /
                                static_cast<double>(res.total_kv_reads);
      if (spec.mode == RunMode::kBoth) {
        int match = 0;
        std::vector<double> cosines;
        for (int s = 0; s < spec.max_new; ++s) {
          if (res.tokens[s] == dense.tokens[s]) ++match;
          cosines.push_back(cosine_similarity(res.step_logits[s], dense.step_logits[s]));
        }
        rr.token_match_rate = static_cast<double>(match) / spec.max_new;
        rr.logit_cosine_mean = mean_of(cosines, 1.0);
      }
      for (const std::string& l : res.selector_trace) trace_lines.push_back(l);
    }
    report.requests.push_back(rr);
  }

  // aggregates
  std::vector<double> sf, rm, fr, tm, lc;
  for (const RequestReport& r : report.requests) {
    sf.push_back(r.slow_fraction);
    rm.push_back(r.retention_mean);
    fr.push_back(r.flop_ratio);
    if (r.token_match_rate >= 0.0) tm.push_back(r.token_match_rate);
    if (r.logit_cosine_mean >= -1.0 && report.mode == RunMode::kBoth)
      lc.push_back(r.logit_cosine_mean);
  }
  report.mean_slow_fraction = mean_of(sf, 1.0);
  report.mean_retention = mean_of(rm, 1.0);
  report.mean_flop_ratio = mean_of(fr, 1.0);
  report.mean_token_match_rate = mean_of(tm, -1.0);
  report.mean_logit_cosine = mean_of(lc, -1.0);

  if (!spec.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(spec.out_dir);
    const fs::path out(spec.out_dir);
    std::ofstream(out / "report.json") << report_to_json(report);
    {
      std::ofstream steps(out / "steps.jsonl");
      for (const std::string& line : step_lines) steps << line << '\n';
    }
    std::ofstream(out / "summary.csv") << report_to_csv(report);
    if (spec.trace_selector) {
      std::ofstream trace(out / "selector_trace.jsonl");
      for (const std::string& line : trace_lines) trace << line << '\n';
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Stability

StabilityReport stability_from_sets(
    const std::vector<std::vector<std::vector<Pos>>>& sets,
    const std::vector<TokenId>& tokens, const TriggerConfig& trig) {
  StabilityReport report;
  double within_sum = 0.0, boundary_sum = 0.0;
  for (std::size_t t = 1; t < sets.size(); ++t) {
    const std::size_t slots = std::min(sets[t - 1].size(), sets[t].size());
    if (slots == 0) continue;
    double overlap = 0.0;
    for (std::size_t s = 0; s < slots; ++s)
      overlap += jaccard(sets[t - 1][s], sets[t][s]);
    overlap /= static_cast<double>(slots);
    // The pair crosses a boundary iff the token emitted between the two
    // steps closes a segment.
    if (trig.is_trigger(tokens[t - 1])) {
      boundary_sum += overlap;
      ++report.boundary_pairs;
    } else {
      within_sum += overlap;
      ++report.within_pairs;
    }
  }
  if (report.within_pairs > 0) report.within_mean = within_sum / report.within_pairs;
  if (report.boundary_pairs > 0)
    report.boundary_mean = boundary_sum / report.boundary_pairs;
  return report;
}

StabilityReport measure_support_stability(const ToyModel& model,
                                          const std::vector<TokenId>& prompt,
                                          int top_k, const TriggerConfig& trig,
                                          int max_new) {
  const DenseResult dense = run_dense(model, prompt, max_new, top_k);
  return stability_from_sets(dense.topk_sets, dense.tokens, trig);
}

ToyModel make_segmented_model(const ModelSpec& spec, std::uint64_t seed,
                              const std::vector<TokenId>& boundary_tokens,
                              double embed_scale, double logit_bias,
                              double base_scale) {
  ToyModel model = ToyModel::random(spec, seed);
  model.mutable_embedding() *= base_scale;
  for (TokenId t : boundary_tokens) {
    if (t < 0 || t >= spec.vocab_size)
      fail(ErrorCode::kOutOfRange, "make_segmented_model: boundary token out of vocab");
    model.mutable_embedding().row(t) *= embed_scale / base_scale;
    model.mutable_lm_bias()(t) += logit_bias;
  }
  // Boundary emissions are made self-avoiding: the LM rows of boundary
  // tokens are projected away from the post-boundary hidden direction, so a
  // boundary token rarely re-triggers on the very next step.
  for (TokenId t : boundary_tokens) {
    KvStore store(spec);
    CaptureSpec cap;
    cap.final_hidden = true;
    const StepOutput out = dense_attention_step(model, t, store, cap);
    Eigen::Map<const Eigen::VectorXd> hf(out.final_hidden.data(),
                                         static_cast<Eigen::Index>(out.final_hidden.size()));
    const Eigen::VectorXd dir = hf.normalized();
    for (TokenId u : boundary_tokens) {
      const double along = model.lm_head().row(u).dot(dir);
      model.mutable_lm_head().row(u) -= along * dir.transpose();
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Cost model and benchmark

double flop_model(double prefix_len, double support, double slow_fraction) {
  if (!(support > 0.0) || support > prefix_len)
    fail(ErrorCode::kOutOfRange, "flop_model: support must be in (0, L]");
  if (slow_fraction < 0.0 || slow_fraction > 1.0)
    fail(ErrorCode::kOutOfRange, "flop_model: slow_fraction must be in [0, 1]");
  const double mixed = slow_fraction * prefix_len + (1.0 - slow_fraction) * support;
  return prefix_len / mixed;
}

std::vector<BenchRow> bench_attention(const std::vector<int>& lengths,
                                      const std::vector<double>& retentions,
                                      int repeats, std::uint64_t seed) {
  if (repeats < 3) fail(ErrorCode::kOutOfRange, "bench_attention: repeats must be >= 3");
  ModelSpec spec;
  spec.n_layers = 1;
  spec.n_kv_heads = 2;
  spec.n_query_heads = 4;
  spec.head_dim = 64;
  spec.vocab_size = 8;
  spec.max_positions = 1 << 20;

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<BenchRow> rows;

  for (int length : lengths) {
    KvStore store(spec);
    const int hd = spec.n_kv_heads * spec.head_dim;
    std::vector<float> k(static_cast<std::size_t>(hd)), v(static_cast<std::size_t>(hd));
    for (int pos = 0; pos < length; ++pos) {
      for (float& x : k) x = dist(rng);
      for (float& x : v) x = dist(rng);
      store.begin_token();
      store.append_layer(0, k.data(), v.data());
      store.end_token();
    }
    std::vector<double> q(static_cast<std::size_t>(spec.n_query_heads) * spec.head_dim);
    std::normal_distribution<double> qd(0.0, 1.0);
    for (double& x : q) x = qd(rng);

    for (double retention : retentions) {
      const int support_size =
          std::clamp(static_cast<int>(std::lround(retention * length)), 1, length);
      SupportSet support;
      const int n_sink = std::min(4, support_size);
      support.sink.resize(static_cast<std::size_t>(n_sink));
      std::iota(support.sink.begin(), support.sink.end(), Pos{1});
      const int recent_len = std::min(256, support_size - n_sink);
      support.recent_len = std::max(recent_len, 0);
      support.recent_start = length - support.recent_len + 1;
      const int n_selected = support_size - n_sink - support.recent_len;
      support.selected.assign(static_cast<std::size_t>(spec.n_kv_heads), {});
      if (n_selected > 0) {
        const Pos lo = n_sink + 1;
        const Pos hi = support.recent_start - 1;
        for (int h = 0; h < spec.n_kv_heads; ++h) {
          std::vector<Pos>& sel = support.selected[h];
          sel.resize(static_cast<std::size_t>(n_selected));
          const double stride = static_cast<double>(hi - lo + 1) / n_selected;
          Pos prev = lo - 1;
          for (int i = 0; i < n_selected; ++i) {
            Pos p = lo + static_cast<Pos>(std::floor(i * stride));
            if (p <= prev) p = prev + 1;
            sel[static_cast<std::size_t>(i)] = p;
            prev = p;
          }
        }
      }
      store.reorganize(0, support.sink, support.selected);

      struct Timing {
        double mean, stddev, median;
      };
      auto time_ms = [&](auto&& fn) {
        std::vector<double> samples;
        samples.reserve(static_cast<std::size_t>(repeats));
        for (int rep = 0; rep <= repeats; ++rep) {  // first is warm-up
          const auto start = std::chrono::steady_clock::now();
          fn();
          const auto stop = std::chrono::steady_clock::now();
          if (rep > 0)
            samples.push_back(
                std::chrono::duration<double, std::milli>(stop - start).count());
        }
        const double mean = mean_of(samples, 0.0);
        double var = 0.0;
        for (double s : samples) var += (s - mean) * (s - mean);
        var /= static_cast<double>(samples.size());
        std::sort(samples.begin(), samples.end());
        const std::size_t n = samples.size();
        const double median = n % 2 ? samples[n / 2]
                                    : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
        return Timing{mean, std::sqrt(var), median};
      };

      volatile double guard = 0.0;
      const Timing dense = time_ms([&] {
        const auto ctx = attention_kernel_dense(store, 0, q, nullptr);
        guard = guard + ctx[0];
      });
      const Timing sparse = time_ms([&] {
        const auto ctx = attention_kernel_sparse(store, 0, q, support, nullptr);
        guard = guard + ctx[0];
      });

      BenchRow row;
      row.length = length;
      row.retention = retention;
      row.support = support_size;
      row.repeats = repeats;
      row.dense_ms_mean = dense.mean;
      row.dense_ms_std = dense.stddev;
      row.dense_ms_median = dense.median;
      row.sparse_ms_mean = sparse.mean;
      row.sparse_ms_std = sparse.stddev;
      row.sparse_ms_median = sparse.median;
      row.speedup = sparse.median > 0.0 ? dense.median / sparse.median : 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bench_to_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "length,retention,support,repeats,dense_ms_mean,dense_ms_std,"
        "dense_ms_median,sparse_ms_mean,sparse_ms_std,sparse_ms_median,speedup\n";
  os.precision(9);
  for (const BenchRow& r : rows)
    os << r.length << ',' << r.retention << ',' << r.support << ',' << r.repeats
       << ',' << r.dense_ms_mean << ',' << r.dense_ms_std << ','
       << r.dense_ms_median << ',' << r.sparse_ms_mean << ',' << r.sparse_ms_std
       << ',' << r.sparse_ms_median << ',' << r.speedup << '\n';
  return os.str();
}

}  // namespace sfi
