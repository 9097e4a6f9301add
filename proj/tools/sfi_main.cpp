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
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sfi/error.hpp"
#include "sfi/harness.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& spec_path, const std::string& config_path,
            std::uint64_t seed, const std::string& out, bool trace) {
  sfi::ExperimentSpec spec = sfi::load_experiment_file(spec_path);
  if (!config_path.empty()) spec.config = sfi::load_config_file(config_path);
  if (seed != 0) spec.model_seed = seed;
  if (!out.empty()) spec.out_dir = out;
  if (trace) spec.trace_selector = true;
  const sfi::RunReport report = sfi::run_experiment(spec);
  std::cout << sfi::report_to_json(report);
  if (report.mode == sfi::RunMode::kBoth) {
    std::cout << "token_match_rate=" << report.mean_token_match_rate
              << " logit_cosine=" << report.mean_logit_cosine << "\n";
  }
  return 0;
}

int cmd_stability(std::uint64_t seed, int n_seeds, int top_k, int max_new,
                  int prompts_per_seed, double embed_scale, double logit_bias,
                  const std::string& out) {
  sfi::ModelSpec spec;
  spec.n_layers = 2;
  spec.n_kv_heads = 2;
  spec.n_query_heads = 4;
  spec.head_dim = 16;
  spec.vocab_size = 256;
  const sfi::TriggerConfig trig;  // default boundary ids
  int direction_ok = 0;
  std::ostringstream csv;
  csv << "seed,within_mean,boundary_mean,within_pairs,boundary_pairs\n";
  for (int s = 0; s < n_seeds; ++s) {
    const std::uint64_t model_seed = seed + static_cast<std::uint64_t>(s);
    const sfi::ToyModel model = sfi::make_segmented_model(
        spec, model_seed, trig.trigger_tokens, embed_scale, logit_bias);
    const auto prompts = sfi::generate_prompts(model_seed * 77 + 13, prompts_per_seed,
                                               48, 96, spec.vocab_size,
                                               trig.trigger_tokens, 0.05);
    double within_sum = 0.0, boundary_sum = 0.0;
    int within_n = 0, boundary_n = 0;
    for (const auto& prompt : prompts) {
      const sfi::StabilityReport rep =
          sfi::measure_support_stability(model, prompt, top_k, trig, max_new);
      within_sum += rep.within_mean * rep.within_pairs;
      boundary_sum += rep.boundary_mean * rep.boundary_pairs;
      within_n += rep.within_pairs;
      boundary_n += rep.boundary_pairs;
    }
    const double within = within_n ? within_sum / within_n : 0.0;
    const double boundary = boundary_n ? boundary_sum / boundary_n : 0.0;
    csv << model_seed << ',' << within << ',' << boundary << ',' << within_n
        << ',' << boundary_n << '\n';
    std::cout << "seed " << model_seed << ": within=" << within
              << " (" << within_n << " pairs) boundary=" << boundary << " ("
              << boundary_n << " pairs)"
              << (within >= boundary ? "  [stable-within]" : "  [inverted]")
              << "\n";
    if (within >= boundary && boundary_n > 0) ++direction_ok;
  }
  std::cout << "within >= boundary in " << direction_ok << "/" << n_seeds
            << " seeds\n";
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "stability.csv") << csv.str();
  }
  return direction_ok * 2 >= n_seeds ? 0 : 1;
}

int cmd_bench(const std::vector<int>& lengths, const std::vector<double>& retentions,
              int repeats, std::uint64_t seed, const std::string& out) {
  const auto rows = sfi::bench_attention(lengths, retentions, repeats, seed);
  const std::string csv = sfi::bench_to_csv(rows);
  std::cout << csv;
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "bench.csv") << csv;
  }
  return 0;
}

int cmd_oracle(std::uint64_t seed, const std::string& out) {
  const auto reports = sfi::oracle::run_all(seed);
  bool all_ok = true;
  for (const auto& r : reports) {
    std::cout << (r.passed() ? "[PASS] " : "[FAIL] ") << r.name << " (trials="
              << r.trials << ", max_abs_err=" << r.max_abs_error
              << ", violations=" << r.violations << ")\n";
    all_ok = all_ok && r.passed();
  }
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "oracle_report.json")
        << sfi::oracle_reports_to_json(reports);
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slow-fast decoding harness"};
  app.require_subcommand(1);

  std::string spec_path, config_path, out;
  std::uint64_t seed = 0;
  bool trace = false;

  CLI::App* run = app.add_subcommand("run", "run an experiment spec");
  run->add_option("--spec", spec_path, "experiment spec file")->required();
  run->add_option("--config", config_path, "decoding config file");
  run->add_option("--seed", seed, "model seed override (0 keeps the spec value)");
  run->add_option("--out", out, "output directory");
  run->add_flag("--trace", trace, "dump selector debug JSON lines");

  std::uint64_t st_seed = 1;
  int st_seeds = 5, st_topk = 32, st_max_new = 128, st_prompts = 8;
  double st_scale = 4.0, st_bias = 1.0;
  CLI::App* stab = app.add_subcommand("stability", "support-stability measurement");
  stab->add_option("--seed", st_seed, "base model seed");
  stab->add_option("--seeds", st_seeds, "number of seeds");
  stab->add_option("--k", st_topk, "top-k overlap budget");
  stab->add_option("--max-new", st_max_new, "decode steps per prompt");
  stab->add_option("--prompts", st_prompts, "prompts per seed");
  stab->add_option("--embed-scale", st_scale, "boundary embedding scale");
  stab->add_option("--bias", st_bias, "boundary logit bias");
  stab->add_option("--out", out, "output directory");

  std::vector<int> lengths = {4096, 8192, 16384};
  std::vector<double> retentions = {0.016, 0.063, 0.125, 0.25, 0.5, 1.0};
  int repeats = 5;
  std::uint64_t bench_seed = 7;
  CLI::App* bench = app.add_subcommand("bench", "attention kernel microbenchmark");
  bench->add_option("--lengths", lengths, "KV lengths");
  bench->add_option("--retentions", retentions, "retention ratios");
  bench->add_option("--repeats", repeats, "timed repeats (>= 3)");
  bench->add_option("--seed", bench_seed, "fill seed");
  bench->add_option("--out", out, "output directory");

  std::uint64_t oracle_seed = 2026;
  CLI::App* oracle = app.add_subcommand("oracle", "run the full oracle suite");
  oracle->add_option("--seed", oracle_seed, "suite seed");
  oracle->add_option("--out", out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(spec_path, config_path, seed, out, trace);
    if (stab->parsed())
      return cmd_stability(st_seed, st_seeds, st_topk, st_max_new, st_prompts,
                           st_scale, st_bias, out);
    if (bench->parsed()) return cmd_bench(lengths, retentions, repeats, bench_seed, out);
    if (oracle->parsed()) return cmd_oracle(oracle_seed, out);
  } catch (const sfi::Error& e) {
    std::cerr << "error [" << sfi::error_code_name(e.code()) << "]: " << e.what()
              << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
