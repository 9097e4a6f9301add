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
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sfi/config.hpp"
#include "sfi/distribution.hpp"
#include "sfi/error.hpp"
#include "sfi/harness.hpp"
#include "sfi/oracle.hpp"
#include "sfi/scheduler.hpp"
#include "sfi/selector.hpp"

namespace py = pybind11;

PYBIND11_MODULE(_sfi, m) {
  m.doc() = "slow-fast decoding: selector, scheduler and reference attention";

  py::register_exception<sfi::Error>(m, "SfiError");

  py::enum_<sfi::PoolMode>(m, "PoolMode")
      .value("mean", sfi::PoolMode::kMean)
      .value("max", sfi::PoolMode::kMax);

  py::class_<sfi::SelectorConfig>(m, "SelectorConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &sfi::SelectorConfig::alpha)
      .def_readwrite("gamma", &sfi::SelectorConfig::gamma)
      .def_readwrite("beta", &sfi::SelectorConfig::beta)
      .def_readwrite("p_curve", &sfi::SelectorConfig::p_curve)
      .def_readwrite("eta", &sfi::SelectorConfig::eta)
      .def_readwrite("lambda_clip", &sfi::SelectorConfig::lambda_clip)
      .def_readwrite("alpha_soft", &sfi::SelectorConfig::alpha_soft)
      .def_readwrite("alpha_cross", &sfi::SelectorConfig::alpha_cross)
      .def_readwrite("temperature", &sfi::SelectorConfig::temperature)
      .def_readwrite("nms_radius", &sfi::SelectorConfig::nms_radius)
      .def_readwrite("epsilon", &sfi::SelectorConfig::epsilon)
      .def_readwrite("k_budget", &sfi::SelectorConfig::k_budget)
      .def_readwrite("pool", &sfi::SelectorConfig::pool)
      .def("validate", &sfi::SelectorConfig::validate);

  py::class_<sfi::TriggerConfig>(m, "TriggerConfig")
      .def(py::init<>())
      .def_readwrite("trigger_tokens", &sfi::TriggerConfig::trigger_tokens)
      .def_readwrite("t_max", &sfi::TriggerConfig::t_max)
      .def_readwrite("window_decode", &sfi::TriggerConfig::window_decode)
      .def_readwrite("window_prefill", &sfi::TriggerConfig::window_prefill)
      .def("is_trigger", &sfi::TriggerConfig::is_trigger);

  py::class_<sfi::CacheLimits>(m, "CacheLimits")
      .def(py::init<>())
      .def_readwrite("n_sink", &sfi::CacheLimits::n_sink)
      .def_readwrite("n_recent", &sfi::CacheLimits::n_recent)
      .def_readwrite("k_budget", &sfi::CacheLimits::k_budget);

  py::class_<sfi::Config>(m, "Config")
      .def(py::init<>())
      .def_readwrite("selector", &sfi::Config::selector)
      .def_readwrite("trigger", &sfi::Config::trigger)
      .def_readwrite("limits", &sfi::Config::limits)
      .def("validate", &sfi::Config::validate);

  m.def("default_config", &sfi::default_config);
  m.def("load_config_file", &sfi::load_config_file, py::arg("path"));
  m.def("save_config_file", &sfi::save_config_file, py::arg("config"), py::arg("path"));

  py::class_<sfi::ScoreDistribution>(m, "ScoreDistribution")
      .def(py::init<>())
      .def(py::init([](std::vector<sfi::Pos> support, std::vector<double> mass) {
             sfi::ScoreDistribution d;
             d.support = std::move(support);
             d.mass = std::move(mass);
             return d;
           }),
           py::arg("support"), py::arg("mass"))
      .def_readwrite("support", &sfi::ScoreDistribution::support)
      .def_readwrite("mass", &sfi::ScoreDistribution::mass);

  m.def("validate_distribution", &sfi::validate_distribution);
  m.def("normalize", [](const std::vector<sfi::Pos>& support,
                        const std::vector<double>& weights) {
    return sfi::normalize(support, weights);
  });

  py::class_<sfi::LogitWindow>(m, "LogitWindow")
      .def(py::init<>())
      .def_readwrite("width", &sfi::LogitWindow::width)
      .def_readwrite("allowed", &sfi::LogitWindow::allowed)
      .def_readwrite("values", &sfi::LogitWindow::values);

  py::class_<sfi::CacheStats>(m, "CacheStats")
      .def(py::init<>())
      .def_readwrite("key_norms", &sfi::CacheStats::key_norms)
      .def_readwrite("j_min", &sfi::CacheStats::j_min)
      .def_readwrite("j_max", &sfi::CacheStats::j_max)
      .def_readwrite("normalized_pos", &sfi::CacheStats::normalized_pos);

  m.def("make_cache_stats", &sfi::make_cache_stats, py::arg("key_norms"),
        py::arg("allowed"), py::arg("epsilon") = 1e-8);

  py::class_<sfi::FusedScore>(m, "FusedScore")
      .def_readonly("evidence", &sfi::FusedScore::evidence)
      .def_readonly("prior", &sfi::FusedScore::prior)
      .def_readonly("lambda_star", &sfi::FusedScore::lambda_star)
      .def_readonly("fused", &sfi::FusedScore::fused);

  m.def("evidence_from_window",
        [](const sfi::LogitWindow& w, const sfi::SelectorConfig& cfg) {
          return sfi::evidence_from_window(w, cfg);
        });
  m.def("prior_from_stats",
        [](const sfi::CacheStats& stats, const std::vector<sfi::Pos>& allowed,
           const sfi::SelectorConfig& cfg) {
          return sfi::prior_from_stats(stats, allowed, cfg);
        });
  m.def("fuse", [](const sfi::ScoreDistribution& f, const sfi::ScoreDistribution& r,
                   const sfi::SelectorConfig& cfg) { return sfi::fuse(f, r, cfg); });
  m.def("refine_soft_nms",
        [](const std::vector<double>& z, const sfi::SelectorConfig& cfg) {
          return sfi::refine_soft_nms(z, cfg);
        });
  m.def("refine_cross_head",
        [](const std::vector<std::vector<double>>& z, const sfi::SelectorConfig& cfg) {
          return sfi::refine_cross_head(z, cfg);
        });
  m.def("select_top_k", &sfi::select_top_k, py::arg("scores"), py::arg("allowed"),
        py::arg("k"));
  m.def("run_selector",
        [](const sfi::LogitWindow& w, const sfi::CacheStats& stats,
           const sfi::SelectorConfig& cfg) { return sfi::run_selector(w, stats, cfg); });

  py::class_<sfi::ModelSpec>(m, "ModelSpec")
      .def(py::init<>())
      .def_readwrite("n_layers", &sfi::ModelSpec::n_layers)
      .def_readwrite("n_query_heads", &sfi::ModelSpec::n_query_heads)
      .def_readwrite("n_kv_heads", &sfi::ModelSpec::n_kv_heads)
      .def_readwrite("head_dim", &sfi::ModelSpec::head_dim)
      .def_readwrite("vocab_size", &sfi::ModelSpec::vocab_size)
      .def_readwrite("max_positions", &sfi::ModelSpec::max_positions)
      .def_readwrite("rope_base", &sfi::ModelSpec::rope_base)
      .def("validate", &sfi::ModelSpec::validate);

  py::class_<sfi::ToyModel>(m, "ToyModel")
      .def_static("random", &sfi::ToyModel::random, py::arg("spec"), py::arg("seed"))
      .def_static("load_weights", &sfi::ToyModel::load_weights, py::arg("path"))
      .def("save_weights", &sfi::ToyModel::save_weights, py::arg("path"))
      .def_property_readonly("spec", &sfi::ToyModel::spec);

  py::class_<sfi::SparseState>(m, "SparseState")
      .def(py::init<>())
      .def_readwrite("layer", &sfi::SparseState::layer)
      .def_readwrite("sink", &sfi::SparseState::sink)
      .def_readwrite("recent_start", &sfi::SparseState::recent_start)
      .def_readwrite("recent_len", &sfi::SparseState::recent_len)
      .def_readwrite("selected", &sfi::SparseState::selected)
      .def("recent", &sfi::SparseState::recent);

  m.def("compute_allowed", &sfi::compute_allowed, py::arg("state"),
        py::arg("prefix_len"));
  m.def("next_step_type", &sfi::next_step_type, py::arg("state"), py::arg("trigger"));

  py::class_<sfi::DecodeState>(m, "DecodeState")
      .def_readwrite("t", &sfi::DecodeState::t)
      .def_readwrite("prefix_len", &sfi::DecodeState::prefix_len)
      .def_readwrite("g", &sfi::DecodeState::g)
      .def_readwrite("steps_since_slow", &sfi::DecodeState::steps_since_slow)
      .def_readwrite("last_token", &sfi::DecodeState::last_token)
      .def_readwrite("per_layer", &sfi::DecodeState::per_layer);

  m.def("init_decode_state", &sfi::init_decode_state, py::arg("prompt_len"),
        py::arg("n_layers"), py::arg("n_kv_heads"), py::arg("limits"));

  py::class_<sfi::StepRecord>(m, "StepRecord")
      .def_readonly("t", &sfi::StepRecord::t)
      .def_readonly("slow", &sfi::StepRecord::slow)
      .def_readonly("support_size", &sfi::StepRecord::support_size)
      .def_readonly("allowed_size", &sfi::StepRecord::allowed_size)
      .def_readonly("prefix_len", &sfi::StepRecord::prefix_len)
      .def_property_readonly("cause", [](const sfi::StepRecord& r) {
        switch (r.cause) {
          case sfi::StepCause::kInitial: return "initial";
          case sfi::StepCause::kTrigger: return "trigger";
          case sfi::StepCause::kForced: return "forced";
          default: return "";
        }
      });

  py::class_<sfi::RequestResult>(m, "RequestResult")
      .def_readonly("tokens", &sfi::RequestResult::tokens)
      .def_readonly("log", &sfi::RequestResult::log)
      .def_readonly("step_logits", &sfi::RequestResult::step_logits)
      .def_readonly("total_flops", &sfi::RequestResult::total_flops)
      .def_readonly("total_kv_reads", &sfi::RequestResult::total_kv_reads)
      .def_readonly("dense_equiv_reads", &sfi::RequestResult::dense_equiv_reads)
      .def_readonly("fast_retention", &sfi::RequestResult::fast_retention);

  py::class_<sfi::DenseResult>(m, "DenseResult")
      .def_readonly("tokens", &sfi::DenseResult::tokens)
      .def_readonly("step_logits", &sfi::DenseResult::step_logits)
      .def_readonly("total_kv_reads", &sfi::DenseResult::total_kv_reads)
      .def_readonly("total_flops", &sfi::DenseResult::total_flops);

  m.def(
      "run_request",
      [](const sfi::ToyModel& model, const std::vector<sfi::TokenId>& prompt,
         const sfi::CacheLimits& limits, const sfi::TriggerConfig& trig,
         const sfi::SelectorConfig& cfg, int max_new) {
        return sfi::run_request(model, prompt, limits, trig, cfg, max_new);
      },
      py::arg("model"), py::arg("prompt"), py::arg("limits"), py::arg("trigger"),
      py::arg("selector"), py::arg("max_new"),
      py::call_guard<py::gil_scoped_release>());
  m.def("run_dense", &sfi::run_dense, py::arg("model"), py::arg("prompt"),
        py::arg("max_new"), py::arg("stability_top_k") = 0,
        py::call_guard<py::gil_scoped_release>());

  m.def("flop_model", &sfi::flop_model, py::arg("prefix_len"), py::arg("support"),
        py::arg("slow_fraction"));

  auto oracle = m.def_submodule("oracle", "brute-force reference checks");
  oracle.def("kl_objective", &sfi::oracle::kl_objective);
  oracle.def("lambda_grid_min", &sfi::oracle::lambda_grid_min);
  oracle.def("geometric_mixture", &sfi::oracle::geometric_mixture);
  oracle.def("exhaustive_top_k", &sfi::oracle::exhaustive_top_k);
  py::class_<sfi::oracle::OracleReport>(oracle, "OracleReport")
      .def_readonly("name", &sfi::oracle::OracleReport::name)
      .def_readonly("trials", &sfi::oracle::OracleReport::trials)
      .def_readonly("max_abs_error", &sfi::oracle::OracleReport::max_abs_error)
      .def_readonly("max_rel_error", &sfi::oracle::OracleReport::max_rel_error)
      .def_readonly("violations", &sfi::oracle::OracleReport::violations)
      .def("passed", &sfi::oracle::OracleReport::passed);
  oracle.def("run_all", &sfi::oracle::run_all, py::arg("seed") = 2026,
             py::call_guard<py::gil_scoped_release>());
}
