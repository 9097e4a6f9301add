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
#include "sfi/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "sfi/error.hpp"

namespace sfi {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kConfig, "config: " + what);
}

// Shortest representation that parses back to the identical double.
std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail(ErrorCode::kConfig, "config: bad numeric value for " + key + ": '" + s + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail(ErrorCode::kConfig, "config: bad integer value for " + key + ": '" + s + "'");
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void SelectorConfig::validate() const {
  require(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
  require(gamma >= 0.0, "gamma must be >= 0");
  require(beta >= 0.0, "beta must be >= 0");
  require(p_curve >= 1.0, "p_curve must be >= 1");
  require(eta >= 0.0, "eta must be >= 0");
  require(lambda_clip >= 0.0 && lambda_clip <= 1.0, "lambda_clip must be in [0, 1]");
  require(alpha_soft >= 0.0, "alpha_soft must be >= 0");
  require(alpha_cross >= 0.0, "alpha_cross must be >= 0");
  require(temperature > 0.0, "temperature must be > 0");
  require(nms_radius >= 0, "nms_radius must be >= 0");
  require(epsilon > 0.0, "epsilon must be > 0");
  require(k_budget >= 0, "k_budget must be >= 0");
  for (double v : {alpha, gamma, beta, p_curve, eta, lambda_clip, alpha_soft,
                   alpha_cross, temperature, epsilon})
    require(std::isfinite(v), "selector values must be finite");
}

void TriggerConfig::validate() const {
  require(t_max >= 1, "t_max must be >= 1");
  require(window_decode >= 1, "window_decode must be >= 1");
  require(window_prefill >= 1, "window_prefill must be >= 1");
}

bool TriggerConfig::is_trigger(TokenId id) const {
  return std::find(trigger_tokens.begin(), trigger_tokens.end(), id) !=
         trigger_tokens.end();
}

void CacheLimits::validate() const {
  require(n_sink >= 0, "n_sink must be >= 0");
  require(n_recent >= 1, "n_recent must be >= 1");
  require(k_budget >= 0, "k_budget must be >= 0");
}

void Config::validate() const {
  selector.validate();
  trigger.validate();
  limits.validate();
}

Config default_config() { return Config{}; }

void save_config(const Config& cfg, std::ostream& out) {
  const SelectorConfig& s = cfg.selector;
  out << "alpha=" << format_double(s.alpha) << '\n';
  out << "gamma=" << format_double(s.gamma) << '\n';
  out << "beta=" << format_double(s.beta) << '\n';
  out << "p_curve=" << format_double(s.p_curve) << '\n';
  out << "eta=" << format_double(s.eta) << '\n';
  out << "lambda_clip=" << format_double(s.lambda_clip) << '\n';
  out << "alpha_soft=" << format_double(s.alpha_soft) << '\n';
  out << "alpha_cross=" << format_double(s.alpha_cross) << '\n';
  out << "temperature=" << format_double(s.temperature) << '\n';
  out << "nms_radius=" << s.nms_radius << '\n';
  out << "epsilon=" << format_double(s.epsilon) << '\n';
  out << "k_budget=" << s.k_budget << '\n';
  out << "logit_pool=" << (s.pool == PoolMode::kMean ? "mean" : "max") << '\n';
  const TriggerConfig& t = cfg.trigger;
  out << "trigger_tokens=";
  for (std::size_t i = 0; i < t.trigger_tokens.size(); ++i) {
    if (i) out << ',';
    out << t.trigger_tokens[i];
  }
  out << '\n';
  out << "t_max=" << t.t_max << '\n';
  out << "window_decode=" << t.window_decode << '\n';
  out << "window_prefill=" << t.window_prefill << '\n';
  const CacheLimits& l = cfg.limits;
  out << "n_sink=" << l.n_sink << '\n';
  out << "n_recent=" << l.n_recent << '\n';
}

void save_config_file(const Config& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot open config file for writing: " + path);
  save_config(cfg, out);
}

Config load_config(std::istream& in) {
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::kConfig,
           "config: line " + std::to_string(lineno) + " is not key=value: '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string val = trim(stripped.substr(eq + 1));

    if (key == "alpha") cfg.selector.alpha = parse_double(key, val);
    else if (key == "gamma") cfg.selector.gamma = parse_double(key, val);
    else if (key == "beta") cfg.selector.beta = parse_double(key, val);
    else if (key == "p_curve") cfg.selector.p_curve = parse_double(key, val);
    else if (key == "eta") cfg.selector.eta = parse_double(key, val);
    else if (key == "lambda_clip") cfg.selector.lambda_clip = parse_double(key, val);
    else if (key == "alpha_soft") cfg.selector.alpha_soft = parse_double(key, val);
    else if (key == "alpha_cross") cfg.selector.alpha_cross = parse_double(key, val);
    else if (key == "temperature") cfg.selector.temperature = parse_double(key, val);
    else if (key == "nms_radius") cfg.selector.nms_radius = parse_int(key, val);
    else if (key == "epsilon") cfg.selector.epsilon = parse_double(key, val);
    else if (key == "k_budget") {
      // one knob: the per-head selection budget K
      cfg.selector.k_budget = parse_int(key, val);
      cfg.limits.k_budget = cfg.selector.k_budget;
    } else if (key == "logit_pool") {
      if (val == "mean") cfg.selector.pool = PoolMode::kMean;
      else if (val == "max") cfg.selector.pool = PoolMode::kMax;
      else fail(ErrorCode::kConfig, "config: logit_pool must be mean or max");
    } else if (key == "trigger_tokens") {
      cfg.trigger.trigger_tokens.clear();
      if (!val.empty()) {
        std::stringstream ss(val);
        std::string tok;
        while (std::getline(ss, tok, ','))
          cfg.trigger.trigger_tokens.push_back(parse_int(key, trim(tok)));
      }
    } else if (key == "t_max") cfg.trigger.t_max = parse_int(key, val);
    else if (key == "window_decode") cfg.trigger.window_decode = parse_int(key, val);
    else if (key == "window_prefill") cfg.trigger.window_prefill = parse_int(key, val);
    else if (key == "n_sink") cfg.limits.n_sink = parse_int(key, val);
    else if (key == "n_recent") cfg.limits.n_recent = parse_int(key, val);
    else
      fail(ErrorCode::kConfig, "config: unknown key '" + key + "' (line " +
                                   std::to_string(lineno) + ")");
  }
  cfg.validate();
  return cfg;
}

Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config file: " + path);
  return load_config(in);
}

}  // namespace sfi
