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
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <vector>

#include "sfi/attention.hpp"
#include "sfi/error.hpp"

namespace sfi {

namespace {

constexpr std::uint32_t kMagic = 0x53464957;   // "SFIW" big-endian spelling
constexpr std::uint32_t kEndianTag = 0x01020304;
constexpr std::uint32_t kVersion = 1;

// Weights are drawn in double, rounded to 32-bit, and held as doubles so the
// in-memory model and the on-disk file agree exactly.
Eigen::MatrixXd random_matrix(int rows, int cols, double stddev,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = static_cast<double>(static_cast<float>(dist(rng)));
  return m;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) fail(ErrorCode::kIo, "cannot open weight file for writing: " + path);
  }
  void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
  void f64(double v) { raw(&v, sizeof(v)); }
  void tensor(const Eigen::MatrixXd& m) {
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) {
        const float f = static_cast<float>(m(r, c));
        raw(&f, sizeof(f));
      }
  }
  void tensor(const Eigen::VectorXd& v) {
    for (int i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v(i));
      raw(&f, sizeof(f));
    }
  }

 private:
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) fail(ErrorCode::kIo, "short write to weight file");
  }
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) fail(ErrorCode::kIo, "cannot open weight file: " + path);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof(v));
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof(v));
    return v;
  }
  Eigen::MatrixXd tensor(int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        float f;
        raw(&f, sizeof(f));
        m(r, c) = static_cast<double>(f);
      }
    return m;
  }
  Eigen::VectorXd vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
      float f;
      raw(&f, sizeof(f));
      v(i) = static_cast<double>(f);
    }
    return v;
  }
  [[noreturn]] void malformed(const std::string& what) {
    fail(ErrorCode::kBadWeightFile,
         "malformed weight file " + path_ + " at offset " +
             std::to_string(offset_) + ": " + what);
  }
  std::size_t offset() const { return offset_; }

 private:
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) malformed("unexpected end of file");
    offset_ += n;
  }
  std::ifstream in_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace

void ModelSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfig, "model spec: " + what); };
  if (n_layers < 1) bad("n_layers must be >= 1");
  if (n_query_heads < 1 || n_kv_heads < 1) bad("head counts must be >= 1");
  if (n_query_heads % n_kv_heads != 0)
    bad("n_query_heads must be a multiple of n_kv_heads");
  if (head_dim < 2 || head_dim % 2 != 0) bad("head_dim must be even and >= 2");
  if (vocab_size < 2) bad("vocab_size must be >= 2");
  if (max_positions < 1) bad("max_positions must be >= 1");
  if (!(rope_base > 0.0)) bad("rope_base must be > 0");
}

ToyModel ToyModel::random(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ToyModel m;
  m.spec_ = spec;
  std::mt19937_64 rng(seed);
  const int hidden = spec.hidden();
  const int ff = spec.ff_dim();
  const double w_std = 1.0 / std::sqrt(static_cast<double>(hidden));
  const double ff_std = 1.0 / std::sqrt(static_cast<double>(ff));

  m.embed_ = random_matrix(spec.vocab_size, hidden, 1.0, rng);
  m.layers_.resize(spec.n_layers);
  for (auto& lw : m.layers_) {
    lw.ln1 = Eigen::VectorXd::Ones(hidden);
    lw.wq = random_matrix(spec.n_query_heads * spec.head_dim, hidden, w_std, rng);
    lw.wk = random_matrix(spec.n_kv_heads * spec.head_dim, hidden, w_std, rng);
    lw.wv = random_matrix(spec.n_kv_heads * spec.head_dim, hidden, w_std, rng);
    lw.wo = random_matrix(hidden, spec.n_query_heads * spec.head_dim, w_std, rng);
    lw.ln2 = Eigen::VectorXd::Ones(hidden);
    lw.w_gate = random_matrix(ff, hidden, w_std, rng);
    lw.w_up = random_matrix(ff, hidden, w_std, rng);
    lw.w_down = random_matrix(hidden, ff, ff_std, rng);
  }
  m.ln_f_ = Eigen::VectorXd::Ones(hidden);
  m.lm_head_ = random_matrix(spec.vocab_size, hidden, w_std, rng);
  m.lm_bias_ = Eigen::VectorXd::Zero(spec.vocab_size);
  return m;
}

void ToyModel::save_weights(const std::string& path) const {
  Writer w(path);
  w.u32(kMagic);
  w.u32(kEndianTag);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(spec_.n_layers));
  w.u32(static_cast<std::uint32_t>(spec_.n_query_heads));
  w.u32(static_cast<std::uint32_t>(spec_.n_kv_heads));
  w.u32(static_cast<std::uint32_t>(spec_.head_dim));
  w.u32(static_cast<std::uint32_t>(spec_.vocab_size));
  w.u32(static_cast<std::uint32_t>(spec_.max_positions));
  w.f64(spec_.rope_base);
  w.tensor(embed_);
  for (const auto& lw : layers_) {
    w.tensor(lw.ln1);
    w.tensor(lw.wq);
    w.tensor(lw.wk);
    w.tensor(lw.wv);
    w.tensor(lw.wo);
    w.tensor(lw.ln2);
    w.tensor(lw.w_gate);
    w.tensor(lw.w_up);
    w.tensor(lw.w_down);
  }
  w.tensor(ln_f_);
  w.tensor(lm_head_);
  w.tensor(lm_bias_);
}

ToyModel ToyModel::load_weights(const std::string& path) {
  Reader r(path);
  if (r.u32() != kMagic) r.malformed("bad magic");
  if (r.u32() != kEndianTag) r.malformed("endianness mismatch");
  if (r.u32() != kVersion) r.malformed("unsupported version");
  ModelSpec spec;
  spec.n_layers = static_cast<int>(r.u32());
  spec.n_query_heads = static_cast<int>(r.u32());
  spec.n_kv_heads = static_cast<int>(r.u32());
  spec.head_dim = static_cast<int>(r.u32());
  spec.vocab_size = static_cast<int>(r.u32());
  spec.max_positions = static_cast<int>(r.u32());
  spec.rope_base = r.f64();
  try {
    spec.validate();
  } catch (const Error& e) {
    r.malformed(e.what());
  }
  ToyModel m;
  m.spec_ = spec;
  const int hidden = spec.hidden();
  const int ff = spec.ff_dim();
  m.embed_ = r.tensor(spec.vocab_size, hidden);
  m.layers_.resize(spec.n_layers);
  for (auto& lw : m.layers_) {
    lw.ln1 = r.vector(hidden);
    lw.wq = r.tensor(spec.n_query_heads * spec.head_dim, hidden);
    lw.wk = r.tensor(spec.n_kv_heads * spec.head_dim, hidden);
    lw.wv = r.tensor(spec.n_kv_heads * spec.head_dim, hidden);
    lw.wo = r.tensor(hidden, spec.n_query_heads * spec.head_dim);
    lw.ln2 = r.vector(hidden);
    lw.w_gate = r.tensor(ff, hidden);
    lw.w_up = r.tensor(ff, hidden);
    lw.w_down = r.tensor(hidden, ff);
  }
  m.ln_f_ = r.vector(hidden);
  m.lm_head_ = r.tensor(spec.vocab_size, hidden);
  m.lm_bias_ = r.vector(spec.vocab_size);
  return m;
}

}  // namespace sfi
