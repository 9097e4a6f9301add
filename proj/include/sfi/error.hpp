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

#include <stdexcept>
#include <string>

namespace sfi {

enum class ErrorCode {
  kConfig,
  kEmptySupport,
  kSupportMismatch,
  kNonFiniteInput,
  kOverlapViolation,
  kStaleCompact,
  kOutOfRange,
  kBadWeightFile,
  kContextOverflow,
  kIo,
};

/// Structured error carrying a machine-checkable code plus a human message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kEmptySupport: return "empty_support";
    case ErrorCode::kSupportMismatch: return "support_mismatch";
    case ErrorCode::kNonFiniteInput: return "non_finite_input";
    case ErrorCode::kOverlapViolation: return "overlap_violation";
    case ErrorCode::kStaleCompact: return "stale_compact";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kBadWeightFile: return "bad_weight_file";
    case ErrorCode::kContextOverflow: return "context_overflow";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace sfi
