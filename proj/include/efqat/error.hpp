// Copyright 2026 The efqat Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EFQAT_ERROR_HPP_
#define EFQAT_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace efqat {

// Values mirror efqat_status in efqat.h.
enum class ErrorCode : int {
  kDimension = 1,
  kConfig = 2,
  kContract = 3,
  kDegenerateRange = 4,
  kIo = 5,
  kParse = 6,
  kCheckpoint = 7,
  kDiverged = 8,
  kReconcile = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define EFQAT_DEFINE_ERROR(Name, Code)                                   \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  };

EFQAT_DEFINE_ERROR(DimensionError, kDimension)
EFQAT_DEFINE_ERROR(ConfigError, kConfig)
EFQAT_DEFINE_ERROR(ContractError, kContract)
EFQAT_DEFINE_ERROR(DegenerateRangeError, kDegenerateRange)
EFQAT_DEFINE_ERROR(IoError, kIo)
EFQAT_DEFINE_ERROR(ParseError, kParse)
EFQAT_DEFINE_ERROR(CheckpointError, kCheckpoint)
EFQAT_DEFINE_ERROR(DivergenceError, kDiverged)
EFQAT_DEFINE_ERROR(ReconcileError, kReconcile)

#undef EFQAT_DEFINE_ERROR

}  // namespace efqat

#endif  // EFQAT_ERROR_HPP_
