// Copyright 2026 The trainwatch Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trainwatch {

enum class ErrorCode {
  // checkpoint-io
  MalformedHeader,
  OverlappingRanges,
  UnknownDtype,
  NameNotFound,
  TruncatedData,
  NaNPolicy,
  StrictUnmapped,
  InvalidConfig,
  // weight-stats
  EmptyTensor,
  MissingRole,
  DuplicateTokenCount,
  GridMismatch,
  // trajectory-metrics
  EmptyCurve,
  IndexOutOfRange,
  NonMonotonicTokens,
  TooFewCheckpoints,
  RoleAbsent,
  // series-monitor
  ParseError,
  MissingColumn,
  EmptySeries,
  WindowTooLarge,
  SpanTooShort,
  UnsortedBoundaries,
  // mixture-planner
  ProportionSumError,
  EmptyDomain,
  UnknownSource,
  BadParam,
  EmptyPlan,
  OutOfRange,
  BadRamp,
  BadSchedule,
  // reporting / fixtures
  EmptyInput,
  IoError,
  BadSpec,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every recoverable failure in the library surfaces as this exception. The
/// code is stable and is what tests and the CLI dispatch on; the message is
/// for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace trainwatch
