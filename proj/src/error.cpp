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

#include "trainwatch/error.hpp"

namespace trainwatch {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::OverlappingRanges: return "OverlappingRanges";
    case ErrorCode::UnknownDtype: return "UnknownDtype";
    case ErrorCode::NameNotFound: return "NameNotFound";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::NaNPolicy: return "NaNPolicy";
    case ErrorCode::StrictUnmapped: return "StrictUnmapped";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyTensor: return "EmptyTensor";
    case ErrorCode::MissingRole: return "MissingRole";
    case ErrorCode::DuplicateTokenCount: return "DuplicateTokenCount";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::EmptyCurve: return "EmptyCurve";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NonMonotonicTokens: return "NonMonotonicTokens";
    case ErrorCode::TooFewCheckpoints: return "TooFewCheckpoints";
    case ErrorCode::RoleAbsent: return "RoleAbsent";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::SpanTooShort: return "SpanTooShort";
    case ErrorCode::UnsortedBoundaries: return "UnsortedBoundaries";
    case ErrorCode::ProportionSumError: return "ProportionSumError";
    case ErrorCode::EmptyDomain: return "EmptyDomain";
    case ErrorCode::UnknownSource: return "UnknownSource";
    case ErrorCode::BadParam: return "BadParam";
    case ErrorCode::EmptyPlan: return "EmptyPlan";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::BadRamp: return "BadRamp";
    case ErrorCode::BadSchedule: return "BadSchedule";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace trainwatch
