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

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "trainwatch/weight_stats.hpp"

namespace trainwatch {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Entry point shared by the binary and the tests. `args` excludes argv[0].
/// Machine output goes to `out` (or files under --out); diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct DiscoveredCheckpoint {
  std::filesystem::path container;
  CheckpointMeta meta;
};

/// Containers with a `<stem>.meta.json` sidecar, ordered by tokens_b.
std::vector<DiscoveredCheckpoint> discover_run(const std::filesystem::path& dir);

/// Stats for every checkpoint of a run using up to `jobs` threads; the result
/// is in tokens_b order regardless of completion order.
std::vector<CheckpointStats> scan_run(const std::vector<DiscoveredCheckpoint>& run,
                                      const MappingConfig& cfg, const StatsOptions& options,
                                      unsigned jobs);

}  // namespace trainwatch
