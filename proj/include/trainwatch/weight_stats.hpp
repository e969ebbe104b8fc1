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

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "trainwatch/checkpoint_io.hpp"

namespace trainwatch {

struct Stats {
  std::uint64_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
  double rms = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::uint64_t dropped = 0;  // non-finite values skipped in lenient mode
};

/// Single-pass moment accumulator. Welford update for mean and M2 with a
/// Neumaier-compensated sum of squares for rms; elements must be fed in a
/// fixed order for bit-reproducible output.
class MomentAccumulator {
 public:
  void add(double x) noexcept;
  void add(std::span<const double> xs) noexcept {
    for (double x : xs) add(x);
  }
  std::uint64_t count() const noexcept { return n_; }
  /// Throws Error(EmptyTensor) when nothing was added.
  Stats result() const;

 private:
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double sumsq_ = 0.0;
  double sumsq_comp_ = 0.0;
  double min_ = 0.0;
  double max_ = 0.0;
};

Stats tensor_stats(std::span<const double> values);
/// Streams the tensor from disk; never materializes it.
Stats tensor_stats(const ContainerIndex& index, const TensorRecord& record, NanPolicy policy);

/// Identity and position of a checkpoint in the run. Lives in a sidecar JSON
/// file next to each container.
struct CheckpointMeta {
  std::string checkpoint_id;
  double tokens_b = 0.0;  // billions of training tokens consumed
  std::string stage;
};

CheckpointMeta read_sidecar(const std::filesystem::path& path);
void write_sidecar(const std::filesystem::path& path, const CheckpointMeta& meta);

using LayerRole = std::pair<int, Role>;

struct CheckpointStats {
  std::string checkpoint_id;
  double tokens_b = 0.0;
  std::string stage;
  std::map<LayerRole, Stats> per_layer;
  std::vector<std::string> warnings;

  int layer_count() const noexcept;
};

struct StatsOptions {
  NanPolicy nan_policy = NanPolicy::Strict;
};

/// One Stats per mapped (layer, monitored role). Unmapped tensors are skipped
/// (lenient) or rejected (strict, per cfg.strict()); strict mode also requires every layer in
/// 0..N-1 to carry all nine roles.
CheckpointStats checkpoint_stats(const ContainerIndex& index, const MappingConfig& cfg,
                                 const CheckpointMeta& meta, const StatsOptions& options = {});

enum class TrajectoryMetric { Std, Rms };

std::string_view to_string(TrajectoryMetric metric) noexcept;

struct LayerPoint {
  int layer = 0;
  double value = 0.0;
};

struct Trajectory {
  std::string checkpoint_id;
  Role role = Role::Other;
  std::vector<LayerPoint> points;  // strictly increasing layer
};

struct TrajectorySet {
  TrajectoryMetric metric = TrajectoryMetric::Std;
  std::vector<CheckpointStats> checkpoints;  // strictly increasing tokens_b
  std::map<std::pair<std::string, Role>, Trajectory> trajectories;

  /// Roles present in at least one checkpoint, in enum order.
  std::vector<Role> roles() const;
  /// Nullptr when the (checkpoint, role) pair is absent.
  const Trajectory* find(const std::string& checkpoint_id, Role role) const;
};

TrajectorySet build_trajectory_set(std::vector<CheckpointStats> stats, TrajectoryMetric metric,
                                   bool strict = false);

void to_json(nlohmann::json& j, const Stats& s);
void to_json(nlohmann::json& j, const CheckpointStats& c);
void to_json(nlohmann::json& j, const Trajectory& t);

}  // namespace trainwatch
