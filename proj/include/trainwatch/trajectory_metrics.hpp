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

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "trainwatch/weight_stats.hpp"

namespace trainwatch {

struct CurvePoint {
  double layer = 0.0;
  double value = 0.0;
};

enum class FrechetKind { ValueOnly, Planar };

/// ValueOnly couples points in layer order and measures |a - b| on values.
/// Planar uses Euclidean distance on (layer_axis_scale * layer, value).
struct FrechetMode {
  FrechetKind kind = FrechetKind::ValueOnly;
  double layer_axis_scale = 1.0;
};

double point_distance(const CurvePoint& a, const CurvePoint& b, const FrechetMode& mode) noexcept;

/// Discrete Fréchet distance by dynamic programming over a two-row table.
/// O(|p| |q|) time, O(|q|) memory.
double discrete_frechet(std::span<const CurvePoint> p, std::span<const CurvePoint> q,
                        const FrechetMode& mode = {});

std::vector<CurvePoint> to_curve(const Trajectory& trajectory);

struct DistancePoint {
  Role role = Role::Other;
  std::string from_id;
  std::string to_id;
  double from_tokens_b = 0.0;
  double to_tokens_b = 0.0;
  std::string stage;  // stage of the later checkpoint
  double raw = 0.0;
  double token_gap_b = 0.0;
  double normalized = 0.0;  // raw / token_gap_b, distance per 1B tokens

  double midpoint_b() const noexcept { return 0.5 * (from_tokens_b + to_tokens_b); }
};

struct DistanceSeries {
  Role role = Role::Other;
  std::vector<DistancePoint> points;
};

/// Fréchet distance between checkpoints i and i+1 for one role, divided by
/// the token gap between them.
DistancePoint normalized_distance(const TrajectorySet& set, Role role, std::size_t i,
                                  const FrechetMode& mode = {});

/// One series per role present in the set, each with M-1 points.
std::vector<DistanceSeries> distance_series(const TrajectorySet& set, const FrechetMode& mode = {});

/// Mean normalized distance across roles for every consecutive pair.
struct CrossRolePoint {
  double from_tokens_b = 0.0;
  double to_tokens_b = 0.0;
  double mean_normalized = 0.0;
};
std::vector<CrossRolePoint> cross_role_mean(const std::vector<DistanceSeries>& series);

enum class ConvergenceStatus { Converged, Active, InsufficientData };
std::string_view to_string(ConvergenceStatus status) noexcept;

struct RoleVerdict {
  Role role = Role::Other;
  ConvergenceStatus status = ConvergenceStatus::InsufficientData;
  /// First point index at which the trailing window is entirely below epsilon.
  std::optional<std::size_t> converged_at;
  std::map<std::string, double> stage_mean_normalized;
};

/// A role is converged when its last `window` normalized values are all
/// below epsilon. Series shorter than the window are insufficient data.
std::vector<RoleVerdict> convergence_summary(const std::vector<DistanceSeries>& series,
                                             double epsilon, std::size_t window);

/// role,from_tokens_b,to_tokens_b,raw,normalized
std::string distance_series_csv(const std::vector<DistanceSeries>& series);

void to_json(nlohmann::json& j, const DistancePoint& p);
void to_json(nlohmann::json& j, const DistanceSeries& s);
void to_json(nlohmann::json& j, const RoleVerdict& v);

}  // namespace trainwatch
