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

#include "trainwatch/trajectory_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "trainwatch/error.hpp"

namespace trainwatch {

using nlohmann::json;

double point_distance(const CurvePoint& a, const CurvePoint& b, const FrechetMode& mode) noexcept {
  if (mode.kind == FrechetKind::ValueOnly) return std::abs(a.value - b.value);
  return std::hypot(mode.layer_axis_scale * (a.layer - b.layer), a.value - b.value);
}

double discrete_frechet(std::span<const CurvePoint> p, std::span<const CurvePoint> q,
                        const FrechetMode& mode) {
  if (p.empty() || q.empty()) throw Error(ErrorCode::EmptyCurve, "Fréchet distance of an empty curve");
  if (mode.kind == FrechetKind::Planar && !(mode.layer_axis_scale >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "layer_axis_scale must be >= 0");
  }
  std::vector<double> prev(q.size());
  std::vector<double> cur(q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double d = point_distance(p[i], q[j], mode);
      double reach;
      if (i == 0 && j == 0) {
        reach = d;
        cur[j] = d;
        continue;
      } else if (i == 0) {
        reach = cur[j - 1];
      } else if (j == 0) {
        reach = prev[j];
      } else {
        reach = std::min({prev[j], prev[j - 1], cur[j - 1]});
      }
      cur[j] = std::max(d, reach);
    }
    std::swap(prev, cur);
  }
  return prev.back();
}

std::vector<CurvePoint> to_curve(const Trajectory& trajectory) {
  std::vector<CurvePoint> curve;
  curve.reserve(trajectory.points.size());
  for (const auto& pt : trajectory.points) {
    curve.push_back({static_cast<double>(pt.layer), pt.value});
  }
  return curve;
}

DistancePoint normalized_distance(const TrajectorySet& set, Role role, std::size_t i,
                                  const FrechetMode& mode) {
  if (i + 1 >= set.checkpoints.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "no checkpoint pair (" + std::to_string(i) + ", " +
                                                std::to_string(i + 1) + ") among " +
                                                std::to_string(set.checkpoints.size()));
  }
  const auto& from = set.checkpoints[i];
  const auto& to = set.checkpoints[i + 1];
  const double gap = to.tokens_b - from.tokens_b;
  if (!(gap > 0.0)) {
    throw Error(ErrorCode::NonMonotonicTokens, "tokens_b does not increase from '" +
                                                   from.checkpoint_id + "' to '" +
                                                   to.checkpoint_id + "'");
  }
  const Trajectory* a = set.find(from.checkpoint_id, role);
  const Trajectory* b = set.find(to.checkpoint_id, role);
  if (a == nullptr || b == nullptr) {
    throw Error(ErrorCode::RoleAbsent, std::string(to_string(role)) + " missing at checkpoint '" +
                                           (a == nullptr ? from : to).checkpoint_id + "'");
  }
  const auto pa = to_curve(*a);
  const auto pb = to_curve(*b);

  DistancePoint out;
  out.role = role;
  out.from_id = from.checkpoint_id;
  out.to_id = to.checkpoint_id;
  out.from_tokens_b = from.tokens_b;
  out.to_tokens_b = to.tokens_b;
  out.stage = to.stage;
  out.raw = discrete_frechet(pa, pb, mode);
  out.token_gap_b = gap;
  out.normalized = out.raw / gap;
  return out;
}

std::vector<DistanceSeries> distance_series(const TrajectorySet& set, const FrechetMode& mode) {
  if (set.checkpoints.size() < 2) {
    throw Error(ErrorCode::TooFewCheckpoints,
                "distance series need >= 2 checkpoints, got " +
                    std::to_string(set.checkpoints.size()));
  }
  std::vector<DistanceSeries> out;
  for (Role role : set.roles()) {
    DistanceSeries series{role, {}};
    for (std::size_t i = 0; i + 1 < set.checkpoints.size(); ++i) {
      series.points.push_back(normalized_distance(set, role, i, mode));
    }
    out.push_back(std::move(series));
  }
  return out;
}

std::vector<CrossRolePoint> cross_role_mean(const std::vector<DistanceSeries>& series) {
  std::vector<CrossRolePoint> out;
  if (series.empty()) return out;
  const std::size_t n = series.front().points.size();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : series) {
      if (i < s.points.size()) {
        sum += s.points[i].normalized;
        ++count;
      }
    }
    const auto& ref = series.front().points[i];
    out.push_back({ref.from_tokens_b, ref.to_tokens_b, sum / static_cast<double>(count)});
  }
  return out;
}

std::string_view to_string(ConvergenceStatus status) noexcept {
  switch (status) {
    case ConvergenceStatus::Converged: return "converged";
    case ConvergenceStatus::Active: return "active";
    case ConvergenceStatus::InsufficientData: return "insufficient data";
  }
  return "insufficient data";
}

std::vector<RoleVerdict> convergence_summary(const std::vector<DistanceSeries>& series,
                                             double epsilon, std::size_t window) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be > 0");
  if (window < 1) throw Error(ErrorCode::InvalidArgument, "window must be >= 1");

  std::vector<RoleVerdict> out;
  for (const auto& s : series) {
    RoleVerdict v;
    v.role = s.role;

    std::map<std::string, std::pair<double, std::size_t>> stage_acc;
    for (const auto& p : s.points) {
      auto& acc = stage_acc[p.stage];
      acc.first += p.normalized;
      ++acc.second;
    }
    for (const auto& [stage, acc] : stage_acc) {
      v.stage_mean_normalized[stage] = acc.first / static_cast<double>(acc.second);
    }

    const auto& pts = s.points;
    if (pts.size() < window) {
      out.push_back(std::move(v));
      continue;
    }
    // Length of the run of below-epsilon values ending at each index.
    std::size_t run = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      run = pts[i].normalized < epsilon ? run + 1 : 0;
      if (run >= window && !v.converged_at) v.converged_at = i;
      if (run < window) v.converged_at.reset();
    }
    v.status = run >= window ? ConvergenceStatus::Converged : ConvergenceStatus::Active;
    out.push_back(std::move(v));
  }
  return out;
}

namespace {
std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string distance_series_csv(const std::vector<DistanceSeries>& series) {
  std::string out = "role,from_tokens_b,to_tokens_b,raw,normalized\n";
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      out += std::string(to_string(s.role)) + "," + fmt17(p.from_tokens_b) + "," +
             fmt17(p.to_tokens_b) + "," + fmt17(p.raw) + "," + fmt17(p.normalized) + "\n";
    }
  }
  return out;
}

void to_json(json& j, const DistancePoint& p) {
  j = json{{"role", std::string(to_string(p.role))},
           {"from_id", p.from_id},
           {"to_id", p.to_id},
           {"from_tokens_b", p.from_tokens_b},
           {"to_tokens_b", p.to_tokens_b},
           {"stage", p.stage},
           {"raw", p.raw},
           {"token_gap_b", p.token_gap_b},
           {"normalized", p.normalized}};
}

void to_json(json& j, const DistanceSeries& s) {
  j = json{{"role", std::string(to_string(s.role))}, {"points", s.points}};
}

void to_json(json& j, const RoleVerdict& v) {
  j = json{{"role", std::string(to_string(v.role))},
           {"status", std::string(to_string(v.status))},
           {"stage_mean_normalized", v.stage_mean_normalized}};
  if (v.converged_at) {
    j["converged_at"] = *v.converged_at;
  } else {
    j["converged_at"] = nullptr;
  }
}

}  // namespace trainwatch
