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

#include "trainwatch/weight_stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "trainwatch/error.hpp"

namespace trainwatch {

using nlohmann::json;

void MomentAccumulator::add(double x) noexcept {
  if (n_ == 0) {
    min_ = max_ = x;
  } else {
    min_ = std::min(min_, x);
    max_ = std::max(max_, x);
  }
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_);

  const double sq = x * x;
  const double t = sumsq_ + sq;
  if (std::abs(sumsq_) >= std::abs(sq)) {
    sumsq_comp_ += (sumsq_ - t) + sq;
  } else {
    sumsq_comp_ += (sq - t) + sumsq_;
  }
  sumsq_ = t;
}

Stats MomentAccumulator::result() const {
  if (n_ == 0) throw Error(ErrorCode::EmptyTensor, "statistics of an empty tensor");
  const double n = static_cast<double>(n_);
  Stats s;
  s.count = n_;
  s.mean = mean_;
  s.std = std::sqrt(std::max(0.0, m2_ / n));
  s.rms = std::sqrt((sumsq_ + sumsq_comp_) / n);
  s.min = min_;
  s.max = max_;
  return s;
}

Stats tensor_stats(std::span<const double> values) {
  MomentAccumulator acc;
  acc.add(values);
  return acc.result();
}

Stats tensor_stats(const ContainerIndex& index, const TensorRecord& record, NanPolicy policy) {
  MomentAccumulator acc;
  const auto dropped = visit_tensor_values(index, record, policy,
                                           [&](std::span<const double> chunk) { acc.add(chunk); });
  if (acc.count() == 0) {
    throw Error(ErrorCode::EmptyTensor, "tensor '" + record.name + "' has no finite values");
  }
  Stats s = acc.result();
  s.dropped = dropped;
  return s;
}

CheckpointMeta read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open sidecar " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("checkpoint_id") || !doc.contains("tokens_b") ||
      !doc["checkpoint_id"].is_string() || !doc["tokens_b"].is_number()) {
    throw Error(ErrorCode::ParseError,
                path.string() + ": sidecar needs string checkpoint_id and numeric tokens_b");
  }
  CheckpointMeta meta;
  meta.checkpoint_id = doc["checkpoint_id"].get<std::string>();
  meta.tokens_b = doc["tokens_b"].get<double>();
  meta.stage = doc.value("stage", std::string{});
  if (!(meta.tokens_b >= 0.0) || !std::isfinite(meta.tokens_b)) {
    throw Error(ErrorCode::ParseError, path.string() + ": tokens_b must be finite and >= 0");
  }
  return meta;
}

void write_sidecar(const std::filesystem::path& path, const CheckpointMeta& meta) {
  json doc = {{"checkpoint_id", meta.checkpoint_id},
              {"tokens_b", meta.tokens_b},
              {"stage", meta.stage}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

int CheckpointStats::layer_count() const noexcept {
  std::set<int> layers;
  for (const auto& [key, _] : per_layer) layers.insert(key.first);
  return static_cast<int>(layers.size());
}

CheckpointStats checkpoint_stats(const ContainerIndex& index, const MappingConfig& cfg,
                                 const CheckpointMeta& meta, const StatsOptions& options) {
  if (!(meta.tokens_b >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "tokens_b must be >= 0");
  }
  CheckpointStats out;
  out.checkpoint_id = meta.checkpoint_id;
  out.tokens_b = meta.tokens_b;
  out.stage = meta.stage;

  for (const auto& record : index.tensors) {
    const auto slot = map_parameter(record.name, cfg);
    if (!slot || !is_monitored(slot->role)) continue;
    const LayerRole key{slot->layer, slot->role};
    if (out.per_layer.count(key) != 0) {
      const std::string msg = "two tensors map to layer " + std::to_string(slot->layer) + " " +
                              std::string(to_string(slot->role)) + " ('" + record.name + "')";
      if (cfg.strict()) throw Error(ErrorCode::InvalidConfig, msg);
      out.warnings.push_back(msg + "; keeping the first");
      continue;
    }
    Stats s = tensor_stats(index, record, options.nan_policy);
    if (s.dropped > 0) {
      out.warnings.push_back("tensor '" + record.name + "' dropped " + std::to_string(s.dropped) +
                             " non-finite values");
    }
    out.per_layer.emplace(key, s);
  }

  std::set<int> layers;
  for (const auto& [key, _] : out.per_layer) layers.insert(key.first);
  const int max_layer = layers.empty() ? -1 : *layers.rbegin();
  for (int layer = 0; layer <= max_layer; ++layer) {
    for (Role role : kMonitoredRoles) {
      if (out.per_layer.count({layer, role}) != 0) continue;
      const std::string msg = "layer " + std::to_string(layer) + " lacks role " +
                              std::string(to_string(role)) + " in " + index.path.string();
      if (cfg.strict()) throw Error(ErrorCode::MissingRole, msg);
      out.warnings.push_back(msg);
    }
  }
  return out;
}

std::string_view to_string(TrajectoryMetric metric) noexcept {
  return metric == TrajectoryMetric::Std ? "std" : "rms";
}

std::vector<Role> TrajectorySet::roles() const {
  std::set<Role> present;
  for (const auto& [key, _] : trajectories) present.insert(key.second);
  return {present.begin(), present.end()};
}

const Trajectory* TrajectorySet::find(const std::string& checkpoint_id, Role role) const {
  const auto it = trajectories.find({checkpoint_id, role});
  return it == trajectories.end() ? nullptr : &it->second;
}

TrajectorySet build_trajectory_set(std::vector<CheckpointStats> stats, TrajectoryMetric metric,
                                   bool strict) {
  if (stats.empty()) throw Error(ErrorCode::TooFewCheckpoints, "no checkpoints");
  std::stable_sort(stats.begin(), stats.end(),
                   [](const CheckpointStats& a, const CheckpointStats& b) {
                     return a.tokens_b < b.tokens_b;
                   });
  std::set<std::string> ids;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (i > 0 && stats[i].tokens_b == stats[i - 1].tokens_b) {
      throw Error(ErrorCode::DuplicateTokenCount,
                  "checkpoints '" + stats[i - 1].checkpoint_id + "' and '" +
                      stats[i].checkpoint_id + "' share tokens_b " +
                      std::to_string(stats[i].tokens_b));
    }
    if (!ids.insert(stats[i].checkpoint_id).second) {
      throw Error(ErrorCode::InvalidArgument,
                  "duplicate checkpoint id '" + stats[i].checkpoint_id + "'");
    }
  }
  if (strict) {
    const auto& first = stats.front().per_layer;
    for (const auto& c : stats) {
      const bool same = c.per_layer.size() == first.size() &&
                        std::equal(c.per_layer.begin(), c.per_layer.end(), first.begin(),
                                   [](const auto& a, const auto& b) { return a.first == b.first; });
      if (!same) {
        throw Error(ErrorCode::GridMismatch, "checkpoint '" + c.checkpoint_id +
                                                 "' has a different layer/role grid than '" +
                                                 stats.front().checkpoint_id + "'");
      }
    }
  }

  TrajectorySet set;
  set.metric = metric;
  for (const auto& c : stats) {
    // per_layer is ordered by (layer, role), so points arrive in layer order.
    for (const auto& [key, s] : c.per_layer) {
      auto& traj = set.trajectories[{c.checkpoint_id, key.second}];
      traj.checkpoint_id = c.checkpoint_id;
      traj.role = key.second;
      traj.points.push_back({key.first, metric == TrajectoryMetric::Std ? s.std : s.rms});
    }
  }
  set.checkpoints = std::move(stats);
  return set;
}

void to_json(json& j, const Stats& s) {
  j = json{{"count", s.count}, {"mean", s.mean}, {"std", s.std}, {"rms", s.rms},
           {"min", s.min},     {"max", s.max},   {"dropped", s.dropped}};
}

void to_json(json& j, const CheckpointStats& c) {
  json layers = json::array();
  for (const auto& [key, s] : c.per_layer) {
    json entry = s;
    entry["layer"] = key.first;
    entry["role"] = std::string(to_string(key.second));
    layers.push_back(std::move(entry));
  }
  j = json{{"checkpoint_id", c.checkpoint_id},
           {"tokens_b", c.tokens_b},
           {"stage", c.stage},
           {"layer_count", c.layer_count()},
           {"per_layer", std::move(layers)},
           {"warnings", c.warnings}};
}

void to_json(json& j, const Trajectory& t) {
  json points = json::array();
  for (const auto& p : t.points) points.push_back({{"layer", p.layer}, {"value", p.value}});
  j = json{{"checkpoint_id", t.checkpoint_id},
           {"role", std::string(to_string(t.role))},
           {"points", std::move(points)}};
}

}  // namespace trainwatch
