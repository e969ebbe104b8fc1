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
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace trainwatch {

enum class Direction { LowerBetter, HigherBetter };

struct SeriesPoint {
  double tokens_b = 0.0;
  double value = 0.0;

  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

/// Loss or downstream-score time series keyed by training tokens (billions).
struct MetricSeries {
  std::string name;
  std::vector<SeriesPoint> points;  // tokens_b non-decreasing, values finite
  Direction direction = Direction::LowerBetter;
};

struct ColumnSchema {
  std::string tokens_column = "tokens_b";
  std::string value_column = "value";
};

/// Reads JSON-lines or CSV-with-header. The format is chosen by extension
/// (.csv is CSV, anything else is sniffed from the first non-blank byte).
/// Points come back sorted; exact duplicate rows collapse to one.
MetricSeries ingest_series(const std::filesystem::path& path, const ColumnSchema& schema = {},
                           Direction direction = Direction::LowerBetter);
MetricSeries parse_series_text(const std::string& text, bool csv, const ColumnSchema& schema,
                               Direction direction, std::string name = {});

struct SpikeParams {
  std::size_t window = 50;
  double threshold = 6.0;
  double mad_floor = 1e-6;
};

struct SpikeEvent {
  std::size_t index = 0;
  double tokens_b = 0.0;
  double value = 0.0;
  double baseline = 0.0;  // median of the preceding window
  double score = 0.0;     // robust z-score in the adverse direction
};

/// Robust spike detector: a point is flagged when its adverse deviation from
/// the median of the previous `window` points exceeds `threshold` times
/// 1.4826 * MAD (MAD clamped below at mad_floor).
std::vector<SpikeEvent> detect_spikes(const MetricSeries& series, const SpikeParams& params = {});

struct PlateauParams {
  double window_b = 50.0;
  double slope_eps = 1e-3;  // value per 1B tokens
};

struct PlateauEvent {
  double window_start_b = 0.0;
  double window_end_b = 0.0;
  double slope_per_b = 0.0;  // mean of the member window slopes
};

struct WindowSlope {
  double start_b = 0.0;
  double end_b = 0.0;
  double slope_per_b = 0.0;
};

/// OLS slope over every full token window of width window_b, anchored at each
/// point both forward and backward. Windows with fewer than two distinct
/// tokens are skipped.
std::vector<WindowSlope> window_slopes(const MetricSeries& series, double window_b);

/// Windows with |slope| < slope_eps merged into maximal overlapping events.
std::vector<PlateauEvent> detect_plateaus(const MetricSeries& series, const PlateauParams& params);

struct StageBoundary {
  std::string stage;
  double start_tokens_b = 0.0;
};

std::vector<StageBoundary> load_boundaries(const std::filesystem::path& path);
/// Throws Error(UnsortedBoundaries) unless non-empty, first at 0, strictly increasing.
void validate_boundaries(const std::vector<StageBoundary>& boundaries);

struct AnnotatedPoint {
  SeriesPoint point;
  std::string stage;
};

struct StageSummary {
  std::string stage;
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double last = 0.0;
};

struct AnnotatedSeries {
  std::vector<AnnotatedPoint> points;
  std::vector<StageSummary> summaries;  // boundary order, stages with points only
};

/// Half-open stage intervals [start, next_start).
AnnotatedSeries annotate_stages(const MetricSeries& series,
                                const std::vector<StageBoundary>& boundaries);

std::string spikes_csv(const std::vector<SpikeEvent>& events);
std::string plateaus_csv(const std::vector<PlateauEvent>& events);

void to_json(nlohmann::json& j, const SpikeEvent& e);
void to_json(nlohmann::json& j, const PlateauEvent& e);
void to_json(nlohmann::json& j, const StageSummary& s);

}  // namespace trainwatch
