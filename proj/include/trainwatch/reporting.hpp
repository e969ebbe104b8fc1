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
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trainwatch/series_monitor.hpp"
#include "trainwatch/trajectory_metrics.hpp"
#include "trainwatch/weight_stats.hpp"

namespace trainwatch {

/// Stage band fill colors, assigned by stage order (wraps after eight).
inline constexpr const char* kStagePalette[8] = {
    "#dbe9f6", "#fde3cc", "#d9f0d3", "#f9d6d5", "#e5dcf0", "#eadbd0", "#f8dcec", "#e3e3e3",
};

/// Line colors, assigned by series order (wraps after ten).
inline constexpr const char* kLinePalette[10] = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
};

struct ChartSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

ChartSeries to_chart_series(const MetricSeries& series);
/// x is the midpoint of each checkpoint pair, y the normalized distance.
ChartSeries to_chart_series(const DistanceSeries& series);

struct ChartStyle {
  std::string title;
  std::string x_label = "tokens (B)";
  std::string y_label = "value";
};

/// Fixed 960x540 SVG with one polyline per series and stage bands behind.
/// Numbers are printed with 6 significant digits; output is a pure function
/// of the arguments. Throws Error(EmptyInput) if no series has a point.
std::string render_line_chart(const std::vector<ChartSeries>& series,
                              const std::vector<StageBoundary>& boundaries,
                              const ChartStyle& style);

/// One polyline per selected checkpoint (all when `checkpoints` is empty),
/// x = layer index, y = the set's metric. Throws Error(RoleAbsent).
std::string render_layer_curves(const TrajectorySet& set, Role role,
                                const std::vector<std::string>& checkpoints = {});

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ChartFile {
  std::string kind;  // "series" or "layer_curves"
  std::string label;
  std::string svg;
};

struct TableFile {
  std::string label;
  std::string csv;
};

struct InputDigest {
  std::string path;
  std::string sha256;
};

struct ReportBundle {
  std::string title;
  std::vector<ChartFile> charts;
  std::vector<TableFile> tables;
  std::vector<InputDigest> provenance;
};

struct WrittenFile {
  std::string kind;
  std::string path;  // relative to the bundle directory
  std::string sha256;
};

/// Writes index.json, one .svg per chart and one .csv per table. File names
/// are slugs of the labels.
std::vector<WrittenFile> write_report_bundle(const ReportBundle& bundle,
                                             const std::filesystem::path& dir);

std::string slugify(std::string_view label);

}  // namespace trainwatch
