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

#include "trainwatch/series_monitor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "trainwatch/error.hpp"

namespace trainwatch {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string unquote(std::string_view s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s[i] == '"' && i + 2 < s.size() && s[i + 1] == '"') ++i;
      out.push_back(s[i]);
    }
    return out;
  }
  return std::string(s);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"') {
      quoted = !quoted;
      current.push_back(c);
    } else if (c == ',' && !quoted) {
      fields.push_back(unquote(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(unquote(current));
  return fields;
}

[[noreturn]] void row_error(std::size_t row, const std::string& what) {
  throw Error(ErrorCode::ParseError, "row " + std::to_string(row) + ": " + what);
}

double parse_number(std::string_view text, std::size_t row, const std::string& column) {
  text = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    row_error(row, "column '" + column + "' is not a number: '" + std::string(text) + "'");
  }
  if (!std::isfinite(v)) row_error(row, "column '" + column + "' is not finite");
  return v;
}

double median_of(std::vector<double>& v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

double ols_slope(const std::vector<SeriesPoint>& pts, std::size_t first, std::size_t last) {
  const double n = static_cast<double>(last - first + 1);
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t k = first; k <= last; ++k) {
    mx += pts[k].tokens_b;
    my += pts[k].value;
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t k = first; k <= last; ++k) {
    const double dx = pts[k].tokens_b - mx;
    sxy += dx * (pts[k].value - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

MetricSeries parse_series_text(const std::string& text, bool csv, const ColumnSchema& schema,
                               Direction direction, std::string name) {
  MetricSeries series;
  series.name = std::move(name);
  series.direction = direction;

  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  std::ptrdiff_t tokens_col = -1;
  std::ptrdiff_t value_col = -1;
  bool have_header = false;

  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    if (csv) {
      const auto fields = split_csv_line(line);
      if (!have_header) {
        for (std::size_t c = 0; c < fields.size(); ++c) {
          if (fields[c] == schema.tokens_column) tokens_col = static_cast<std::ptrdiff_t>(c);
          if (fields[c] == schema.value_column) value_col = static_cast<std::ptrdiff_t>(c);
        }
        if (tokens_col < 0 || value_col < 0) {
          throw Error(ErrorCode::MissingColumn,
                      "header lacks '" + (tokens_col < 0 ? schema.tokens_column : schema.value_column) + "'");
        }
        have_header = true;
        continue;
      }
      const auto need = static_cast<std::size_t>(std::max(tokens_col, value_col));
      if (fields.size() <= need) row_error(row, "too few fields");
      series.points.push_back({parse_number(fields[static_cast<std::size_t>(tokens_col)], row,
                                            schema.tokens_column),
                               parse_number(fields[static_cast<std::size_t>(value_col)], row,
                                            schema.value_column)});
    } else {
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        row_error(row, std::string("invalid JSON: ") + e.what());
      }
      if (!obj.is_object()) row_error(row, "not a JSON object");
      SeriesPoint p;
      for (const auto* col : {&schema.tokens_column, &schema.value_column}) {
        const auto it = obj.find(*col);
        if (it == obj.end()) {
          throw Error(ErrorCode::MissingColumn, "row " + std::to_string(row) + " lacks '" + *col + "'");
        }
        double v = 0.0;
        if (it->is_number()) {
          v = it->get<double>();
        } else if (it->is_string()) {
          v = parse_number(it->get<std::string>(), row, *col);
        } else {
          row_error(row, "column '" + *col + "' is not a number");
        }
        if (!std::isfinite(v)) row_error(row, "column '" + *col + "' is not finite");
        (col == &schema.tokens_column ? p.tokens_b : p.value) = v;
      }
      series.points.push_back(p);
    }
  }
  if (series.points.empty()) throw Error(ErrorCode::EmptySeries, "series has no data rows");

  std::sort(series.points.begin(), series.points.end(), [](const auto& a, const auto& b) {
    return std::tie(a.tokens_b, a.value) < std::tie(b.tokens_b, b.value);
  });
  series.points.erase(std::unique(series.points.begin(), series.points.end()), series.points.end());
  return series;
}

MetricSeries ingest_series(const std::filesystem::path& path, const ColumnSchema& schema,
                           Direction direction) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  bool csv = path.extension() == ".csv";
  if (!csv && path.extension() != ".jsonl" && path.extension() != ".ndjson") {
    const auto first = text.find_first_not_of(" \t\r\n");
    csv = first != std::string::npos && text[first] != '{';
  }
  return parse_series_text(text, csv, schema, direction, path.stem().string());
}

std::vector<SpikeEvent> detect_spikes(const MetricSeries& series, const SpikeParams& params) {
  if (params.window < 5) throw Error(ErrorCode::InvalidArgument, "spike window must be >= 5");
  if (!(params.threshold > 0.0) || !(params.mad_floor > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold and MAD floor must be > 0");
  }
  const auto& pts = series.points;
  if (params.window >= pts.size()) {
    throw Error(ErrorCode::WindowTooLarge, "window " + std::to_string(params.window) +
                                               " >= series length " + std::to_string(pts.size()));
  }

  std::vector<SpikeEvent> events;
  std::vector<double> buf(params.window);
  for (std::size_t i = params.window; i < pts.size(); ++i) {
    for (std::size_t k = 0; k < params.window; ++k) buf[k] = pts[i - params.window + k].value;
    const double median = median_of(buf);
    for (auto& x : buf) x = std::abs(x - median);
    const double mad = median_of(buf);
    const double scale = 1.4826 * std::max(mad, params.mad_floor);
    const double adverse = series.direction == Direction::LowerBetter ? pts[i].value - median
                                                                      : median - pts[i].value;
    const double score = adverse / scale;
    if (score > params.threshold) {
      events.push_back({i, pts[i].tokens_b, pts[i].value, median, score});
    }
  }
  return events;
}

std::vector<WindowSlope> window_slopes(const MetricSeries& series, double window_b) {
  if (!(window_b > 0.0)) throw Error(ErrorCode::InvalidArgument, "plateau window must be > 0");
  const auto& pts = series.points;
  if (pts.empty() || pts.back().tokens_b - pts.front().tokens_b < window_b) {
    throw Error(ErrorCode::SpanTooShort, "series spans less than one plateau window");
  }
  const double t0 = pts.front().tokens_b;
  const double t_end = pts.back().tokens_b;

  std::set<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double t = pts[i].tokens_b;
    if (t + window_b <= t_end) {
      const auto it = std::upper_bound(pts.begin(), pts.end(), t + window_b,
                                       [](double v, const SeriesPoint& p) { return v < p.tokens_b; });
      ranges.emplace(i, static_cast<std::size_t>(it - pts.begin()) - 1);
    }
    if (t - window_b >= t0) {
      const auto it = std::lower_bound(pts.begin(), pts.end(), t - window_b,
                                       [](const SeriesPoint& p, double v) { return p.tokens_b < v; });
      ranges.emplace(static_cast<std::size_t>(it - pts.begin()), i);
    }
  }

  std::vector<WindowSlope> out;
  for (const auto& [first, last] : ranges) {
    if (pts[last].tokens_b == pts[first].tokens_b) continue;
    out.push_back({pts[first].tokens_b, pts[last].tokens_b, ols_slope(pts, first, last)});
  }
  return out;
}

std::vector<PlateauEvent> detect_plateaus(const MetricSeries& series, const PlateauParams& params) {
  if (!(params.slope_eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "slope_eps must be > 0");
  const auto windows = window_slopes(series, params.window_b);

  std::vector<PlateauEvent> events;
  std::size_t members = 0;
  double slope_sum = 0.0;
  auto close = [&] {
    if (members > 0) events.back().slope_per_b = slope_sum / static_cast<double>(members);
    members = 0;
    slope_sum = 0.0;
  };
  for (const auto& w : windows) {
    if (!(std::abs(w.slope_per_b) < params.slope_eps)) continue;
    if (members > 0 && w.start_b <= events.back().window_end_b) {
      events.back().window_end_b = std::max(events.back().window_end_b, w.end_b);
    } else {
      close();
      events.push_back({w.start_b, w.end_b, 0.0});
    }
    slope_sum += w.slope_per_b;
    ++members;
  }
  close();
  return events;
}

void validate_boundaries(const std::vector<StageBoundary>& boundaries) {
  if (boundaries.empty()) throw Error(ErrorCode::UnsortedBoundaries, "no stage boundaries");
  if (boundaries.front().start_tokens_b != 0.0) {
    throw Error(ErrorCode::UnsortedBoundaries, "first stage boundary must start at 0");
  }
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (!(boundaries[i].start_tokens_b > boundaries[i - 1].start_tokens_b)) {
      throw Error(ErrorCode::UnsortedBoundaries,
                  "boundary '" + boundaries[i].stage + "' does not start after '" +
                      boundaries[i - 1].stage + "'");
    }
  }
}

std::vector<StageBoundary> load_boundaries(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::ParseError, path.string() + ": expected a JSON list");
  std::vector<StageBoundary> out;
  for (const auto& b : doc) {
    if (!b.is_object() || !b.contains("stage") || !b.contains("start_tokens_b") ||
        !b["stage"].is_string() || !b["start_tokens_b"].is_number()) {
      throw Error(ErrorCode::ParseError,
                  path.string() + ": each boundary needs string stage and numeric start_tokens_b");
    }
    out.push_back({b["stage"].get<std::string>(), b["start_tokens_b"].get<double>()});
  }
  validate_boundaries(out);
  return out;
}

AnnotatedSeries annotate_stages(const MetricSeries& series,
                                const std::vector<StageBoundary>& boundaries) {
  validate_boundaries(boundaries);
  AnnotatedSeries out;
  std::vector<StageSummary> acc(boundaries.size());
  for (std::size_t b = 0; b < boundaries.size(); ++b) acc[b].stage = boundaries[b].stage;

  for (const auto& p : series.points) {
    if (p.tokens_b < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "point at negative tokens_b precedes every stage");
    }
    const auto it = std::upper_bound(
        boundaries.begin(), boundaries.end(), p.tokens_b,
        [](double t, const StageBoundary& b) { return t < b.start_tokens_b; });
    const auto b = static_cast<std::size_t>(it - boundaries.begin()) - 1;
    out.points.push_back({p, boundaries[b].stage});
    auto& s = acc[b];
    s.min = s.count == 0 ? p.value : std::min(s.min, p.value);
    s.mean += p.value;
    s.last = p.value;
    ++s.count;
  }
  for (auto& s : acc) {
    if (s.count == 0) continue;
    s.mean /= static_cast<double>(s.count);
    out.summaries.push_back(s);
  }
  return out;
}

std::string spikes_csv(const std::vector<SpikeEvent>& events) {
  std::string out = "index,tokens_b,value,baseline,score\n";
  for (const auto& e : events) {
    out += std::to_string(e.index) + "," + fmt17(e.tokens_b) + "," + fmt17(e.value) + "," +
           fmt17(e.baseline) + "," + fmt17(e.score) + "\n";
  }
  return out;
}

std::string plateaus_csv(const std::vector<PlateauEvent>& events) {
  std::string out = "window_start_b,window_end_b,slope_per_b\n";
  for (const auto& e : events) {
    out += fmt17(e.window_start_b) + "," + fmt17(e.window_end_b) + "," + fmt17(e.slope_per_b) + "\n";
  }
  return out;
}

void to_json(json& j, const SpikeEvent& e) {
  j = json{{"index", e.index},       {"tokens_b", e.tokens_b}, {"value", e.value},
           {"baseline", e.baseline}, {"score", e.score}};
}

void to_json(json& j, const PlateauEvent& e) {
  j = json{{"window_start_b", e.window_start_b},
           {"window_end_b", e.window_end_b},
           {"slope_per_b", e.slope_per_b}};
}

void to_json(json& j, const StageSummary& s) {
  j = json{{"stage", s.stage}, {"count", s.count}, {"mean", s.mean}, {"min", s.min}, {"last", s.last}};
}

}  // namespace trainwatch
