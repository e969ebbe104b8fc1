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

#include "trainwatch/reporting.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"
#include "trainwatch/error.hpp"

namespace trainwatch {

using nlohmann::json;

namespace {

constexpr double kWidth = 960.0;
constexpr double kHeight = 540.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 780.0;
constexpr double kTop = 50.0;
constexpr double kBottom = 480.0;
constexpr int kTargetTicks = 5;

std::string tick_label(double v) {
  if (v == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

/// Tick positions on a 1-2-5 grid inside [lo, hi].
std::vector<double> nice_ticks(double lo, double hi) {
  const double raw = (hi - lo) / kTargetTicks;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double unit = raw / mag;
  const double step = (unit < 1.5 ? 1.0 : unit < 3.5 ? 2.0 : unit < 7.5 ? 5.0 : 10.0) * mag;
  std::vector<double> out;
  const auto first = static_cast<long long>(std::ceil(lo / step - 1e-9));
  for (long long k = first;; ++k) {
    double v = static_cast<double>(k) * step;
    if (v > hi + 1e-9 * step) break;
    if (std::abs(v) < 1e-12 * step) v = 0.0;
    out.push_back(v);
  }
  return out;
}

std::string num(double v) {
  if (v == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range padded(double lo, double hi) {
  if (lo == hi) {
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.05;
    return {lo - pad, hi + pad};
  }
  return {lo, hi};
}

/// Data range plus a small vertical margin so extremes clear the frame.
Range padded_y(double lo, double hi) {
  const Range r = padded(lo, hi);
  const double m = 0.05 * (r.hi - r.lo);
  return {r.lo - m, r.hi + m};
}

class Canvas {
 public:
  Canvas(Range x, Range y) : x_(x), y_(y) {}

  double px(double x) const { return kLeft + (x - x_.lo) / (x_.hi - x_.lo) * (kRight - kLeft); }
  double py(double y) const { return kBottom - (y - y_.lo) / (y_.hi - y_.lo) * (kBottom - kTop); }

  const Range& x() const { return x_; }
  const Range& y() const { return y_; }

 private:
  Range x_;
  Range y_;
};

void open_svg(std::ostringstream& out, const std::string& title) {
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(kWidth)
      << "\" height=\"" << num(kHeight) << "\" viewBox=\"0 0 " << num(kWidth) << " "
      << num(kHeight) << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
      << "\" fill=\"#ffffff\"/>\n"
      << "<text x=\"" << num(kWidth / 2) << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">"
      << xml_escape(title) << "</text>\n";
}

void draw_axes(std::ostringstream& out, const Canvas& c, const ChartStyle& style) {
  out << "<g stroke=\"#000000\" stroke-width=\"1\">\n"
      << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kBottom) << "\" x2=\"" << num(kRight)
      << "\" y2=\"" << num(kBottom) << "\"/>\n"
      << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft)
      << "\" y2=\"" << num(kBottom) << "\"/>\n";
  const auto xt = nice_ticks(c.x().lo, c.x().hi);
  const auto yt = nice_ticks(c.y().lo, c.y().hi);
  for (double xv : xt) {
    out << "<line x1=\"" << num(c.px(xv)) << "\" y1=\"" << num(kBottom) << "\" x2=\""
        << num(c.px(xv)) << "\" y2=\"" << num(kBottom + 5) << "\"/>\n";
  }
  for (double yv : yt) {
    out << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(c.py(yv)) << "\" x2=\""
        << num(kLeft) << "\" y2=\"" << num(c.py(yv)) << "\"/>\n";
  }
  out << "</g>\n<g fill=\"#000000\">\n";
  for (double xv : xt) {
    out << "<text x=\"" << num(c.px(xv)) << "\" y=\"" << num(kBottom + 18)
        << "\" text-anchor=\"middle\">" << tick_label(xv) << "</text>\n";
  }
  for (double yv : yt) {
    out << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(c.py(yv) + 4)
        << "\" text-anchor=\"end\">" << tick_label(yv) << "</text>\n";
  }
  out << "<text x=\"" << num((kLeft + kRight) / 2) << "\" y=\"" << num(kBottom + 42)
      << "\" text-anchor=\"middle\">" << xml_escape(style.x_label) << "</text>\n"
      << "<text x=\"14\" y=\"" << num((kTop + kBottom) / 2)
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << num((kTop + kBottom) / 2)
      << ")\">" << xml_escape(style.y_label) << "</text>\n"
      << "</g>\n";
}

void draw_bands(std::ostringstream& out, const Canvas& c,
                const std::vector<StageBoundary>& boundaries) {
  if (boundaries.empty()) return;
  out << "<g class=\"stages\">\n";
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    const double start = std::max(boundaries[i].start_tokens_b, c.x().lo);
    const double stop =
        std::min(i + 1 < boundaries.size() ? boundaries[i + 1].start_tokens_b : c.x().hi, c.x().hi);
    if (!(stop > start)) continue;
    const double x0 = c.px(start);
    const double x1 = c.px(stop);
    out << "<rect x=\"" << num(x0) << "\" y=\"" << num(kTop) << "\" width=\"" << num(x1 - x0)
        << "\" height=\"" << num(kBottom - kTop) << "\" fill=\"" << kStagePalette[i % 8]
        << "\"/>\n"
        << "<text x=\"" << num(x0 + 4) << "\" y=\"" << num(kTop + 14) << "\" fill=\"#555555\">"
        << xml_escape(boundaries[i].stage) << "</text>\n";
  }
  out << "</g>\n";
}

void draw_series(std::ostringstream& out, const Canvas& c, const std::vector<ChartSeries>& series) {
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (series[s].points.empty()) continue;
    out << "<polyline fill=\"none\" stroke=\"" << kLinePalette[s % 10]
        << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const auto& [x, y] : series[s].points) {
      out << (first ? "" : " ") << num(c.px(x)) << "," << num(c.py(y));
      first = false;
    }
    out << "\"/>\n";
  }
  out << "<g class=\"legend\">\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = kTop + 10 + 18 * static_cast<double>(s);
    out << "<line x1=\"" << num(kRight + 15) << "\" y1=\"" << num(y) << "\" x2=\""
        << num(kRight + 35) << "\" y2=\"" << num(y) << "\" stroke=\"" << kLinePalette[s % 10]
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << num(kRight + 40) << "\" y=\"" << num(y + 4) << "\">"
        << xml_escape(series[s].label) << "</text>\n";
  }
  out << "</g>\n";
}

std::string render(const std::vector<ChartSeries>& series,
                   const std::vector<StageBoundary>& boundaries, const ChartStyle& style) {
  double xlo = std::numeric_limits<double>::infinity();
  double xhi = -xlo;
  double ylo = xlo;
  double yhi = -xlo;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) {
        throw Error(ErrorCode::InvalidArgument, "series '" + s.label + "' has a non-finite point");
      }
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
  }
  if (!std::isfinite(xlo)) throw Error(ErrorCode::EmptyInput, "no points to chart");
  const Canvas canvas(padded(xlo, xhi), padded_y(ylo, yhi));

  std::ostringstream out;
  open_svg(out, style.title);
  draw_bands(out, canvas, boundaries);
  draw_axes(out, canvas, style);
  draw_series(out, canvas, series);
  out << "</svg>\n";
  return out.str();
}

}  // namespace

ChartSeries to_chart_series(const MetricSeries& series) {
  ChartSeries out{series.name, {}};
  for (const auto& p : series.points) out.points.emplace_back(p.tokens_b, p.value);
  return out;
}

ChartSeries to_chart_series(const DistanceSeries& series) {
  ChartSeries out{std::string(to_string(series.role)), {}};
  for (const auto& p : series.points) out.points.emplace_back(p.midpoint_b(), p.normalized);
  return out;
}

std::string render_line_chart(const std::vector<ChartSeries>& series,
                              const std::vector<StageBoundary>& boundaries,
                              const ChartStyle& style) {
  if (!boundaries.empty()) validate_boundaries(boundaries);
  return render(series, boundaries, style);
}

std::string render_layer_curves(const TrajectorySet& set, Role role,
                                const std::vector<std::string>& checkpoints) {
  std::vector<const CheckpointStats*> selected;
  if (checkpoints.empty()) {
    for (const auto& c : set.checkpoints) selected.push_back(&c);
  } else {
    const std::set<std::string> wanted(checkpoints.begin(), checkpoints.end());
    for (const auto& c : set.checkpoints) {
      if (wanted.count(c.checkpoint_id) != 0) selected.push_back(&c);
    }
    if (selected.size() != wanted.size()) {
      throw Error(ErrorCode::InvalidArgument, "selection names an unknown checkpoint");
    }
  }
  std::vector<ChartSeries> series;
  for (const auto* c : selected) {
    const Trajectory* t = set.find(c->checkpoint_id, role);
    if (t == nullptr) continue;
    ChartSeries s{c->checkpoint_id + " (" + num(c->tokens_b) + " B)", {}};
    for (const auto& p : t->points) s.points.emplace_back(static_cast<double>(p.layer), p.value);
    series.push_back(std::move(s));
  }
  if (series.empty()) {
    throw Error(ErrorCode::RoleAbsent,
                "role " + std::string(to_string(role)) + " absent from the selected checkpoints");
  }
  ChartStyle style;
  style.title = std::string(to_string(role)) + " " + std::string(to_string(set.metric)) + " by layer";
  style.x_label = "layer index";
  style.y_label = std::string(to_string(set.metric));
  return render(series, {}, style);
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "SHA-256 init failed");
  }
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string slugify(std::string_view label) {
  std::string out;
  bool pending_sep = false;
  for (unsigned char c : label) {
    if (std::isalnum(c)) {
      if (pending_sep && !out.empty()) out.push_back('_');
      out.push_back(static_cast<char>(std::tolower(c)));
      pending_sep = false;
    } else {
      pending_sep = true;
    }
  }
  return out.empty() ? "item" : out;
}

std::vector<WrittenFile> write_report_bundle(const ReportBundle& bundle,
                                             const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

  std::set<std::string> used{"index.json"};
  auto unique_name = [&](const std::string& label, const char* ext) {
    const std::string base = slugify(label);
    std::string name = base + ext;
    for (int k = 2; used.count(name) != 0; ++k) name = base + "_" + std::to_string(k) + ext;
    used.insert(name);
    return name;
  };
  auto write = [&](const std::string& name, const std::string& bytes) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / name).string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + (dir / name).string());
  };

  std::vector<WrittenFile> files;
  for (const auto& chart : bundle.charts) {
    const auto name = unique_name(chart.label, ".svg");
    write(name, chart.svg);
    files.push_back({chart.kind.empty() ? "chart" : chart.kind, name, sha256_hex(chart.svg)});
  }
  for (const auto& table : bundle.tables) {
    const auto name = unique_name(table.label, ".csv");
    write(name, table.csv);
    files.push_back({"table", name, sha256_hex(table.csv)});
  }

  json index_files = json::array();
  for (const auto& f : files) {
    index_files.push_back({{"kind", f.kind}, {"path", f.path}, {"sha256", f.sha256}});
  }
  json inputs = json::array();
  for (const auto& p : bundle.provenance) inputs.push_back({{"path", p.path}, {"sha256", p.sha256}});
  const json index = {{"title", bundle.title}, {"files", index_files}, {"inputs", inputs}};
  const std::string text = index.dump(2) + "\n";
  write("index.json", text);
  files.insert(files.begin(), WrittenFile{"index", "index.json", sha256_hex(text)});
  return files;
}

}  // namespace trainwatch
