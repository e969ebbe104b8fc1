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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <regex>

#include "test_support.hpp"
#include "trainwatch/fixtures.hpp"
#include "trainwatch/reporting.hpp"

using namespace trainwatch;
using testsupport::error_code;
using testsupport::TempDir;

namespace {

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

std::vector<std::size_t> polyline_sizes(const std::string& svg) {
  std::vector<std::size_t> out;
  static const std::regex re("<polyline[^>]*points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it) {
    const std::string pts = (*it)[1];
    out.push_back(pts.empty() ? 0 : static_cast<std::size_t>(std::count(pts.begin(), pts.end(), ' ')) + 1);
  }
  return out;
}

TrajectorySet fixture_set(const TempDir& dir, std::size_t checkpoints) {
  RunSpec spec;
  spec.tokens_schedule_b.resize(checkpoints);
  spec.stages.resize(checkpoints);
  const auto files = gen_converging_run(spec, dir.path());
  std::vector<CheckpointStats> stats;
  for (const auto& f : files) {
    stats.push_back(checkpoint_stats(open_container(f.container), MappingConfig::defaults(), read_sidecar(f.sidecar)));
  }
  return build_trajectory_set(stats, TrajectoryMetric::Std);
}

/// Compare against tests/golden/<name>; TRAINWATCH_UPDATE_GOLDEN=1 rewrites it.
void check_golden(const std::string& name, const std::string& bytes) {
  const std::filesystem::path path = std::filesystem::path(TRAINWATCH_GOLDEN_DIR) / name;
  if (const char* u = std::getenv("TRAINWATCH_UPDATE_GOLDEN"); u != nullptr && std::string(u) == "1") {
    testsupport::write_bytes(path, bytes);
  }
  REQUIRE_MESSAGE(std::filesystem::exists(path), "missing golden file " << path);
  CHECK_MESSAGE(testsupport::read_bytes(path) == bytes, "golden mismatch: " << name);
}

}  // namespace

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("two-point series renders one polyline with two pairs") {
  const std::vector<ChartSeries> s = {{"loss", {{0, 1.0}, {10, 0.5}}}};
  const auto svg = render_line_chart(s, {}, {"t", "tokens (B)", "loss"});
  CHECK(polyline_sizes(svg) == std::vector<std::size_t>{2});
  CHECK(svg.find("viewBox=\"0 0 960 540\"") != std::string::npos);
  CHECK(svg == render_line_chart(s, {}, {"t", "tokens (B)", "loss"}));
  CHECK(svg.find("tokens (B)") != std::string::npos);
}

TEST_CASE("chart errors and stage bands") {
  CHECK(error_code([] { render_line_chart({}, {}, {}); }) == ErrorCode::EmptyInput);
  CHECK(error_code([] { render_line_chart({{"e", {}}}, {}, {}); }) == ErrorCode::EmptyInput);
  const std::vector<ChartSeries> s = {{"a", {{0, 1}, {5, 2}, {9, 3}}}, {"b", {{1, 2}}}};
  const auto svg = render_line_chart(s, {{"K6", 0}, {"K61", 4}}, {"x", "tokens (B)", "y"});
  CHECK(svg.find(kStagePalette[0]) != std::string::npos);
  CHECK(svg.find(kStagePalette[1]) != std::string::npos);
  CHECK(svg.find(kStagePalette[2]) == std::string::npos);
  // no resampling: one coordinate per input point
  CHECK(polyline_sizes(svg) == std::vector<std::size_t>{3, 1});
}

TEST_CASE("layer curves") {
  TempDir dir("rep");
  const auto one = fixture_set(dir, 1);
  CHECK(polyline_sizes(render_layer_curves(one, Role::AttnQ)) == std::vector<std::size_t>{4});
  CHECK(error_code([&] { render_layer_curves(one, Role::QkvFused); }) == ErrorCode::RoleAbsent);
  CHECK(error_code([&] { render_layer_curves(one, Role::AttnQ, {"nope"}); }) == ErrorCode::InvalidArgument);

  TempDir dir5("rep");
  const auto five = fixture_set(dir5, 5);
  const auto svg = render_layer_curves(five, Role::MlpUp);
  CHECK(polyline_sizes(svg) == std::vector<std::size_t>(5, 4));
  std::size_t last = 0;
  for (int i = 0; i < 5; ++i) {
    const auto label = "ckpt_00" + std::to_string(i) + " (" + std::to_string(100 * (i + 1)) + " B)";
    const auto pos = svg.find(label);
    REQUIRE(pos != std::string::npos);
    CHECK(pos > last);
    last = pos;
  }
}

TEST_CASE("report bundle layout") {
  TempDir dir("rep");
  auto files = write_report_bundle({"empty", {}, {}, {}}, dir / "a");
  REQUIRE(files.size() == 1);
  CHECK(files[0].path == "index.json");
  CHECK(std::distance(std::filesystem::directory_iterator(dir / "a"), std::filesystem::directory_iterator()) == 1);

  const std::vector<ChartSeries> s = {{"loss", {{0, 1.0}, {10, 0.5}}}};
  ReportBundle b;
  b.title = "two";
  b.charts = {{"series", "Loss curve", render_line_chart(s, {}, {})},
              {"series", "Loss curve", render_line_chart(s, {}, {"other"})}};
  b.tables = {{"events", "a,b\n1,2\n"}};
  b.provenance = {{"in.jsonl", sha256_hex("x")}};
  files = write_report_bundle(b, dir / "b");
  REQUIRE(files.size() == 4);
  CHECK(files[1].path == "loss_curve.svg");
  CHECK(files[2].path == "loss_curve_2.svg");
  CHECK(files[3].path == "events.csv");
  const auto index = nlohmann::json::parse(testsupport::read_bytes(dir / "b" / "index.json"));
  CHECK(index["title"] == "two");
  CHECK(index["files"].size() == 3);
  CHECK(index["files"][0]["sha256"] == sha256_file(dir / "b" / "loss_curve.svg"));
  CHECK(index["inputs"][0]["path"] == "in.jsonl");

  write_report_bundle(b, dir / "c");
  for (const auto& f : files) {
    CHECK(testsupport::read_bytes(dir / "b" / f.path) == testsupport::read_bytes(dir / "c" / f.path));
  }
  CHECK(slugify("K61: Loss / Curve") == "k61_loss_curve");
}

TEST_CASE("golden charts for the fixtures run") {
  TempDir dir("rep");
  const auto set = fixture_set(dir, 6);
  std::vector<ChartSeries> series;
  for (const auto& d : distance_series(set)) series.push_back(to_chart_series(d));
  const std::vector<StageBoundary> stages = {{"K6", 0}, {"K61", 250}, {"K63", 450}};
  check_golden("fixtures_distance.svg",
               render_line_chart(series, stages, {"normalized distance", "tokens (B)", "distance per 1B tokens"}));
  check_golden("fixtures_attn_q_layers.svg", render_layer_curves(set, Role::AttnQ));

  const auto loss = make_loss_curve(LossKind::WithSpikes, {}, 2);
  check_golden("fixtures_loss_spikes.svg",
               render_line_chart({to_chart_series(loss.series)}, stages, {"loss", "tokens (B)", "loss"}));
}
