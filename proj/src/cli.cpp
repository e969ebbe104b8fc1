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

#include "trainwatch/cli.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "trainwatch/error.hpp"
#include "trainwatch/fixtures.hpp"
#include "trainwatch/mixture_planner.hpp"
#include "trainwatch/reporting.hpp"
#include "trainwatch/series_monitor.hpp"
#include "trainwatch/trajectory_metrics.hpp"

namespace trainwatch {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kContainerExt = ".safetensors";
constexpr const char* kSidecarSuffix = ".meta.json";

/// Resolved settings. Precedence: command-line flag, then --config file,
/// then these defaults.
struct CliConfig {
  std::string mapping;  // empty: built-in rule sets
  std::string metric = "std";
  std::string frechet_mode = "value";
  double layer_scale = 1.0;
  std::size_t window = 50;
  double threshold = 6.0;
  double mad_floor = 1e-6;
  double plateau_window = 50.0;
  double slope_eps = 1e-3;
  double epsilon = 1e-5;
  std::size_t conv_window = 2;
  bool strict = false;
  unsigned jobs = 1;
  std::string out;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void emit(const CliConfig& cfg, std::ostream& out, const std::string& text) {
  if (cfg.out.empty()) {
    out << text;
  } else {
    write_text(cfg.out, text);
  }
}

FrechetMode frechet_mode(const CliConfig& cfg) {
  FrechetMode mode;
  if (cfg.frechet_mode == "planar") {
    mode.kind = FrechetKind::Planar;
  } else if (cfg.frechet_mode != "value") {
    throw Error(ErrorCode::InvalidArgument, "--frechet-mode must be value or planar");
  }
  mode.layer_axis_scale = cfg.layer_scale;
  return mode;
}

TrajectoryMetric metric(const CliConfig& cfg) {
  if (cfg.metric == "std") return TrajectoryMetric::Std;
  if (cfg.metric == "rms") return TrajectoryMetric::Rms;
  throw Error(ErrorCode::InvalidArgument, "--metric must be std or rms");
}

MappingConfig mapping(const CliConfig& cfg) {
  MappingConfig m = cfg.mapping.empty() ? MappingConfig::defaults() : MappingConfig::from_json_file(cfg.mapping);
  if (cfg.strict) m.set_strict(true);
  return m;
}

StatsOptions stats_options(const CliConfig& cfg) {
  return {cfg.strict ? NanPolicy::Strict : NanPolicy::Lenient};
}

std::vector<CheckpointStats> scan_dir(const CliConfig& cfg, const fs::path& dir) {
  const auto run = discover_run(dir);
  return scan_run(run, mapping(cfg), stats_options(cfg), std::max(1u, cfg.jobs));
}

json scan_json(const CliConfig& cfg, const std::vector<CheckpointStats>& stats) {
  return json{{"metric", cfg.metric}, {"checkpoints", stats}};
}

struct FrechetResult {
  TrajectorySet set;
  std::vector<DistanceSeries> series;
  std::vector<RoleVerdict> verdicts;
};

FrechetResult run_frechet(const CliConfig& cfg, const fs::path& dir) {
  FrechetResult r;
  r.set = build_trajectory_set(scan_dir(cfg, dir), metric(cfg), cfg.strict);
  r.series = distance_series(r.set, frechet_mode(cfg));
  r.verdicts = convergence_summary(r.series, cfg.epsilon, cfg.conv_window);
  return r;
}

json cross_role_json(const std::vector<DistanceSeries>& series) {
  json j = json::array();
  for (const auto& p : cross_role_mean(series)) {
    j.push_back({{"from_tokens_b", p.from_tokens_b},
                 {"to_tokens_b", p.to_tokens_b},
                 {"mean_normalized", p.mean_normalized}});
  }
  return j;
}

json mode_json(const CliConfig& cfg) {
  return json{{"frechet_mode", cfg.frechet_mode},
              {"layer_scale", cfg.layer_scale},
              {"metric", cfg.metric},
              {"epsilon", cfg.epsilon},
              {"window", cfg.conv_window}};
}

int cmd_scan(const CliConfig& cfg, const std::string& dir, std::ostream& out) {
  emit(cfg, out, dump(scan_json(cfg, scan_dir(cfg, dir))));
  return kExitOk;
}

int cmd_frechet(const CliConfig& cfg, const std::string& dir, std::ostream& out) {
  const auto r = run_frechet(cfg, dir);
  const json series = r.series;
  const json verdicts = r.verdicts;
  if (cfg.out.empty()) {
    out << dump(json{{"settings", mode_json(cfg)},
                     {"series", series},
                     {"cross_role_mean", cross_role_json(r.series)},
                     {"convergence", verdicts}});
    return kExitOk;
  }
  const fs::path base(cfg.out);
  write_text(base / "distance_series.json",
             dump(json{{"settings", mode_json(cfg)},
                       {"series", series},
                       {"cross_role_mean", cross_role_json(r.series)}}));
  write_text(base / "distance_series.csv", distance_series_csv(r.series));
  write_text(base / "convergence.json", dump(json{{"settings", mode_json(cfg)}, {"convergence", verdicts}}));
  return kExitOk;
}

struct LossOptions {
  std::string tokens_column = "tokens_b";
  std::string value_column = "value";
  std::string direction = "lower";
  std::string boundaries;
};

Direction parse_direction(const std::string& s) {
  if (s == "lower") return Direction::LowerBetter;
  if (s == "higher") return Direction::HigherBetter;
  throw Error(ErrorCode::InvalidArgument, "--direction must be lower or higher");
}

struct LossResult {
  MetricSeries series;
  std::vector<SpikeEvent> spikes;
  std::vector<PlateauEvent> plateaus;
  std::vector<StageBoundary> boundaries;
  std::optional<AnnotatedSeries> annotated;
};

LossResult run_loss(const CliConfig& cfg, const LossOptions& lo, const fs::path& file,
                    std::ostream& err) {
  LossResult r;
  r.series = ingest_series(file, {lo.tokens_column, lo.value_column}, parse_direction(lo.direction));
  r.spikes = detect_spikes(r.series, {cfg.window, cfg.threshold, cfg.mad_floor});
  try {
    r.plateaus = detect_plateaus(r.series, {cfg.plateau_window, cfg.slope_eps});
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SpanTooShort) throw;
    err << "warning: " << e.what() << "; plateau detection skipped\n";
  }
  if (!lo.boundaries.empty()) {
    r.boundaries = load_boundaries(lo.boundaries);
    r.annotated = annotate_stages(r.series, r.boundaries);
  }
  return r;
}

json loss_json(const CliConfig& cfg, const LossResult& r) {
  json j = {{"series", r.series.name},
            {"points", r.series.points.size()},
            {"direction", r.series.direction == Direction::LowerBetter ? "lower_better" : "higher_better"},
            {"spike_params", {{"window", cfg.window}, {"threshold", cfg.threshold}, {"mad_floor", cfg.mad_floor}}},
            {"plateau_params", {{"window_b", cfg.plateau_window}, {"slope_eps", cfg.slope_eps}}},
            {"spikes", r.spikes},
            {"plateaus", r.plateaus}};
  if (r.annotated) j["stages"] = r.annotated->summaries;
  return j;
}

int cmd_loss(const CliConfig& cfg, const LossOptions& lo, const std::string& file,
             std::ostream& out, std::ostream& err) {
  const auto r = run_loss(cfg, lo, file, err);
  if (cfg.out.empty()) {
    out << dump(loss_json(cfg, r));
    return kExitOk;
  }
  const fs::path base(cfg.out);
  write_text(base / "loss_events.json", dump(loss_json(cfg, r)));
  write_text(base / "spikes.csv", spikes_csv(r.spikes));
  write_text(base / "plateaus.csv", plateaus_csv(r.plateaus));
  return kExitOk;
}

int cmd_plan(const CliConfig& cfg, const std::string& recipe_path, const std::string& inventory_path,
             std::ostream& out, std::ostream& err) {
  const auto recipes = load_recipes(recipe_path);
  const auto inventory = load_inventory(inventory_path);
  ScheduleSpec schedule = recipes.schedule.value_or(ScheduleSpec{});
  const auto plan = build_training_plan(recipes.stages, inventory, schedule, recipes.policy);
  for (const auto& st : plan.stages) {
    for (const auto& d : st.plan.diagnostics) {
      err << (d.severity == Severity::Warning ? "warning" : "info") << ": [" << d.code << "] "
          << d.message << "\n";
    }
  }
  emit(cfg, out, dump(manifest_json(plan)));
  return kExitOk;
}

std::vector<InputDigest> digest_input(const fs::path& input) {
  std::vector<InputDigest> out;
  if (fs::is_directory(input)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      out.push_back({(input / f.filename()).generic_string(), sha256_file(f)});
    }
  } else {
    out.push_back({input.generic_string(), sha256_file(input)});
  }
  return out;
}

int cmd_report(const CliConfig& cfg, const LossOptions& lo, const std::vector<std::string>& inputs,
               const std::string& title, std::ostream& out, std::ostream& err) {
  if (cfg.out.empty()) throw Error(ErrorCode::InvalidArgument, "report needs --out <dir>");
  ReportBundle bundle;
  bundle.title = title;
  std::vector<StageBoundary> boundaries;
  if (!lo.boundaries.empty()) {
    boundaries = load_boundaries(lo.boundaries);
    const auto d = digest_input(lo.boundaries);
    bundle.provenance.insert(bundle.provenance.end(), d.begin(), d.end());
  }
  for (const auto& input : inputs) {
    const fs::path path(input);
    const auto digests = digest_input(path);
    bundle.provenance.insert(bundle.provenance.end(), digests.begin(), digests.end());
    if (fs::is_directory(path)) {
      const std::string name = path.filename().empty() ? path.parent_path().filename().string()
                                                       : path.filename().string();
      const auto r = run_frechet(cfg, path);
      std::vector<ChartSeries> chart;
      for (const auto& s : r.series) chart.push_back(to_chart_series(s));
      ChartStyle style{name + ": normalized Fréchet distance per 1B tokens", "tokens (B)",
                       "distance per 1B tokens"};
      bundle.charts.push_back({"series", name + " distance", render_line_chart(chart, boundaries, style)});
      for (Role role : r.set.roles()) {
        bundle.charts.push_back({"layer_curves", name + " " + std::string(to_string(role)) + " layers",
                                 render_layer_curves(r.set, role)});
      }
      bundle.tables.push_back({name + " distance series", distance_series_csv(r.series)});
    } else {
      const auto r = run_loss(cfg, lo, path, err);
      const std::string name = r.series.name;
      ChartStyle style{name, "tokens (B)", lo.value_column};
      bundle.charts.push_back({"series", name + " series",
                               render_line_chart({to_chart_series(r.series)}, boundaries, style)});
      bundle.tables.push_back({name + " spikes", spikes_csv(r.spikes)});
      bundle.tables.push_back({name + " plateaus", plateaus_csv(r.plateaus)});
    }
  }
  const auto files = write_report_bundle(bundle, cfg.out);
  json listing = json::array();
  for (const auto& f : files) listing.push_back({{"kind", f.kind}, {"path", f.path}, {"sha256", f.sha256}});
  out << dump(json{{"out", cfg.out}, {"files", listing}});
  return kExitOk;
}

int cmd_fixtures(const CliConfig& cfg, const std::string& spec_path, std::ostream& out) {
  json spec;
  if (spec_path == "default") {
    spec = {{"run", json::object()},
            {"loss_curves",
             {{{"name", "loss_smooth"}, {"kind", "smooth_decay"}, {"seed", 1u}},
              {{"name", "loss_spikes"}, {"kind", "with_spikes"}, {"seed", 2u}},
              {{"name", "loss_plateau"}, {"kind", "plateau_then_drop"}, {"seed", 3u}}}}};
  } else {
    std::ifstream in(spec_path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + spec_path);
    try {
      spec = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::BadSpec, spec_path + ": " + e.what());
    }
  }
  if (!spec.is_object()) throw Error(ErrorCode::BadSpec, "fixtures spec must be an object");
  const fs::path base(cfg.out.empty() ? std::string("fixtures") : cfg.out);
  json listing = {{"checkpoints", json::array()}, {"loss_curves", json::array()}};
  if (spec.contains("run")) {
    for (const auto& g : gen_converging_run(parse_run_spec(spec["run"]), base / "run")) {
      listing["checkpoints"].push_back(
          {{"container", g.container.generic_string()}, {"sidecar", g.sidecar.generic_string()}});
    }
  }
  if (spec.contains("loss_curves")) {
    for (const auto& c : spec["loss_curves"]) {
      if (!c.is_object() || !c.contains("name") || !c.contains("kind") || !c["name"].is_string() ||
          !c["kind"].is_string() || (c.contains("seed") && !c["seed"].is_number_unsigned())) {
        throw Error(ErrorCode::BadSpec, "loss curve entries need string name and kind, and an unsigned seed");
      }
      const auto [series, truth] = gen_loss_curve(
          parse_loss_kind(c["kind"].get<std::string>()), parse_loss_params(c.value("params", json::object())),
          c.value("seed", std::uint64_t{0}), base / "loss" / (c["name"].get<std::string>() + ".jsonl"));
      listing["loss_curves"].push_back(
          {{"series", series.generic_string()}, {"truth", truth.generic_string()}});
    }
  }
  out << dump(listing);
  return kExitOk;
}

void apply_config_file(CLI::App& app, CliConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
  }
  auto take = [&](const char* flag, const char* key, auto& field) {
    if (app.get_option(flag)->count() == 0 && j.contains(key)) {
      field = j[key].get<std::remove_reference_t<decltype(field)>>();
    }
  };
  try {
    take("--mapping", "mapping", cfg.mapping);
    take("--metric", "metric", cfg.metric);
    take("--frechet-mode", "frechet_mode", cfg.frechet_mode);
    take("--layer-scale", "layer_scale", cfg.layer_scale);
    take("--window", "window", cfg.window);
    take("--threshold", "threshold", cfg.threshold);
    take("--mad-floor", "mad_floor", cfg.mad_floor);
    take("--plateau-window", "plateau_window", cfg.plateau_window);
    take("--slope-eps", "slope_eps", cfg.slope_eps);
    take("--epsilon", "epsilon", cfg.epsilon);
    take("--conv-window", "conv_window", cfg.conv_window);
    take("--strict", "strict", cfg.strict);
    take("--jobs", "jobs", cfg.jobs);
    take("--out", "out", cfg.out);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
  }
}

}  // namespace

std::vector<DiscoveredCheckpoint> discover_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, dir.string() + " is not a directory");
  std::vector<DiscoveredCheckpoint> run;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != kContainerExt) continue;
    const fs::path sidecar = e.path().parent_path() / (e.path().stem().string() + kSidecarSuffix);
    if (!fs::exists(sidecar)) {
      throw Error(ErrorCode::IoError, e.path().string() + " has no sidecar " + sidecar.filename().string());
    }
    run.push_back({e.path(), read_sidecar(sidecar)});
  }
  if (run.empty()) throw Error(ErrorCode::TooFewCheckpoints, "no checkpoints in " + dir.string());
  std::sort(run.begin(), run.end(), [](const auto& a, const auto& b) {
    return a.meta.tokens_b != b.meta.tokens_b ? a.meta.tokens_b < b.meta.tokens_b
                                              : a.container < b.container;
  });
  return run;
}

std::vector<CheckpointStats> scan_run(const std::vector<DiscoveredCheckpoint>& run,
                                      const MappingConfig& cfg, const StatsOptions& options,
                                      unsigned jobs) {
  std::vector<CheckpointStats> results(run.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < run.size(); i = next++) {
      try {
        results[i] = checkpoint_stats(open_container(run[i].container), cfg, run[i].meta, options);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = run.size();
      }
    }
  };
  const unsigned threads = std::min<unsigned>(std::max(1u, jobs), static_cast<unsigned>(run.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"trainwatch: training-state telemetry for checkpoints, loss curves and data plans",
               "trainwatch"};
  app.require_subcommand(1);
  app.fallthrough();

  CliConfig cfg;
  std::string config_path;
  app.add_option("--config", config_path, "JSON file with default settings");
  app.add_option("--mapping", cfg.mapping, "tensor-name mapping rules (JSON)");
  app.add_option("--metric", cfg.metric, "trajectory metric: std|rms")->check(CLI::IsMember({"std", "rms"}));
  app.add_option("--frechet-mode", cfg.frechet_mode, "value|planar")->check(CLI::IsMember({"value", "planar"}));
  app.add_option("--layer-scale", cfg.layer_scale, "layer-axis scale for planar mode");
  app.add_option("--window", cfg.window, "spike detector window (points)");
  app.add_option("--threshold", cfg.threshold, "spike robust z threshold");
  app.add_option("--mad-floor", cfg.mad_floor, "spike detector MAD floor");
  app.add_option("--plateau-window", cfg.plateau_window, "plateau window (B tokens)");
  app.add_option("--slope-eps", cfg.slope_eps, "plateau slope threshold (per B tokens)");
  app.add_option("--epsilon", cfg.epsilon, "convergence threshold on normalized distance");
  app.add_option("--conv-window", cfg.conv_window, "trailing points that must be below epsilon");
  app.add_flag("--strict", cfg.strict, "fail on unmapped tensors, missing roles and NaN/Inf");
  app.add_option("--jobs", cfg.jobs, "worker threads for scan/frechet")->check(CLI::PositiveNumber);
  app.add_option("--out", cfg.out, "output file or directory");

  std::string dir;
  std::string file;
  std::string recipe;
  std::string inventory;
  std::string spec_path;
  std::string title = "trainwatch report";
  std::vector<std::string> inputs;
  LossOptions lo;

  auto* scan = app.add_subcommand("scan", "per-layer checkpoint statistics as JSON");
  scan->add_option("ckpt-dir", dir, "run directory")->required();
  auto* frechet = app.add_subcommand("frechet", "distance series and convergence summary");
  frechet->add_option("ckpt-dir", dir, "run directory")->required();
  auto* loss = app.add_subcommand("loss", "spike and plateau report for a metric series");
  loss->add_option("file", file, "JSON-lines or CSV series")->required();
  for (auto* sub : {loss, app.add_subcommand("report", "render charts and tables into a bundle")}) {
    sub->add_option("--tokens-column", lo.tokens_column, "token column name");
    sub->add_option("--value-column", lo.value_column, "value column name");
    sub->add_option("--direction", lo.direction, "lower|higher is better")
        ->check(CLI::IsMember({"lower", "higher"}));
    sub->add_option("--boundaries", lo.boundaries, "stage boundaries JSON");
  }
  auto* report = app.get_subcommand("report");
  report->add_option("inputs", inputs, "run directories and series files")->required();
  report->add_option("--title", title, "bundle title");
  auto* plan = app.add_subcommand("plan", "build a staged data-mixture manifest");
  plan->add_option("recipe", recipe, "recipe JSON")->required();
  plan->add_option("inventory", inventory, "inventory JSON")->required();
  auto* fixtures = app.add_subcommand("fixtures", "generate synthetic runs and loss curves");
  fixtures->add_option("spec", spec_path, "fixtures spec JSON, or 'default'")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n";
    const auto selected = app.get_subcommands();
    err << (selected.empty() ? app.help() : selected.front()->help());
    return kExitUsage;
  }

  try {
    if (!config_path.empty()) apply_config_file(app, cfg, config_path);
    if (scan->parsed()) return cmd_scan(cfg, dir, out);
    if (frechet->parsed()) return cmd_frechet(cfg, dir, out);
    if (loss->parsed()) return cmd_loss(cfg, lo, file, out, err);
    if (plan->parsed()) return cmd_plan(cfg, recipe, inventory, out, err);
    if (report->parsed()) return cmd_report(cfg, lo, inputs, title, out, err);
    if (fixtures->parsed()) return cmd_fixtures(cfg, spec_path, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace trainwatch
