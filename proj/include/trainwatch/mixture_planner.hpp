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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace trainwatch {

enum class Domain { Web, Wiki, Paper, Textbook, Code, Knowledge };
enum class Language { Zh, En, Code, Other };

std::string_view to_string(Domain d) noexcept;
std::string_view to_string(Language l) noexcept;
Domain parse_domain(std::string_view s);
Language parse_language(std::string_view s);

/// A corpus that can be sampled. quality_tier 1 is the best tier; larger
/// numbers are progressively lower quality.
struct DataSource {
  std::string name;
  Domain domain = Domain::Web;
  Language language = Language::En;
  double available_tokens_b = 0.0;
  int batch = 1;
  int quality_tier = 1;
};

enum class StageOpKind { NewBatch, Filter, Resample, NewDataset };
std::string_view to_string(StageOpKind k) noexcept;

/// Data operation applied to the inventory before a stage is planned.
///   NewBatch   {source?, tokens_b}       next batch of the same source
///   Filter     {source?, keep_fraction}  model-based filtering
///   Resample   {weights: source -> w}    within-domain target distribution
///   NewDataset {source, tokens_b, language?, quality_tier?}
struct StageOp {
  StageOpKind kind = StageOpKind::Filter;
  Domain domain = Domain::Web;
  std::optional<std::string> source;
  double tokens_b = 0.0;
  double keep_fraction = 1.0;
  std::optional<Language> language;
  int quality_tier = 1;
  std::map<std::string, double> weights;
};

struct Inventory {
  std::vector<DataSource> sources;
  /// Pending Resample directives, consumed by the next plan_stage.
  std::map<Domain, std::map<std::string, double>> resample;

  const DataSource* find(std::string_view name) const noexcept;
};

struct StageRecipe {
  std::string stage;
  std::map<Domain, double> proportions;
  double budget_tokens_b = 0.0;
  std::vector<StageOp> ops;
};

enum class Severity { Info, Warning };

struct Diagnostic {
  Severity severity = Severity::Warning;
  std::string code;
  std::string message;
};

struct ValidationPolicy {
  double epoch_cap = 3.0;
  /// Recommended zh:en token ratio band, as zh/en.
  double zh_en_low = 1.0 / 3.0;
  double zh_en_high = 1.0 / 2.0;
  bool check_language_band = true;
};

struct SourceAllocation {
  std::string source;
  Domain domain = Domain::Web;
  Language language = Language::En;
  double available_tokens_b = 0.0;
  int batch = 1;
  double weight = 0.0;  // share of the stage budget
  double target_tokens_b = 0.0;
  double epochs = 0.0;  // target / available
};

struct SamplingPlan {
  std::string stage;
  double budget_tokens_b = 0.0;
  std::map<std::string, SourceAllocation> per_source;
  std::vector<Diagnostic> diagnostics;
};

/// Exact-as-possible proportion sum; throws Error(ProportionSumError) when it
/// is more than 1e-9 away from 1 or any fraction lies outside [0, 1].
double proportion_sum(const StageRecipe& recipe);

/// Proportion sum, implied zh:en ratio band and oversampling epoch cap.
std::vector<Diagnostic> validate_recipe(const StageRecipe& recipe, const Inventory& inventory,
                                        const ValidationPolicy& policy = {});

/// Splits each domain budget across its sources: best quality tier first,
/// proportional to available tokens; lower tiers only absorb what the better
/// tiers cannot supply at one epoch. If every tier is exhausted, the whole
/// domain is oversampled proportionally. A pending Resample directive for the
/// domain replaces this split.
SamplingPlan plan_stage(const StageRecipe& recipe, const Inventory& inventory,
                        const ValidationPolicy& policy = {});

Inventory apply_stage_op(Inventory inventory, const StageOp& op);

struct BatchRamp {
  std::int64_t start = 32;
  std::int64_t increment = 32;
  std::int64_t ramp_samples = 2'000'000;
  std::int64_t final = 1024;
};

struct ScheduleSpec {
  double lr_peak = 1.5e-4;
  double lr_min = 1.5e-5;
  double warmup_tokens_b = 2.0;
  double total_tokens_b = 0.0;
  BatchRamp batch_ramp;
};

/// Throws Error(BadSchedule) if lr or token bounds are inconsistent.
void validate_schedule(const ScheduleSpec& schedule);

/// Linear warmup from 0 to lr_peak, then cosine decay to lr_min at total.
double lr_at(double tokens_b, const ScheduleSpec& schedule);

/// Staircase from start to final in `increment` steps. The ramp is split
/// into (final - start) / increment + 1 equal segments, one per batch size.
std::int64_t batch_size_at(std::int64_t samples_seen, const BatchRamp& ramp);

struct StagePlan {
  StageRecipe recipe;
  SamplingPlan plan;
  double start_b = 0.0;
  double end_b = 0.0;
};

struct TrainingPlan {
  std::vector<StagePlan> stages;
  std::vector<double> cumulative_boundaries_b;
  ScheduleSpec schedule;
  Inventory final_inventory;
};

/// Applies each stage's ops in order, plans it, and accumulates boundaries.
TrainingPlan build_training_plan(const std::vector<StageRecipe>& recipes, Inventory inventory,
                                 const ScheduleSpec& schedule, const ValidationPolicy& policy = {});

// ---------------------------------------------------------------------------
// File formats

struct RecipeFile {
  std::vector<StageRecipe> stages;
  std::optional<ScheduleSpec> schedule;
  ValidationPolicy policy;
};

/// JSON: either a list of stages, or {stages: [...], schedule?, policy?}.
RecipeFile load_recipes(const std::filesystem::path& path);
RecipeFile parse_recipes(const nlohmann::json& doc);
/// JSON list of DataSource.
Inventory load_inventory(const std::filesystem::path& path);
Inventory parse_inventory(const nlohmann::json& doc);

/// Trainer-facing manifest. Keys are emitted in sorted order.
nlohmann::json manifest_json(const TrainingPlan& plan);

void to_json(nlohmann::json& j, const Diagnostic& d);
void to_json(nlohmann::json& j, const ScheduleSpec& s);

}  // namespace trainwatch
