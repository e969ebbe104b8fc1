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

#include "trainwatch/mixture_planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "trainwatch/error.hpp"

namespace trainwatch {

using nlohmann::json;

namespace {

constexpr double kProportionTolerance = 1e-9;

std::string fmt_ratio(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::vector<Diagnostic> language_band(const SamplingPlan& plan, const ValidationPolicy& policy) {
  std::vector<Diagnostic> out;
  if (!policy.check_language_band) return out;
  double zh = 0.0;
  double en = 0.0;
  for (const auto& [_, a] : plan.per_source) {
    if (a.language == Language::Zh) zh += a.target_tokens_b;
    if (a.language == Language::En) en += a.target_tokens_b;
  }
  if (zh == 0.0 && en == 0.0) {
    out.push_back({Severity::Info, "lang_ratio_unavailable",
                   "stage '" + plan.stage + "' samples no zh or en tokens"});
    return out;
  }
  const std::string band = "[1:" + fmt_ratio(1.0 / policy.zh_en_low) + ", 1:" +
                           fmt_ratio(1.0 / policy.zh_en_high) + "]";
  if (en == 0.0) {
    out.push_back({Severity::Warning, "lang_ratio_out_of_band",
                   "stage '" + plan.stage + "' has zh tokens but no en tokens; outside recommended band " + band});
    return out;
  }
  const double ratio = zh / en;
  if (ratio < policy.zh_en_low - 1e-12 || ratio > policy.zh_en_high + 1e-12) {
    out.push_back({Severity::Warning, "lang_ratio_out_of_band",
                   "stage '" + plan.stage + "' implies zh:en = 1:" + fmt_ratio(1.0 / ratio) +
                       ", outside recommended band " + band});
  }
  return out;
}

std::vector<DataSource*> sources_in(Inventory& inv, Domain d) {
  std::vector<DataSource*> out;
  for (auto& s : inv.sources) {
    if (s.domain == d) out.push_back(&s);
  }
  return out;
}

DataSource& resolve_source(Inventory& inv, const StageOp& op) {
  auto in_domain = sources_in(inv, op.domain);
  if (op.source) {
    for (auto* s : in_domain) {
      if (s->name == *op.source) return *s;
    }
    throw Error(ErrorCode::UnknownSource, "no " + std::string(to_string(op.domain)) +
                                              " source named '" + *op.source + "'");
  }
  if (in_domain.size() != 1) {
    throw Error(in_domain.empty() ? ErrorCode::UnknownSource : ErrorCode::BadParam,
                std::string(to_string(op.kind)) + " on " + std::string(to_string(op.domain)) +
                    " needs a 'source' parameter (" + std::to_string(in_domain.size()) +
                    " sources in domain)");
  }
  return *in_domain.front();
}

}  // namespace

std::string_view to_string(Domain d) noexcept {
  switch (d) {
    case Domain::Web: return "Web";
    case Domain::Wiki: return "Wiki";
    case Domain::Paper: return "Paper";
    case Domain::Textbook: return "Textbook";
    case Domain::Code: return "Code";
    case Domain::Knowledge: return "Knowledge";
  }
  return "Web";
}

std::string_view to_string(Language l) noexcept {
  switch (l) {
    case Language::Zh: return "zh";
    case Language::En: return "en";
    case Language::Code: return "code";
    case Language::Other: return "other";
  }
  return "other";
}

std::string_view to_string(StageOpKind k) noexcept {
  switch (k) {
    case StageOpKind::NewBatch: return "NewBatch";
    case StageOpKind::Filter: return "Filter";
    case StageOpKind::Resample: return "Resample";
    case StageOpKind::NewDataset: return "NewDataset";
  }
  return "Filter";
}

Domain parse_domain(std::string_view s) {
  for (Domain d : {Domain::Web, Domain::Wiki, Domain::Paper, Domain::Textbook, Domain::Code,
                   Domain::Knowledge}) {
    if (to_string(d) == s) return d;
  }
  throw Error(ErrorCode::BadParam, "unknown domain '" + std::string(s) + "'");
}

Language parse_language(std::string_view s) {
  for (Language l : {Language::Zh, Language::En, Language::Code, Language::Other}) {
    if (to_string(l) == s) return l;
  }
  throw Error(ErrorCode::BadParam, "unknown language '" + std::string(s) + "'");
}

const DataSource* Inventory::find(std::string_view name) const noexcept {
  for (const auto& s : sources) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

double proportion_sum(const StageRecipe& recipe) {
  long double sum = 0.0L;
  for (const auto& [domain, p] : recipe.proportions) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::ProportionSumError, "stage '" + recipe.stage + "' proportion for " +
                                                     std::string(to_string(domain)) +
                                                     " is outside [0, 1]");
    }
    sum += p;
  }
  const auto total = static_cast<double>(sum);
  if (std::abs(total - 1.0) > kProportionTolerance) {
    throw Error(ErrorCode::ProportionSumError,
                "stage '" + recipe.stage + "' proportions sum to " + std::to_string(total));
  }
  return total;
}

SamplingPlan plan_stage(const StageRecipe& recipe, const Inventory& inventory,
                        const ValidationPolicy& policy) {
  proportion_sum(recipe);
  if (!(recipe.budget_tokens_b > 0.0)) {
    throw Error(ErrorCode::BadParam, "stage '" + recipe.stage + "' budget must be > 0");
  }

  SamplingPlan plan;
  plan.stage = recipe.stage;
  plan.budget_tokens_b = recipe.budget_tokens_b;

  auto allocate = [&](const DataSource& src, double target) {
    SourceAllocation a;
    a.source = src.name;
    a.domain = src.domain;
    a.language = src.language;
    a.available_tokens_b = src.available_tokens_b;
    a.batch = src.batch;
    a.target_tokens_b = target;
    a.weight = target / recipe.budget_tokens_b;
    a.epochs = target / src.available_tokens_b;
    plan.per_source[src.name] = a;
  };

  for (const auto& [domain, proportion] : recipe.proportions) {
    if (proportion == 0.0) continue;
    const double domain_budget = proportion * recipe.budget_tokens_b;
    std::vector<const DataSource*> candidates;
    for (const auto& s : inventory.sources) {
      if (s.domain == domain && s.available_tokens_b > 0.0) candidates.push_back(&s);
    }
    if (candidates.empty()) {
      throw Error(ErrorCode::EmptyDomain, "stage '" + recipe.stage + "' needs " +
                                              std::string(to_string(domain)) +
                                              " data but no source has tokens available");
    }

    const auto directive = inventory.resample.find(domain);
    if (directive != inventory.resample.end()) {
      double total = 0.0;
      for (const auto& [_, w] : directive->second) total += w;
      for (const auto& [name, w] : directive->second) {
        if (w == 0.0) continue;
        const auto it = std::find_if(candidates.begin(), candidates.end(),
                                     [&](const DataSource* s) { return s->name == name; });
        if (it == candidates.end()) {
          throw Error(ErrorCode::UnknownSource, "resample target '" + name + "' has no " +
                                                    std::string(to_string(domain)) +
                                                    " tokens available");
        }
        allocate(**it, domain_budget * (w / total));
      }
      continue;
    }

    double total_available = 0.0;
    for (const auto* s : candidates) total_available += s->available_tokens_b;
    if (domain_budget >= total_available) {
      for (const auto* s : candidates) {
        allocate(*s, domain_budget * (s->available_tokens_b / total_available));
      }
      continue;
    }
    std::map<int, std::vector<const DataSource*>> tiers;
    for (const auto* s : candidates) tiers[s->quality_tier].push_back(s);
    double remaining = domain_budget;
    for (const auto& [tier, members] : tiers) {
      if (remaining <= 0.0) break;
      double tier_available = 0.0;
      for (const auto* s : members) tier_available += s->available_tokens_b;
      const double take = std::min(remaining, tier_available);
      for (const auto* s : members) allocate(*s, take * (s->available_tokens_b / tier_available));
      remaining -= take;
    }
  }

  for (const auto& [name, a] : plan.per_source) {
    if (a.epochs > policy.epoch_cap) {
      plan.diagnostics.push_back(
          {Severity::Warning, "epoch_cap_exceeded",
           "stage '" + recipe.stage + "' samples '" + name + "' for " + fmt_ratio(a.epochs) +
               " epochs, above the cap of " + fmt_ratio(policy.epoch_cap)});
    }
  }
  return plan;
}

std::vector<Diagnostic> validate_recipe(const StageRecipe& recipe, const Inventory& inventory,
                                        const ValidationPolicy& policy) {
  proportion_sum(recipe);
  const auto plan = plan_stage(recipe, inventory, policy);
  auto out = plan.diagnostics;
  const auto band = language_band(plan, policy);
  out.insert(out.end(), band.begin(), band.end());
  return out;
}

Inventory apply_stage_op(Inventory inventory, const StageOp& op) {
  switch (op.kind) {
    case StageOpKind::NewBatch: {
      if (!(op.tokens_b >= 0.0)) throw Error(ErrorCode::BadParam, "NewBatch tokens_b must be >= 0");
      auto& src = resolve_source(inventory, op);
      src.batch += 1;
      src.available_tokens_b = op.tokens_b;
      break;
    }
    case StageOpKind::Filter: {
      if (!(op.keep_fraction > 0.0 && op.keep_fraction <= 1.0)) {
        throw Error(ErrorCode::BadParam, "Filter keep_fraction must lie in (0, 1]");
      }
      if (op.source) {
        resolve_source(inventory, op).available_tokens_b *= op.keep_fraction;
      } else {
        auto targets = sources_in(inventory, op.domain);
        if (targets.empty()) {
          throw Error(ErrorCode::UnknownSource,
                      "Filter on empty domain " + std::string(to_string(op.domain)));
        }
        for (auto* s : targets) s->available_tokens_b *= op.keep_fraction;
      }
      break;
    }
    case StageOpKind::Resample: {
      if (op.weights.empty()) throw Error(ErrorCode::BadParam, "Resample needs weights");
      double total = 0.0;
      for (const auto& [name, w] : op.weights) {
        if (!(w >= 0.0)) throw Error(ErrorCode::BadParam, "Resample weights must be >= 0");
        const auto* src = inventory.find(name);
        if (src == nullptr || src->domain != op.domain) {
          throw Error(ErrorCode::UnknownSource, "no " + std::string(to_string(op.domain)) +
                                                    " source named '" + name + "'");
        }
        total += w;
      }
      if (!(total > 0.0)) throw Error(ErrorCode::BadParam, "Resample weights sum to zero");
      inventory.resample[op.domain] = op.weights;
      break;
    }
    case StageOpKind::NewDataset: {
      if (!op.source || op.source->empty()) {
        throw Error(ErrorCode::BadParam, "NewDataset needs a source name");
      }
      if (inventory.find(*op.source) != nullptr) {
        throw Error(ErrorCode::BadParam, "source '" + *op.source + "' already exists");
      }
      if (!(op.tokens_b >= 0.0)) throw Error(ErrorCode::BadParam, "NewDataset tokens_b must be >= 0");
      DataSource s;
      s.name = *op.source;
      s.domain = op.domain;
      s.language = op.language.value_or(op.domain == Domain::Code ? Language::Code : Language::En);
      s.available_tokens_b = op.tokens_b;
      s.batch = 1;
      s.quality_tier = op.quality_tier;
      inventory.sources.push_back(std::move(s));
      break;
    }
  }
  return inventory;
}

void validate_schedule(const ScheduleSpec& s) {
  if (!(s.lr_min > 0.0 && s.lr_min <= s.lr_peak)) {
    throw Error(ErrorCode::BadSchedule, "need 0 < lr_min <= lr_peak");
  }
  if (!(s.warmup_tokens_b > 0.0 && s.warmup_tokens_b < s.total_tokens_b)) {
    throw Error(ErrorCode::BadSchedule, "need 0 < warmup_tokens_b < total_tokens_b");
  }
}

double lr_at(double tokens_b, const ScheduleSpec& s) {
  validate_schedule(s);
  if (!(tokens_b >= 0.0 && tokens_b <= s.total_tokens_b)) {
    throw Error(ErrorCode::OutOfRange, "tokens_b " + std::to_string(tokens_b) +
                                           " outside [0, " + std::to_string(s.total_tokens_b) + "]");
  }
  if (tokens_b <= s.warmup_tokens_b) return s.lr_peak * (tokens_b / s.warmup_tokens_b);
  const double progress = (tokens_b - s.warmup_tokens_b) / (s.total_tokens_b - s.warmup_tokens_b);
  return s.lr_min + 0.5 * (s.lr_peak - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

__extension__ using Wide = __int128;

std::int64_t batch_size_at(std::int64_t samples_seen, const BatchRamp& ramp) {
  if (ramp.start <= 0 || ramp.increment <= 0 || ramp.final < ramp.start ||
      ramp.ramp_samples <= 0 || (ramp.final - ramp.start) % ramp.increment != 0) {
    throw Error(ErrorCode::BadRamp, "increment must be positive and divide final - start");
  }
  if (samples_seen < 0) throw Error(ErrorCode::OutOfRange, "samples_seen must be >= 0");
  if (samples_seen >= ramp.ramp_samples) return ramp.final;
  const std::int64_t levels = (ramp.final - ramp.start) / ramp.increment + 1;
  const auto step = static_cast<std::int64_t>(static_cast<Wide>(samples_seen) * levels /
                                              ramp.ramp_samples);
  return ramp.start + std::min(step, levels - 1) * ramp.increment;
}

TrainingPlan build_training_plan(const std::vector<StageRecipe>& recipes, Inventory inventory,
                                 const ScheduleSpec& schedule, const ValidationPolicy& policy) {
  if (recipes.empty()) throw Error(ErrorCode::EmptyPlan, "no stage recipes");
  std::set<std::string> names;
  for (const auto& r : recipes) {
    if (!names.insert(r.stage).second) {
      throw Error(ErrorCode::BadParam, "duplicate stage name '" + r.stage + "'");
    }
  }

  TrainingPlan out;
  double cumulative = 0.0;
  for (const auto& recipe : recipes) {
    for (const auto& op : recipe.ops) inventory = apply_stage_op(std::move(inventory), op);
    StagePlan stage;
    stage.recipe = recipe;
    stage.plan = plan_stage(recipe, inventory, policy);
    const auto band = language_band(stage.plan, policy);
    stage.plan.diagnostics.insert(stage.plan.diagnostics.end(), band.begin(), band.end());
    inventory.resample.clear();
    stage.start_b = cumulative;
    cumulative += recipe.budget_tokens_b;
    stage.end_b = cumulative;
    out.cumulative_boundaries_b.push_back(cumulative);
    out.stages.push_back(std::move(stage));
  }
  out.schedule = schedule;
  if (out.schedule.total_tokens_b == 0.0) out.schedule.total_tokens_b = cumulative;
  validate_schedule(out.schedule);
  batch_size_at(0, out.schedule.batch_ramp);
  out.final_inventory = std::move(inventory);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorCode::BadParam, where + " lacks '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::BadParam, where + " has a bad '" + key + "'");
  }
}

StageOp parse_op(const json& j, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::BadParam, where + " op is not an object");
  StageOp op;
  const auto kind = required<std::string>(j, "kind", where);
  if (kind == "NewBatch") {
    op.kind = StageOpKind::NewBatch;
  } else if (kind == "Filter") {
    op.kind = StageOpKind::Filter;
  } else if (kind == "Resample") {
    op.kind = StageOpKind::Resample;
  } else if (kind == "NewDataset") {
    op.kind = StageOpKind::NewDataset;
  } else {
    throw Error(ErrorCode::BadParam, where + " has unknown op kind '" + kind + "'");
  }
  op.domain = parse_domain(required<std::string>(j, "domain", where));
  const json params = j.value("params", json::object());
  if (!params.is_object()) throw Error(ErrorCode::BadParam, where + " params is not an object");
  if (params.contains("source")) op.source = required<std::string>(params, "source", where);
  if (op.kind == StageOpKind::NewBatch || op.kind == StageOpKind::NewDataset) {
    op.tokens_b = required<double>(params, "tokens_b", where);
  }
  if (op.kind == StageOpKind::Filter) op.keep_fraction = required<double>(params, "keep_fraction", where);
  if (op.kind == StageOpKind::Resample) {
    op.weights = required<std::map<std::string, double>>(params, "weights", where);
  }
  if (params.contains("language")) {
    op.language = parse_language(required<std::string>(params, "language", where));
  }
  if (params.contains("quality_tier")) op.quality_tier = required<int>(params, "quality_tier", where);
  return op;
}

ScheduleSpec parse_schedule(const json& j) {
  ScheduleSpec s;
  s.lr_peak = j.value("lr_peak", s.lr_peak);
  s.lr_min = j.value("lr_min", s.lr_min);
  s.warmup_tokens_b = j.value("warmup_tokens_b", s.warmup_tokens_b);
  s.total_tokens_b = j.value("total_tokens_b", s.total_tokens_b);
  if (j.contains("batch_ramp")) {
    const auto& r = j["batch_ramp"];
    s.batch_ramp.start = r.value("start", s.batch_ramp.start);
    s.batch_ramp.increment = r.value("increment", s.batch_ramp.increment);
    s.batch_ramp.ramp_samples = r.value("ramp_samples", s.batch_ramp.ramp_samples);
    s.batch_ramp.final = r.value("final", s.batch_ramp.final);
  }
  return s;
}

}  // namespace

RecipeFile parse_recipes(const json& doc) {
  RecipeFile file;
  const json* stages = &doc;
  if (doc.is_object()) {
    if (!doc.contains("stages")) throw Error(ErrorCode::BadParam, "recipe file lacks 'stages'");
    stages = &doc["stages"];
    if (doc.contains("schedule")) file.schedule = parse_schedule(doc["schedule"]);
    if (doc.contains("policy")) {
      const auto& p = doc["policy"];
      file.policy.epoch_cap = p.value("epoch_cap", file.policy.epoch_cap);
      file.policy.zh_en_low = p.value("zh_en_low", file.policy.zh_en_low);
      file.policy.zh_en_high = p.value("zh_en_high", file.policy.zh_en_high);
      file.policy.check_language_band = p.value("check_language_band", file.policy.check_language_band);
    }
  }
  if (!stages->is_array()) throw Error(ErrorCode::BadParam, "'stages' must be a list");
  for (const auto& st : *stages) {
    if (!st.is_object()) throw Error(ErrorCode::BadParam, "stage is not an object");
    StageRecipe r;
    r.stage = required<std::string>(st, "stage", "stage");
    const std::string where = "stage '" + r.stage + "'";
    r.budget_tokens_b = required<double>(st, "budget_tokens_b", where);
    for (const auto& [k, v] : required<std::map<std::string, double>>(st, "proportions", where)) {
      r.proportions[parse_domain(k)] = v;
    }
    if (st.contains("ops")) {
      if (!st["ops"].is_array()) throw Error(ErrorCode::BadParam, where + " ops must be a list");
      for (const auto& op : st["ops"]) r.ops.push_back(parse_op(op, where));
    }
    file.stages.push_back(std::move(r));
  }
  return file;
}

RecipeFile load_recipes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return parse_recipes(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

Inventory parse_inventory(const json& doc) {
  if (!doc.is_array()) throw Error(ErrorCode::BadParam, "inventory must be a JSON list");
  Inventory inv;
  for (const auto& j : doc) {
    if (!j.is_object()) throw Error(ErrorCode::BadParam, "inventory entry is not an object");
    DataSource s;
    s.name = required<std::string>(j, "name", "source");
    const std::string where = "source '" + s.name + "'";
    s.domain = parse_domain(required<std::string>(j, "domain", where));
    s.language = parse_language(j.value("language", std::string("en")));
    s.available_tokens_b = required<double>(j, "available_tokens_b", where);
    s.batch = j.value("batch", 1);
    s.quality_tier = j.value("quality_tier", 1);
    if (!(s.available_tokens_b >= 0.0)) {
      throw Error(ErrorCode::BadParam, where + " available_tokens_b must be >= 0");
    }
    if (inv.find(s.name) != nullptr) throw Error(ErrorCode::BadParam, "duplicate " + where);
    inv.sources.push_back(std::move(s));
  }
  return inv;
}

Inventory load_inventory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return parse_inventory(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

void to_json(json& j, const Diagnostic& d) {
  j = json{{"severity", d.severity == Severity::Warning ? "warning" : "info"},
           {"code", d.code},
           {"message", d.message}};
}

void to_json(json& j, const ScheduleSpec& s) {
  j = json{{"lr_peak", s.lr_peak},
           {"lr_min", s.lr_min},
           {"lr_decay_style", "cosine"},
           {"warmup_tokens_b", s.warmup_tokens_b},
           {"total_tokens_b", s.total_tokens_b},
           {"batch_ramp",
            {{"start", s.batch_ramp.start},
             {"increment", s.batch_ramp.increment},
             {"ramp_samples", s.batch_ramp.ramp_samples},
             {"final", s.batch_ramp.final}}}};
}

json manifest_json(const TrainingPlan& plan) {
  json stages = json::array();
  for (const auto& st : plan.stages) {
    json proportions = json::object();
    for (const auto& [d, p] : st.recipe.proportions) proportions[std::string(to_string(d))] = p;
    std::map<std::string, double> domain_weights;
    json sources = json::array();
    for (const auto& [name, a] : st.plan.per_source) {
      domain_weights[std::string(to_string(a.domain))] += a.weight;
      sources.push_back({{"source", name},
                         {"domain", std::string(to_string(a.domain))},
                         {"language", std::string(to_string(a.language))},
                         {"batch", a.batch},
                         {"available_tokens_b", a.available_tokens_b},
                         {"weight", a.weight},
                         {"target_tokens_b", a.target_tokens_b},
                         {"epochs", a.epochs}});
    }
    json ops = json::array();
    for (const auto& op : st.recipe.ops) {
      json o = {{"kind", std::string(to_string(op.kind))},
                {"domain", std::string(to_string(op.domain))}};
      if (op.source) o["source"] = *op.source;
      ops.push_back(std::move(o));
    }
    stages.push_back({{"stage", st.recipe.stage},
                      {"start_b", st.start_b},
                      {"end_b", st.end_b},
                      {"budget_tokens_b", st.recipe.budget_tokens_b},
                      {"proportions", proportions},
                      {"domain_weights", domain_weights},
                      {"ops", ops},
                      {"sources", sources},
                      {"diagnostics", st.plan.diagnostics},
                      {"lr_at_start", lr_at(st.start_b, plan.schedule)}});
  }
  return json{{"format", "trainwatch-manifest/1"},
              {"total_tokens_b", plan.cumulative_boundaries_b.back()},
              {"boundaries_b", plan.cumulative_boundaries_b},
              {"schedule", plan.schedule},
              {"stages", stages}};
}

}  // namespace trainwatch
