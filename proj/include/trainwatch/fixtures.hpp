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
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "trainwatch/checkpoint_io.hpp"
#include "trainwatch/series_monitor.hpp"

namespace trainwatch {

// ---------------------------------------------------------------------------
// Container writing

struct TensorBlob {
  std::string name;
  Dtype dtype = Dtype::F32;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;  // encoded to dtype on write (round to nearest even)
};

/// Writes blobs in order into the container layout read by open_container.
void write_container(const std::filesystem::path& path, const std::vector<TensorBlob>& blobs,
                     const std::map<std::string, std::string>& metadata = {});

std::uint16_t float_to_bf16(float value) noexcept;
std::uint16_t float_to_f16(float value) noexcept;

// ---------------------------------------------------------------------------
// Converging checkpoint runs

struct RunSpec {
  int layers = 4;
  std::vector<double> tokens_schedule_b = {100, 200, 300, 400, 500, 600};
  std::vector<double> std_start = {0.020, 0.024, 0.028, 0.032};
  std::vector<double> std_limit = {0.012, 0.013, 0.014, 0.015};
  double contraction = 0.5;
  std::uint64_t tensor_elems = 64 * 64;  // must be a perfect square h*h
  std::uint64_t seed = 42;
  Dtype dtype = Dtype::F32;
  std::vector<std::string> stages = {"K6", "K6", "K61", "K61", "K63", "K63"};
  bool include_embeddings = true;  // adds embed_tokens and lm_head

  std::size_t checkpoints() const noexcept { return tokens_schedule_b.size(); }
};

/// Throws Error(BadSpec) on an inconsistent spec.
void validate_run_spec(const RunSpec& spec);

/// Target std of every tensor at (checkpoint, layer):
/// limit + (start - limit) * contraction^checkpoint.
double target_std(const RunSpec& spec, std::size_t checkpoint, int layer);

struct GeneratedCheckpoint {
  std::filesystem::path container;
  std::filesystem::path sidecar;
};

/// Writes ckpt_NNN.safetensors plus ckpt_NNN.meta.json for every checkpoint.
/// Each (layer, role) tensor is a fixed seeded zero-mean sample rescaled to
/// exactly the target std, so measured statistics are known in advance.
std::vector<GeneratedCheckpoint> gen_converging_run(const RunSpec& spec,
                                                    const std::filesystem::path& dir);

RunSpec parse_run_spec(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Loss curves with ground truth

enum class LossKind { SmoothDecay, WithSpikes, PlateauThenDrop };
std::string_view to_string(LossKind kind) noexcept;
LossKind parse_loss_kind(std::string_view s);

struct LossCurveParams {
  std::size_t points = 600;
  double token_step_b = 1.0;
  double noise = 0.002;  // half-width of uniform noise
  // SmoothDecay: floor + amplitude * exp(-t / decay_b)
  double floor = 2.0;
  double amplitude = 3.0;
  double decay_b = 300.0;
  // WithSpikes: start_value + spike_trend_per_b * t, plus spikes
  std::vector<std::size_t> spike_positions = {120, 340};
  double spike_height = 1.0;
  double spike_trend_per_b = -0.004;
  // PlateauThenDrop: linear decline, flat segment, sharp drop, decline again
  double start_value = 4.0;
  double slope_per_b = -0.002;
  double plateau_start_b = 200.0;
  double plateau_end_b = 400.0;
  double drop = 0.4;
  double drop_width_b = 20.0;
};

struct LossCurve {
  LossKind kind = LossKind::SmoothDecay;
  MetricSeries series;
  std::vector<std::size_t> spike_indices;
  std::vector<std::pair<double, double>> plateaus;  // [start_b, end_b]
};

LossCurve make_loss_curve(LossKind kind, const LossCurveParams& params, std::uint64_t seed);

/// Writes the series as JSON lines to `path` and the ground truth to
/// `<stem>.truth.json` beside it. Returns {series path, truth path}.
std::pair<std::filesystem::path, std::filesystem::path> gen_loss_curve(
    LossKind kind, const LossCurveParams& params, std::uint64_t seed,
    const std::filesystem::path& path);

LossCurveParams parse_loss_params(const nlohmann::json& j);

}  // namespace trainwatch
