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

#include "trainwatch/fixtures.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "trainwatch/error.hpp"
#include "trainwatch/weight_stats.hpp"

namespace trainwatch {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// std distributions are implementation-defined; these mappings are not.
double uniform01(std::mt19937_64& rng) noexcept {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) noexcept {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename UInt>
void store_le(std::string& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

constexpr const char* kRoleNames[] = {
    "self_attn.q_proj.weight", "self_attn.k_proj.weight", "self_attn.v_proj.weight",
    "self_attn.o_proj.weight", "mlp.gate_proj.weight",    "mlp.up_proj.weight",
    "mlp.down_proj.weight",    "input_layernorm.weight",  "post_attention_layernorm.weight",
};

std::vector<double> unit_sample(std::uint64_t seed, std::uint64_t stream, std::uint64_t n) {
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(stream)));
  std::vector<double> v(n);
  for (auto& x : v) x = standard_normal(rng);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (auto& x : v) {
    x -= mean;
    ss += x * x;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  for (auto& x : v) x /= sd;
  return v;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::uint16_t float_to_bf16(float value) noexcept {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  if (std::isnan(value)) return static_cast<std::uint16_t>((bits >> 16) | 0x40);
  const std::uint32_t bias = 0x7FFFu + ((bits >> 16) & 1u);
  return static_cast<std::uint16_t>((bits + bias) >> 16);
}

std::uint16_t float_to_f16(float value) noexcept {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  const auto sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  const std::uint32_t exponent = (bits >> 23) & 0xFFu;
  std::uint32_t mantissa = bits & 0x7FFFFFu;

  if (exponent == 0xFF) {
    return static_cast<std::uint16_t>(sign | 0x7C00u | (mantissa ? 0x200u | (mantissa >> 13) : 0u));
  }
  const int e = static_cast<int>(exponent) - 127 + 15;
  if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7C00u);
  if (e <= 0) {
    if (e < -10) return sign;
    mantissa |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t half = mantissa >> shift;
    const std::uint32_t rem = mantissa & ((1u << shift) - 1);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = (static_cast<std::uint32_t>(e) << 10) | (mantissa >> 13);
  const std::uint32_t rem = mantissa & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
  return static_cast<std::uint16_t>(sign | half);
}

void write_container(const std::filesystem::path& path, const std::vector<TensorBlob>& blobs,
                     const std::map<std::string, std::string>& metadata) {
  json header = json::object();
  std::string data;
  for (const auto& b : blobs) {
    std::uint64_t n = 1;
    for (auto d : b.shape) n *= d;
    if (n != b.values.size()) {
      throw Error(ErrorCode::BadSpec, "tensor '" + b.name + "' shape does not match its values");
    }
    const std::uint64_t begin = data.size();
    for (double v : b.values) {
      switch (b.dtype) {
        case Dtype::F32: store_le(data, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
        case Dtype::F64: store_le(data, std::bit_cast<std::uint64_t>(v)); break;
        case Dtype::BF16: store_le(data, float_to_bf16(static_cast<float>(v))); break;
        case Dtype::F16: store_le(data, float_to_f16(static_cast<float>(v))); break;
      }
    }
    header[b.name] = {{"dtype", std::string(to_string(b.dtype))},
                      {"shape", b.shape},
                      {"data_offsets", {begin, static_cast<std::uint64_t>(data.size())}}};
  }
  if (!metadata.empty()) header["__metadata__"] = metadata;

  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::string prefix;
  store_le(prefix, static_cast<std::uint64_t>(text.size()));
  out.write(prefix.data(), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

void validate_run_spec(const RunSpec& spec) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::BadSpec, what); };
  if (spec.layers < 1) bad("layers must be >= 1");
  if (spec.tokens_schedule_b.empty()) bad("need at least one checkpoint");
  for (std::size_t i = 0; i < spec.tokens_schedule_b.size(); ++i) {
    if (!(spec.tokens_schedule_b[i] >= 0.0)) bad("tokens must be >= 0");
    if (i > 0 && !(spec.tokens_schedule_b[i] > spec.tokens_schedule_b[i - 1])) {
      bad("token schedule must be strictly increasing");
    }
  }
  const auto n = static_cast<std::size_t>(spec.layers);
  if (spec.std_start.size() != n || spec.std_limit.size() != n) {
    bad("std_start and std_limit need one entry per layer");
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!(spec.std_start[k] > 0.0) || !(spec.std_limit[k] > 0.0)) bad("target stds must be > 0");
  }
  if (!(spec.contraction > 0.0 && spec.contraction < 1.0)) bad("contraction must lie in (0, 1)");
  const auto h = static_cast<std::uint64_t>(std::llround(std::sqrt(static_cast<double>(spec.tensor_elems))));
  if (spec.tensor_elems < 4 || h * h != spec.tensor_elems) bad("tensor_elems must be a square >= 4");
  if (!spec.stages.empty() && spec.stages.size() != spec.checkpoints()) {
    bad("stages needs one label per checkpoint");
  }
}

double target_std(const RunSpec& spec, std::size_t checkpoint, int layer) {
  const auto k = static_cast<std::size_t>(layer);
  return spec.std_limit[k] + (spec.std_start[k] - spec.std_limit[k]) *
                                 std::pow(spec.contraction, static_cast<double>(checkpoint));
}

std::vector<GeneratedCheckpoint> gen_converging_run(const RunSpec& spec,
                                                    const std::filesystem::path& dir) {
  validate_run_spec(spec);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

  const auto h = static_cast<std::uint64_t>(std::llround(std::sqrt(static_cast<double>(spec.tensor_elems))));
  const std::size_t roles = std::size(kRoleNames);

  std::vector<std::vector<double>> bases;
  for (int layer = 0; layer < spec.layers; ++layer) {
    for (std::size_t r = 0; r < roles; ++r) {
      const bool norm = r >= 7;
      bases.push_back(unit_sample(spec.seed, static_cast<std::uint64_t>(layer) * 64 + r,
                                  norm ? h : h * h));
    }
  }
  std::vector<double> embed_base;
  std::vector<double> head_base;
  if (spec.include_embeddings) {
    embed_base = unit_sample(spec.seed, 0xE0000, h * h);
    head_base = unit_sample(spec.seed, 0xE0001, h * h);
  }

  std::vector<GeneratedCheckpoint> out;
  for (std::size_t i = 0; i < spec.checkpoints(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "ckpt_%03zu", i);
    std::vector<TensorBlob> blobs;
    if (spec.include_embeddings) {
      TensorBlob b{"model.embed_tokens.weight", spec.dtype, {h, h}, embed_base};
      for (auto& v : b.values) v *= 0.02;
      blobs.push_back(std::move(b));
    }
    for (int layer = 0; layer < spec.layers; ++layer) {
      const double sigma = target_std(spec, i, layer);
      for (std::size_t r = 0; r < roles; ++r) {
        const bool norm = r >= 7;
        TensorBlob b;
        b.name = "model.layers." + std::to_string(layer) + "." + kRoleNames[r];
        b.dtype = spec.dtype;
        b.shape = norm ? std::vector<std::uint64_t>{h} : std::vector<std::uint64_t>{h, h};
        b.values = bases[static_cast<std::size_t>(layer) * roles + r];
        for (auto& v : b.values) v *= sigma;
        blobs.push_back(std::move(b));
      }
    }
    if (spec.include_embeddings) {
      TensorBlob b{"lm_head.weight", spec.dtype, {h, h}, head_base};
      for (auto& v : b.values) v *= 0.02;
      blobs.push_back(std::move(b));
    }

    const std::string stage = spec.stages.empty() ? std::string() : spec.stages[i];
    GeneratedCheckpoint g{dir / (std::string(stem) + ".safetensors"),
                          dir / (std::string(stem) + ".meta.json")};
    write_container(g.container, blobs,
                    {{"checkpoint_id", stem},
                     {"tokens_b", fmt(spec.tokens_schedule_b[i])},
                     {"stage", stage}});
    write_sidecar(g.sidecar, {stem, spec.tokens_schedule_b[i], stage});
    out.push_back(std::move(g));
  }
  return out;
}

RunSpec parse_run_spec(const json& j) {
  RunSpec spec;
  if (!j.is_object()) throw Error(ErrorCode::BadSpec, "run spec must be an object");
  for (const char* key : {"tensor_elems", "seed"}) {
    if (j.contains(key) && !(j[key].is_number_unsigned() || (j[key].is_number_integer() && j[key].get<std::int64_t>() >= 0))) {
      throw Error(ErrorCode::BadSpec, std::string("run spec: ") + key + " must be a non-negative integer");
    }
  }
  try {
    spec.layers = j.value("layers", spec.layers);
    spec.tokens_schedule_b = j.value("tokens_schedule_b", spec.tokens_schedule_b);
    spec.std_start = j.value("std_start", spec.std_start);
    spec.std_limit = j.value("std_limit", spec.std_limit);
    spec.contraction = j.value("contraction", spec.contraction);
    spec.tensor_elems = j.value("tensor_elems", spec.tensor_elems);
    spec.seed = j.value("seed", spec.seed);
    spec.dtype = parse_dtype(j.value("dtype", std::string("F32")));
    spec.include_embeddings = j.value("include_embeddings", spec.include_embeddings);
    if (j.contains("stages")) {
      spec.stages = j["stages"].get<std::vector<std::string>>();
    } else if (j.contains("tokens_schedule_b")) {
      spec.stages.clear();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadSpec, std::string("run spec: ") + e.what());
  }
  validate_run_spec(spec);
  return spec;
}

std::string_view to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::SmoothDecay: return "smooth_decay";
    case LossKind::WithSpikes: return "with_spikes";
    case LossKind::PlateauThenDrop: return "plateau_then_drop";
  }
  return "smooth_decay";
}

LossKind parse_loss_kind(std::string_view s) {
  for (LossKind k : {LossKind::SmoothDecay, LossKind::WithSpikes, LossKind::PlateauThenDrop}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::BadSpec, "unknown loss curve kind '" + std::string(s) + "'");
}

LossCurve make_loss_curve(LossKind kind, const LossCurveParams& p, std::uint64_t seed) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::BadSpec, what); };
  if (p.points < 2) bad("need at least two points");
  if (!(p.token_step_b > 0.0)) bad("token_step_b must be > 0");
  if (!(p.noise >= 0.0)) bad("noise must be >= 0");
  if (kind == LossKind::WithSpikes) {
    for (auto pos : p.spike_positions) {
      if (pos >= p.points) bad("spike position " + std::to_string(pos) + " past the end");
    }
    if (!(p.spike_height > 0.0)) bad("spike_height must be > 0");
  }
  const double span = static_cast<double>(p.points - 1) * p.token_step_b;
  if (kind == LossKind::PlateauThenDrop) {
    if (!(p.plateau_start_b >= 0.0 && p.plateau_end_b > p.plateau_start_b &&
          p.plateau_end_b + p.drop_width_b <= span)) {
      bad("plateau segment must lie inside the curve, followed by the drop");
    }
    if (!(p.drop_width_b > 0.0)) bad("drop_width_b must be > 0");
  }
  if (kind == LossKind::SmoothDecay && !(p.decay_b > 0.0)) bad("decay_b must be > 0");

  std::mt19937_64 rng(splitmix64(seed));
  LossCurve curve;
  curve.kind = kind;
  curve.series.name = std::string(to_string(kind));
  curve.series.direction = Direction::LowerBetter;

  const double flat = p.start_value + p.slope_per_b * p.plateau_start_b;
  for (std::size_t j = 0; j < p.points; ++j) {
    const double t = static_cast<double>(j) * p.token_step_b;
    double v;
    if (kind == LossKind::PlateauThenDrop) {
      if (t < p.plateau_start_b) {
        v = p.start_value + p.slope_per_b * t;
      } else if (t < p.plateau_end_b) {
        v = flat;
      } else if (t < p.plateau_end_b + p.drop_width_b) {
        v = flat - p.drop * (t - p.plateau_end_b) / p.drop_width_b;
      } else {
        v = flat - p.drop + p.slope_per_b * (t - p.plateau_end_b - p.drop_width_b);
      }
    } else if (kind == LossKind::WithSpikes) {
      v = p.start_value + p.spike_trend_per_b * t;
    } else {
      v = p.floor + p.amplitude * std::exp(-t / p.decay_b);
    }
    v += p.noise * (2.0 * uniform01(rng) - 1.0);
    curve.series.points.push_back({t, v});
  }
  if (kind == LossKind::WithSpikes) {
    curve.spike_indices = p.spike_positions;
    std::sort(curve.spike_indices.begin(), curve.spike_indices.end());
    curve.spike_indices.erase(std::unique(curve.spike_indices.begin(), curve.spike_indices.end()),
                              curve.spike_indices.end());
    for (auto idx : curve.spike_indices) curve.series.points[idx].value += p.spike_height;
  }
  if (kind == LossKind::PlateauThenDrop) curve.plateaus.emplace_back(p.plateau_start_b, p.plateau_end_b);
  return curve;
}

std::pair<std::filesystem::path, std::filesystem::path> gen_loss_curve(
    LossKind kind, const LossCurveParams& params, std::uint64_t seed,
    const std::filesystem::path& path) {
  const LossCurve curve = make_loss_curve(kind, params, seed);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& pt : curve.series.points) {
    out << json{{"tokens_b", pt.tokens_b}, {"value", pt.value}}.dump() << '\n';
  }

  json spikes = json::array();
  for (auto idx : curve.spike_indices) {
    spikes.push_back({{"index", idx}, {"tokens_b", curve.series.points[idx].tokens_b}});
  }
  json plateaus = json::array();
  for (const auto& [a, b] : curve.plateaus) plateaus.push_back({{"start_b", a}, {"end_b", b}});
  const json truth = {{"kind", std::string(to_string(kind))},
                      {"seed", seed},
                      {"spikes", spikes},
                      {"plateaus", plateaus}};
  auto truth_path = path.parent_path() / (path.stem().string() + ".truth.json");
  std::ofstream tout(truth_path, std::ios::binary | std::ios::trunc);
  if (!tout) throw Error(ErrorCode::IoError, "cannot write " + truth_path.string());
  tout << truth.dump(2) << '\n';
  return {path, truth_path};
}

LossCurveParams parse_loss_params(const json& j) {
  LossCurveParams p;
  if (j.is_null()) return p;
  if (!j.is_object()) throw Error(ErrorCode::BadSpec, "loss params must be an object");
  auto require_count = [](const json& v, const char* key) {
    if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0))) {
      throw Error(ErrorCode::BadSpec, std::string("loss params: ") + key + " must be a non-negative integer");
    }
  };
  if (j.contains("points")) require_count(j["points"], "points");
  if (j.contains("spike_positions")) {
    if (!j["spike_positions"].is_array()) throw Error(ErrorCode::BadSpec, "loss params: spike_positions must be a list");
    for (const auto& v : j["spike_positions"]) require_count(v, "spike_positions");
  }
  try {
    p.points = j.value("points", p.points);
    p.token_step_b = j.value("token_step_b", p.token_step_b);
    p.noise = j.value("noise", p.noise);
    p.floor = j.value("floor", p.floor);
    p.amplitude = j.value("amplitude", p.amplitude);
    p.decay_b = j.value("decay_b", p.decay_b);
    p.spike_positions = j.value("spike_positions", p.spike_positions);
    p.spike_height = j.value("spike_height", p.spike_height);
    p.spike_trend_per_b = j.value("spike_trend_per_b", p.spike_trend_per_b);
    p.start_value = j.value("start_value", p.start_value);
    p.slope_per_b = j.value("slope_per_b", p.slope_per_b);
    p.plateau_start_b = j.value("plateau_start_b", p.plateau_start_b);
    p.plateau_end_b = j.value("plateau_end_b", p.plateau_end_b);
    p.drop = j.value("drop", p.drop);
    p.drop_width_b = j.value("drop_width_b", p.drop_width_b);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadSpec, std::string("loss params: ") + e.what());
  }
  return p;
}

}  // namespace trainwatch
