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

#include "trainwatch/checkpoint_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "trainwatch/error.hpp"
#include "trainwatch/float_decode.hpp"

namespace trainwatch {

using nlohmann::json;

namespace {

constexpr std::size_t kChunkElements = 1 << 16;

template <typename UInt>
UInt load_le(const unsigned char* p) noexcept {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    v |= static_cast<UInt>(p[i]) << (8 * i);
  }
  return v;
}

double decode_one(Dtype dtype, const unsigned char* p) noexcept {
  switch (dtype) {
    case Dtype::F32: return std::bit_cast<float>(load_le<std::uint32_t>(p));
    case Dtype::F64: return std::bit_cast<double>(load_le<std::uint64_t>(p));
    case Dtype::F16: return f16_to_float(load_le<std::uint16_t>(p));
    case Dtype::BF16: return bf16_to_float(load_le<std::uint16_t>(p));
  }
  return 0.0;
}

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& what) {
  throw Error(ErrorCode::MalformedHeader, path.string() + ": " + what);
}

TensorRecord parse_record(const std::filesystem::path& path, const std::string& name,
                          const json& entry, std::uint64_t data_size) {
  if (!entry.is_object()) malformed(path, "entry '" + name + "' is not an object");
  const auto dtype_it = entry.find("dtype");
  const auto shape_it = entry.find("shape");
  const auto offsets_it = entry.find("data_offsets");
  if (dtype_it == entry.end() || !dtype_it->is_string()) {
    malformed(path, "entry '" + name + "' lacks a dtype");
  }
  if (shape_it == entry.end() || !shape_it->is_array()) {
    malformed(path, "entry '" + name + "' lacks a shape");
  }
  if (offsets_it == entry.end() || !offsets_it->is_array() || offsets_it->size() != 2) {
    malformed(path, "entry '" + name + "' lacks data_offsets [begin, end)");
  }

  TensorRecord rec;
  rec.name = name;
  rec.dtype = parse_dtype(dtype_it->get<std::string>());

  std::uint64_t elements = 1;
  for (const auto& dim : *shape_it) {
    if (!dim.is_number_unsigned()) malformed(path, "entry '" + name + "' has a bad dimension");
    const auto d = dim.get<std::uint64_t>();
    if (__builtin_mul_overflow(elements, d, &elements)) {
      malformed(path, "entry '" + name + "' shape overflows");
    }
    rec.shape.push_back(d);
  }
  const auto& begin = (*offsets_it)[0];
  const auto& end = (*offsets_it)[1];
  if (!begin.is_number_unsigned() || !end.is_number_unsigned()) {
    malformed(path, "entry '" + name + "' has non-integer offsets");
  }
  rec.offset = begin.get<std::uint64_t>();
  const auto stop = end.get<std::uint64_t>();
  if (stop < rec.offset) malformed(path, "entry '" + name + "' has end < begin");
  rec.length = stop - rec.offset;

  std::uint64_t expected = 0;
  if (__builtin_mul_overflow(elements, dtype_width(rec.dtype), &expected) ||
      expected != rec.length) {
    malformed(path, "entry '" + name + "' byte length does not match shape x dtype width");
  }
  if (stop > data_size) {
    malformed(path, "entry '" + name + "' extends past the data region (" +
                        std::to_string(stop) + " > " + std::to_string(data_size) + ")");
  }
  return rec;
}

}  // namespace

std::size_t dtype_width(Dtype dtype) noexcept {
  switch (dtype) {
    case Dtype::F32: return 4;
    case Dtype::F16: return 2;
    case Dtype::BF16: return 2;
    case Dtype::F64: return 8;
  }
  return 0;
}

std::string_view to_string(Dtype dtype) noexcept {
  switch (dtype) {
    case Dtype::F32: return "F32";
    case Dtype::F16: return "F16";
    case Dtype::BF16: return "BF16";
    case Dtype::F64: return "F64";
  }
  return "?";
}

Dtype parse_dtype(std::string_view name) {
  if (name == "F32") return Dtype::F32;
  if (name == "F16") return Dtype::F16;
  if (name == "BF16") return Dtype::BF16;
  if (name == "F64") return Dtype::F64;
  throw Error(ErrorCode::UnknownDtype, "unsupported dtype '" + std::string(name) + "'");
}

std::uint64_t TensorRecord::element_count() const noexcept {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const TensorRecord* ContainerIndex::find(std::string_view name) const noexcept {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

ContainerIndex open_container(const std::filesystem::path& path) {
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot stat " + path.string() + ": " + ec.message());
  if (file_size < 8) malformed(path, "file shorter than the 8-byte length prefix");

  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());

  std::array<unsigned char, 8> prefix{};
  in.read(reinterpret_cast<char*>(prefix.data()), 8);
  const auto header_size = load_le<std::uint64_t>(prefix.data());
  if (header_size == 0 || header_size > file_size - 8) {
    malformed(path, "header length " + std::to_string(header_size) + " exceeds file size");
  }

  std::string header(header_size, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_size));
  if (!in) malformed(path, "short read in header");

  json doc;
  try {
    doc = json::parse(header);
  } catch (const json::parse_error& e) {
    malformed(path, std::string("header is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) malformed(path, "header is not a JSON object");

  ContainerIndex index;
  index.path = path;
  index.header_size = header_size;
  index.data_size = file_size - 8 - header_size;

  for (const auto& [key, value] : doc.items()) {
    if (key == "__metadata__") {
      if (!value.is_object()) malformed(path, "__metadata__ is not an object");
      for (const auto& [mk, mv] : value.items()) {
        if (!mv.is_string()) malformed(path, "__metadata__ value for '" + mk + "' is not a string");
        index.metadata.emplace(mk, mv.get<std::string>());
      }
      continue;
    }
    index.tensors.push_back(parse_record(path, key, value, index.data_size));
  }

  std::sort(index.tensors.begin(), index.tensors.end(),
            [](const TensorRecord& a, const TensorRecord& b) {
              return a.offset != b.offset ? a.offset < b.offset : a.name < b.name;
            });
  const TensorRecord* prev = nullptr;
  for (const auto& t : index.tensors) {
    if (t.length == 0) continue;
    if (prev != nullptr && t.offset < prev->offset + prev->length) {
      throw Error(ErrorCode::OverlappingRanges,
                  path.string() + ": '" + prev->name + "' overlaps '" + t.name + "'");
    }
    prev = &t;
  }
  return index;
}

std::uint64_t visit_tensor_values(const ContainerIndex& index, const TensorRecord& record,
                                  NanPolicy policy,
                                  const std::function<void(std::span<const double>)>& sink) {
  std::ifstream in(index.path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + index.path.string());
  in.seekg(static_cast<std::streamoff>(index.data_start() + record.offset));

  const std::size_t width = dtype_width(record.dtype);
  std::vector<unsigned char> raw(kChunkElements * width);
  std::vector<double> decoded;
  decoded.reserve(kChunkElements);

  std::uint64_t remaining = record.element_count();
  std::uint64_t position = 0;
  std::uint64_t dropped = 0;
  while (remaining > 0) {
    const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, kChunkElements));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * width));
    if (static_cast<std::size_t>(in.gcount()) != n * width) {
      throw Error(ErrorCode::TruncatedData, index.path.string() + ": tensor '" + record.name +
                                                "' ends early at element " +
                                                std::to_string(position + in.gcount() / width));
    }
    decoded.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = decode_one(record.dtype, raw.data() + i * width);
      if (!std::isfinite(v)) {
        if (policy == NanPolicy::Strict) {
          throw Error(ErrorCode::NaNPolicy, index.path.string() + ": tensor '" + record.name +
                                                "' has a non-finite value at element " +
                                                std::to_string(position + i));
        }
        ++dropped;
        continue;
      }
      decoded.push_back(v);
    }
    if (!decoded.empty()) sink(decoded);
    remaining -= n;
    position += n;
  }
  return dropped;
}

TensorValues read_tensor_values(const ContainerIndex& index, std::string_view name,
                                NanPolicy policy) {
  const TensorRecord* record = index.find(name);
  if (record == nullptr) {
    throw Error(ErrorCode::NameNotFound, "no tensor named '" + std::string(name) + "' in " +
                                             index.path.string());
  }
  TensorValues out;
  out.values.reserve(static_cast<std::size_t>(record->element_count()));
  out.dropped = visit_tensor_values(index, *record, policy, [&](std::span<const double> chunk) {
    out.values.insert(out.values.end(), chunk.begin(), chunk.end());
  });
  return out;
}

// ---------------------------------------------------------------------------

bool is_monitored(Role role) noexcept {
  return std::find(std::begin(kMonitoredRoles), std::end(kMonitoredRoles), role) !=
         std::end(kMonitoredRoles);
}

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::AttnQ: return "attn_q";
    case Role::AttnK: return "attn_k";
    case Role::AttnV: return "attn_v";
    case Role::AttnO: return "attn_o";
    case Role::MlpGate: return "mlp_gate";
    case Role::MlpUp: return "mlp_up";
    case Role::MlpDown: return "mlp_down";
    case Role::NormInput: return "norm_input";
    case Role::NormPost: return "norm_post";
    case Role::QkvFused: return "qkv_fused";
    case Role::Other: return "other";
  }
  return "other";
}

std::optional<Role> parse_role(std::string_view name) noexcept {
  for (Role r : {Role::AttnQ, Role::AttnK, Role::AttnV, Role::AttnO, Role::MlpGate, Role::MlpUp,
                 Role::MlpDown, Role::NormInput, Role::NormPost, Role::QkvFused, Role::Other}) {
    if (to_string(r) == name) return r;
  }
  return std::nullopt;
}

MappingConfig::MappingConfig(std::vector<MappingRule> rules, bool strict)
    : rules_(std::move(rules)), strict_(strict) {
  compiled_.reserve(rules_.size());
  for (const auto& rule : rules_) {
    std::regex re;
    try {
      re = std::regex(rule.pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw Error(ErrorCode::InvalidConfig, "bad pattern '" + rule.pattern + "': " + e.what());
    }
    if (rule.role != Role::Other && re.mark_count() < 1) {
      throw Error(ErrorCode::InvalidConfig,
                  "pattern '" + rule.pattern + "' for layer-scoped role " +
                      std::string(to_string(rule.role)) + " has no layer capture group");
    }
    compiled_.push_back(std::move(re));
  }
}

MappingConfig MappingConfig::per_projection(bool strict) {
  const std::string prefix = R"(^(?:model\.)?layers\.(\d+)\.)";
  return MappingConfig(
      {
          {prefix + R"(self_attn\.q_proj\.weight$)", Role::AttnQ},
          {prefix + R"(self_attn\.k_proj\.weight$)", Role::AttnK},
          {prefix + R"(self_attn\.v_proj\.weight$)", Role::AttnV},
          {prefix + R"(self_attn\.o_proj\.weight$)", Role::AttnO},
          {prefix + R"(mlp\.gate_proj\.weight$)", Role::MlpGate},
          {prefix + R"(mlp\.up_proj\.weight$)", Role::MlpUp},
          {prefix + R"(mlp\.down_proj\.weight$)", Role::MlpDown},
          {prefix + R"(input_layernorm\.weight$)", Role::NormInput},
          {prefix + R"(post_attention_layernorm\.weight$)", Role::NormPost},
      },
      strict);
}

MappingConfig MappingConfig::fused_qkv(bool strict) {
  const std::string prefix = R"(^(?:transformer\.|gpt_neox\.)?(?:h|layers)\.(\d+)\.)";
  return MappingConfig(
      {
          {prefix + R"(attention\.query_key_value\.weight$)", Role::QkvFused},
          {prefix + R"(attention\.dense\.weight$)", Role::AttnO},
          {prefix + R"(mlp\.dense_h_to_4h\.weight$)", Role::MlpUp},
          {prefix + R"(mlp\.dense_4h_to_h\.weight$)", Role::MlpDown},
          {prefix + R"(input_layernorm\.weight$)", Role::NormInput},
          {prefix + R"(post_attention_layernorm\.weight$)", Role::NormPost},
      },
      strict);
}

MappingConfig MappingConfig::defaults(bool strict) {
  auto rules = per_projection().rules();
  const auto fused = fused_qkv().rules();
  rules.insert(rules.end(), fused.begin(), fused.end());
  return MappingConfig(std::move(rules), strict);
}

MappingConfig MappingConfig::from_json_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("mapping is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("rules") || !doc["rules"].is_array()) {
    throw Error(ErrorCode::InvalidConfig, "mapping must be an object with a 'rules' array");
  }
  std::vector<MappingRule> rules;
  for (const auto& r : doc["rules"]) {
    if (!r.is_object() || !r.contains("pattern") || !r.contains("role") ||
        !r["pattern"].is_string() || !r["role"].is_string()) {
      throw Error(ErrorCode::InvalidConfig, "each rule needs string 'pattern' and 'role'");
    }
    const auto role = parse_role(r["role"].get<std::string>());
    if (!role) {
      throw Error(ErrorCode::InvalidConfig, "unknown role '" + r["role"].get<std::string>() + "'");
    }
    rules.push_back({r["pattern"].get<std::string>(), *role});
  }
  const bool strict = doc.value("strict", false);
  return MappingConfig(std::move(rules), strict);
}

MappingConfig MappingConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open mapping file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::optional<ParameterSlot> map_parameter(std::string_view name, const MappingConfig& cfg) {
  const std::string subject(name);
  for (std::size_t i = 0; i < cfg.rules().size(); ++i) {
    std::smatch m;
    if (!std::regex_search(subject, m, cfg.compiled(i))) continue;
    ParameterSlot slot{-1, cfg.rules()[i].role};
    if (m.size() > 1 && m[1].matched) {
      const std::string digits = m[1].str();
      if (digits.empty() || digits.size() > 9 ||
          !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        continue;
      }
      slot.layer = std::stoi(digits);
    } else if (slot.role != Role::Other) {
      continue;
    }
    return slot;
  }
  if (cfg.strict()) {
    throw Error(ErrorCode::StrictUnmapped, "no mapping rule matches '" + subject + "'");
  }
  return std::nullopt;
}

}  // namespace trainwatch
