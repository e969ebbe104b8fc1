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
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trainwatch {

enum class Dtype { F32, F16, BF16, F64 };

std::size_t dtype_width(Dtype dtype) noexcept;
std::string_view to_string(Dtype dtype) noexcept;
/// Throws Error(UnknownDtype) for anything outside the four supported types.
Dtype parse_dtype(std::string_view name);

struct TensorRecord {
  std::string name;
  Dtype dtype = Dtype::F32;
  std::vector<std::uint64_t> shape;
  std::uint64_t offset = 0;  // relative to the start of the data region
  std::uint64_t length = 0;  // bytes

  std::uint64_t element_count() const noexcept;
};

/// Validated view of a container header. Holds no tensor data.
///
/// Layout on disk: u64 little-endian header length, a UTF-8 JSON header
/// mapping tensor names to {dtype, shape, data_offsets: [begin, end)}, then
/// the raw little-endian data region. The optional "__metadata__" entry is a
/// string to string map.
struct ContainerIndex {
  std::filesystem::path path;
  std::uint64_t header_size = 0;
  std::uint64_t data_size = 0;
  std::vector<TensorRecord> tensors;  // ordered by offset
  std::map<std::string, std::string> metadata;

  std::uint64_t data_start() const noexcept { return 8 + header_size; }
  const TensorRecord* find(std::string_view name) const noexcept;
};

ContainerIndex open_container(const std::filesystem::path& path);

enum class NanPolicy { Strict, Lenient };

struct TensorValues {
  std::vector<double> values;
  std::uint64_t dropped = 0;  // non-finite values skipped under Lenient
};

/// Decodes a tensor to doubles in stored row-major order.
TensorValues read_tensor_values(const ContainerIndex& index, std::string_view name,
                                NanPolicy policy = NanPolicy::Strict);

/// Streams a tensor through `sink` in bounded chunks, so arbitrarily large
/// tensors never need to be resident. Returns the number of dropped values.
std::uint64_t visit_tensor_values(const ContainerIndex& index, const TensorRecord& record,
                                  NanPolicy policy,
                                  const std::function<void(std::span<const double>)>& sink);

// ---------------------------------------------------------------------------
// Parameter naming

enum class Role {
  AttnQ,
  AttnK,
  AttnV,
  AttnO,
  MlpGate,
  MlpUp,
  MlpDown,
  NormInput,
  NormPost,
  QkvFused,
  Other,
};

/// The nine per-layer roles that are tracked by default.
inline constexpr Role kMonitoredRoles[] = {
    Role::AttnQ,  Role::AttnK, Role::AttnV,   Role::AttnO,     Role::MlpGate,
    Role::MlpUp,  Role::MlpDown, Role::NormInput, Role::NormPost,
};

bool is_monitored(Role role) noexcept;
std::string_view to_string(Role role) noexcept;
std::optional<Role> parse_role(std::string_view name) noexcept;

struct ParameterSlot {
  int layer = -1;  // -1 for rules with no layer capture (role Other only)
  Role role = Role::Other;

  friend bool operator==(const ParameterSlot&, const ParameterSlot&) = default;
};

struct MappingRule {
  std::string pattern;  // ECMAScript regex; capture group 1 is the layer number
  Role role = Role::Other;
};

class MappingConfig {
 public:
  MappingConfig() = default;
  MappingConfig(std::vector<MappingRule> rules, bool strict);

  /// Per-projection names (q_proj, k_proj, ..., post_attention_layernorm).
  static MappingConfig per_projection(bool strict = false);
  /// Fused-QKV names (attention.query_key_value, attention.dense, ...).
  static MappingConfig fused_qkv(bool strict = false);
  /// Both rule sets, per-projection first.
  static MappingConfig defaults(bool strict = false);
  /// {"rules": [{"pattern": ..., "role": ...}], "strict": bool}
  static MappingConfig from_json_file(const std::filesystem::path& path);
  static MappingConfig from_json_text(std::string_view text);

  const std::vector<MappingRule>& rules() const noexcept { return rules_; }
  bool strict() const noexcept { return strict_; }
  void set_strict(bool strict) noexcept { strict_ = strict; }
  const std::regex& compiled(std::size_t i) const { return compiled_[i]; }

 private:
  std::vector<MappingRule> rules_;
  std::vector<std::regex> compiled_;
  bool strict_ = false;
};

/// First matching rule wins. Returns nullopt when nothing matches in lenient
/// mode; throws Error(StrictUnmapped) in strict mode.
std::optional<ParameterSlot> map_parameter(std::string_view name, const MappingConfig& cfg);

}  // namespace trainwatch
