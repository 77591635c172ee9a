#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "ser/classifiers.hpp"

namespace ser {

// Model bundle, little-endian throughout:
//   header  : "SERM" u16 version u16 reserved u64 config_hash
//             u64 payload_len u64 fnv1a(payload)
//   payload : u8 kind (0 emotion, 1 multi-task) u8 variant u8 feature
//             labels (u32 n, u8 each) languages (u32 n, str each) f64 λ
//             architecture (u32 input, u32 layers, u32 hidden each,
//             u32 penultimate) normalizer (u32 d, f32 mean[d], f32 std[d])
//             u32 svm machines, shape table (u32 n, {str name, u32 rows,
//             u32 cols}) then every array as column-major f32.
struct ModelBundle {
  std::variant<EmotionModel, MtlModel> model;
  std::uint64_t config_hash = 0;
};

inline constexpr std::uint16_t kBundleVersion = 1;

std::vector<std::uint8_t> save_model(const ModelBundle& bundle);
// VersionMismatch, Corrupt (bad magic, truncation, checksum, shapes) and
// HashMismatch when expected_config_hash is given and differs.
ModelBundle load_model(std::span<const std::uint8_t> bytes,
                       std::optional<std::uint64_t> expected_config_hash = std::nullopt);

void save_model_file(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_model_file(const std::filesystem::path& path,
                            std::optional<std::uint64_t> expected_config_hash = std::nullopt);

}  // namespace ser
