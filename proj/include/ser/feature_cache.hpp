#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ser/features.hpp"

namespace ser {

struct UtteranceRecord;

enum class FeatureKind : std::uint8_t { MfccSeq = 0, Is09 = 1 };

const char* to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& s);

// Per-utterance features as stored on disk (f32).
struct CachedFeatures {
  std::optional<std::vector<float>> is09;  // kIs09Dim values
  std::optional<std::vector<float>> mfcc;  // kMfccFrames × kNumCeps, row-major
  std::uint16_t valid_frames = 0;

  static CachedFeatures from(const Is09Vector* is09, const MfccSequence* mfcc);

  Is09Vector is09_vector() const;
  MfccSequence mfcc_sequence() const;
  bool has(FeatureKind kind) const {
    return kind == FeatureKind::Is09 ? is09.has_value() : mfcc.has_value();
  }

  bool operator==(const CachedFeatures&) const = default;
};

// Versioned container, magic "SERF". Layout (little-endian):
//   header  : "SERF" u16 version u16 reserved u32 count u64 fnv1a(body)
//   index   : count × { u32 id_len, id bytes, u8 flags, u16 valid_frames,
//                       u64 data_offset }
//   data    : per entry, 384 f32 (flag bit 0) then 120·13 f32 (flag bit 1)
// Entries are sorted by utterance id so the bytes do not depend on the order
// in which utterances were extracted.
class FeatureCache {
 public:
  static constexpr std::uint16_t kVersion = 1;

  void put(const std::string& id, CachedFeatures features);
  const CachedFeatures& get(const std::string& id) const;
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, CachedFeatures>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static FeatureCache deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static FeatureCache load(const std::filesystem::path& path);

 private:
  std::map<std::string, CachedFeatures> entries_;
};

struct ExtractOptions {
  bool is09 = true;
  bool mfcc = true;
  std::size_t jobs = 0;  // 0 → hardware concurrency
};

// Reads every record's audio and extracts the requested feature kinds.
// Utterances shorter than one 25 ms frame are zero-padded first.
FeatureCache extract_features(const std::vector<UtteranceRecord>& records,
                              const ExtractOptions& opts = {});

CachedFeatures extract_utterance(const Waveform& w, bool is09, bool mfcc);

}  // namespace ser
