#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ser {

// The five emotions shared by every corpus. The numeric order is the class
// index order used by all classifiers.
enum class Emotion : std::uint8_t { Anger = 0, Happy, Sad, Fear, Neutral };
inline constexpr std::size_t kNumEmotions = 5;

const char* to_string(Emotion e);
std::optional<Emotion> emotion_from_string(const std::string& s);

struct UtteranceRecord {
  std::string id;
  std::filesystem::path audio_path;
  std::string speaker_id;
  std::string language;
  std::string raw_label;
  std::string corpus;
  Emotion emotion = Emotion::Neutral;
};

struct LabelMapOptions {
  // IEMOCAP "excitement" is excluded unless merged into happy.
  bool merge_excitement = false;
};

// corpus → raw label → canonical emotion (nullopt = excluded).
class LabelMap {
 public:
  explicit LabelMap(LabelMapOptions opts = {});

  bool knows_corpus(const std::string& corpus) const;
  // Returns true and sets `out` when the label is known; out = nullopt means
  // the label is deliberately excluded.
  bool lookup(const std::string& corpus, const std::string& raw_label,
              std::optional<Emotion>& out) const;
  std::vector<std::string> corpora() const;
  const std::map<std::string, std::optional<Emotion>>& labels(const std::string& corpus) const;

 private:
  std::map<std::string, std::map<std::string, std::optional<Emotion>>> table_;
};

struct ManifestOptions {
  bool strict = true;
  LabelMapOptions labels;
};

struct Manifest {
  std::vector<UtteranceRecord> records;
  std::size_t excluded = 0;  // rows whose label maps to no canonical emotion
  std::size_t unknown = 0;   // rows dropped for unmapped labels (non-strict only)
};

// CSV (exact header id,audio_path,speaker_id,language,raw_label,corpus, any
// column order) or JSON lines with the same keys. Relative audio paths are
// resolved against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path, const ManifestOptions& opts = {});
Manifest parse_manifest_csv(const std::string& text, const std::filesystem::path& base_dir,
                            const ManifestOptions& opts = {});
Manifest parse_manifest_jsonl(const std::string& text, const std::filesystem::path& base_dir,
                              const ManifestOptions& opts = {});
void write_manifest_csv(const std::filesystem::path& path,
                        const std::vector<UtteranceRecord>& records);

// Corpora with fewer utterances than this hold out one speaker, others two.
inline constexpr std::size_t kLargeCorpusUtterances = 1000;

struct SplitSpec {
  std::string corpus;
  std::vector<std::string> held_out_speakers;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<UtteranceRecord> train;
  std::vector<UtteranceRecord> test;
  SplitSpec spec;  // with the held-out speakers actually used
};

// Test = every utterance of the held-out speakers. An empty hold-out list is
// resolved from the seed: 1 speaker below kLargeCorpusUtterances, 2 above
// (for IEMOCAP-style "SesNN" speaker ids, one whole session).
Split split_speaker_disjoint(const std::vector<UtteranceRecord>& records, const SplitSpec& spec);

std::string split_to_json(const Split& split);

}  // namespace ser
