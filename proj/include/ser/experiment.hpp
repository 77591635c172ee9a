#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ser/bundle.hpp"
#include "ser/config.hpp"
#include "ser/corpus.hpp"
#include "ser/error.hpp"
#include "ser/eval.hpp"
#include "ser/feature_cache.hpp"

namespace ser {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
int exit_code_for(Errc code);

// Machine-readable error record printed by the CLI on failure.
nlohmann::json error_record(const Error& e);

// A manifest together with the features it needs.
struct Dataset {
  std::string corpus;  // corpus name of the first record
  std::vector<UtteranceRecord> records;
  FeatureCache features;
  std::uint64_t feature_hash = 0;  // over exactly the features used
};

Manifest read_manifest(const ExperimentConfig& cfg, const std::filesystem::path& manifest);

// Loads the manifest's feature cache under cfg.cache (a directory), extracting
// missing entries when cfg.extract is set; MissingUtterance otherwise. With an
// empty cfg.cache everything is extracted in memory.
Dataset load_dataset(const ExperimentConfig& cfg, const std::filesystem::path& manifest, FeatureKind kind);
Dataset subset(const Dataset& d, const std::vector<UtteranceRecord>& records, FeatureKind kind);

std::vector<FeatureInput> feature_inputs(const Dataset& d, FeatureKind kind);
SequenceSet sequence_set(const Dataset& d, FeatureKind kind);
std::vector<Emotion> emotions(const std::vector<UtteranceRecord>& records);

// Row label such as "IS09 + SVC".
std::string classifier_row(FeatureKind feature, ClassifierKind classifier);

// Trains the configured single-task model on the given data.
EmotionModel train_configured(const ExperimentConfig& cfg, const Dataset& train);
MtlModel train_configured_mtl(const ExperimentConfig& cfg, const Dataset& train);

EvalReport evaluate(const EmotionModel& model, const Dataset& test);
EvalReport evaluate(const MtlModel& model, const Dataset& test);

struct RunOutput {
  std::vector<EvalReport> reports;
  ReportLayout layout = ReportLayout::SingleCorpus;
  RenderedReport rendered;
  nlohmann::json json;  // rendered.json plus the provenance block
};

// extract → split → normalize → train → evaluate → report. Writes
// model.serm, report.json and report.txt under cfg.output_dir.
RunOutput cmd_run(const ExperimentConfig& cfg);

// Base model (loaded from transfer.base_model when it exists, otherwise
// trained on the base config's manifest) evaluated on each target's test
// speakers, then fine-tuned on the target's training speakers and re-tested.
RunOutput cmd_transfer(const ExperimentConfig& base_cfg, const ExperimentConfig& finetune_cfg);

// Serializes report JSON the same way every time (sorted keys, 2-space indent).
std::string dump_json(const nlohmann::json& j);

}  // namespace ser
