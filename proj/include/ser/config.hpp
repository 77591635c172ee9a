#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ser/classifiers.hpp"

namespace ser {

// Experiment configuration: a flat text file of `key = value` lines grouped
// under `[section]` headers (keys may also be written fully dotted,
// `lstm.epochs = 20`). `#` and `;` start comments. Every key is one of the
// documented schema keys; anything else is a config error naming the key.
//
//   [experiment] id, seed, output_dir
//   [data]       train_manifest, test_manifests (comma list), cache,
//                held_out_speakers (comma list), merge_excitement,
//                strict_labels, extract, jobs
//   [features]   kind = is09 | mfcc_seq
//   [classifier] kind = logreg | svm | lstm | mtl, allow_feature_override
//   [logreg]     l2, grad_tol, max_iter
//   [svm]        C, gamma, tol, max_iter_per_sample
//   [lstm]       hidden (comma list), penultimate, batch_size, epochs,
//                patience, validation_fraction, lr, beta1, beta2, eps
//   [mtl]        lambda_lang
//   [transfer]   base_model, train_head, epochs, batch_size, lr,
//                target_manifests (comma list)
enum class ClassifierKind { LogReg, Svm, Lstm, Mtl };
const char* to_string(ClassifierKind k);

struct ExperimentConfig {
  std::string id = "experiment";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";

  std::filesystem::path train_manifest;
  std::vector<std::filesystem::path> test_manifests;
  std::filesystem::path cache;
  std::vector<std::string> held_out_speakers;
  bool merge_excitement = false;
  bool strict_labels = true;
  bool extract = true;
  std::size_t jobs = 0;

  FeatureKind feature = FeatureKind::Is09;
  ClassifierKind classifier = ClassifierKind::Svm;
  bool allow_feature_override = false;

  LogRegConfig logreg;
  SvmConfig svm;
  LstmConfig lstm;
  double lambda_lang = 1.0;

  std::filesystem::path base_model;
  FinetuneConfig finetune;
  std::vector<std::filesystem::path> target_manifests;

  // Every effective key with its canonical value, sorted by key.
  std::map<std::string, std::string> canonical;

  std::uint64_t hash() const;
  nlohmann::json to_json() const;
};

// Relative paths resolve against base_dir.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace ser
