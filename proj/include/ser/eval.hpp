#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ser/corpus.hpp"

namespace ser {

struct ClassMetrics {
  Emotion label = Emotion::Neutral;
  std::size_t support = 0;    // gold count
  std::size_t predicted = 0;  // predicted count
  double precision = 0.0;     // 0 when nothing was predicted as this class
  double recall = 0.0;        // 0 when the class has no support
  bool precision_undefined = false;
  bool recall_undefined = false;

  bool operator==(const ClassMetrics&) const = default;
};

struct EvalReport {
  std::string experiment_id;
  std::string row;        // table row, e.g. "IS09 + SVC"
  std::string train_set;  // corpus the model was trained on
  std::string test_set;   // table column
  std::vector<Emotion> labels;
  std::size_t total = 0;
  double accuracy = 0.0;
  double uar = 0.0;       // unweighted mean of recall over classes with support
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::optional<double> language_accuracy;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;

  bool operator==(const EvalReport&) const = default;
};

// Label vocabulary defaults to every emotion seen in gold or predictions, in
// canonical order.
EvalReport compute_metrics(std::span<const Emotion> predicted, std::span<const Emotion> gold);
EvalReport compute_metrics(std::span<const Emotion> predicted, std::span<const Emotion> gold,
                           const std::vector<Emotion>& labels);

double language_accuracy(std::span<const std::string> predicted, std::span<const std::string> gold);

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

enum class ReportLayout { SingleCorpus, CrossCorpus, Transfer, Mtl };
const char* to_string(ReportLayout l);
ReportLayout report_layout_from_string(const std::string& s);

// Fixed row labels of the transfer and multi-task tables.
std::string transfer_base_row(const std::string& base_corpus);
inline constexpr const char* kTransferFinetuneRow = "Fine-tune on smaller dataset";
inline constexpr const char* kMtlSingleRow = "LSTM (only predict emotion)";
inline constexpr const char* kMtlJointRow = "Multi-task LSTM (predict both emotion and language ID)";

struct RenderedReport {
  std::string text;     // aligned accuracy table, percent with 2 decimals
  nlohmann::json json;  // layout, rows, columns and every report in full
};

// LayoutMismatch when the list is empty or the rows do not fit the layout.
RenderedReport render_report(const std::vector<EvalReport>& reports, ReportLayout layout);
std::vector<EvalReport> reports_from_json(const nlohmann::json& j);

}  // namespace ser
