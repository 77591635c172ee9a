#include "ser/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "ser/error.hpp"

namespace ser {

using nlohmann::json;

EvalReport compute_metrics(std::span<const Emotion> predicted, std::span<const Emotion> gold) {
  std::set<Emotion> seen(gold.begin(), gold.end());
  seen.insert(predicted.begin(), predicted.end());
  return compute_metrics(predicted, gold, std::vector<Emotion>(seen.begin(), seen.end()));
}

EvalReport compute_metrics(std::span<const Emotion> predicted, std::span<const Emotion> gold,
                           const std::vector<Emotion>& labels) {
  if (predicted.size() != gold.size())
    throw Error(Errc::LengthMismatch, std::to_string(predicted.size()) + " predictions for " +
                                          std::to_string(gold.size()) + " gold labels");
  if (gold.empty()) throw Error(Errc::EmptyEval, "nothing to evaluate");
  auto index = [&](Emotion e) {
    auto it = std::find(labels.begin(), labels.end(), e);
    if (it == labels.end())
      throw Error(Errc::LabelMismatch, std::string("label '") + to_string(e) + "' outside the vocabulary");
    return static_cast<std::size_t>(it - labels.begin());
  };

  EvalReport r;
  r.labels = labels;
  r.total = gold.size();
  const std::size_t k = labels.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) ++r.confusion[index(gold[i])][index(predicted[i])];

  std::size_t correct = 0;
  for (std::size_t c = 0; c < k; ++c) correct += r.confusion[c][c];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);

  double recall_sum = 0.0;
  std::size_t with_support = 0;
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m;
    m.label = labels[c];
    for (std::size_t j = 0; j < k; ++j) {
      m.support += r.confusion[c][j];
      m.predicted += r.confusion[j][c];
    }
    m.recall_undefined = m.support == 0;
    m.precision_undefined = m.predicted == 0;
    if (!m.recall_undefined) {
      m.recall = static_cast<double>(r.confusion[c][c]) / static_cast<double>(m.support);
      recall_sum += m.recall;
      ++with_support;
    }
    if (!m.precision_undefined)
      m.precision = static_cast<double>(r.confusion[c][c]) / static_cast<double>(m.predicted);
    r.per_class.push_back(m);
  }
  r.uar = with_support ? recall_sum / static_cast<double>(with_support) : 0.0;
  return r;
}

double language_accuracy(std::span<const std::string> predicted, std::span<const std::string> gold) {
  if (predicted.size() != gold.size())
    throw Error(Errc::LengthMismatch, "language prediction count differs from gold");
  if (gold.empty()) throw Error(Errc::EmptyEval, "nothing to evaluate");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predicted[i] == gold[i];
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

namespace {

Emotion emotion_from_json(const json& j) {
  auto e = emotion_from_string(j.get<std::string>());
  if (!e) throw Error(Errc::Corrupt, "unknown emotion '" + j.get<std::string>() + "' in report");
  return *e;
}

}  // namespace

json to_json(const EvalReport& r) {
  json j;
  j["experiment_id"] = r.experiment_id;
  j["row"] = r.row;
  j["train_set"] = r.train_set;
  j["test_set"] = r.test_set;
  j["labels"] = json::array();
  for (Emotion e : r.labels) j["labels"].push_back(to_string(e));
  j["total"] = r.total;
  j["accuracy"] = r.accuracy;
  j["uar"] = r.uar;
  j["per_class"] = json::array();
  for (const auto& m : r.per_class)
    j["per_class"].push_back({{"label", to_string(m.label)},
                              {"support", m.support},
                              {"predicted", m.predicted},
                              {"precision", m.precision},
                              {"recall", m.recall},
                              {"precision_undefined", m.precision_undefined},
                              {"recall_undefined", m.recall_undefined}});
  j["confusion"] = r.confusion;
  j["language_accuracy"] = r.language_accuracy ? json(*r.language_accuracy) : json(nullptr);
  j["config"] = r.config;
  j["seed"] = r.seed;
  return j;
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.experiment_id = j.at("experiment_id").get<std::string>();
    r.row = j.at("row").get<std::string>();
    r.train_set = j.at("train_set").get<std::string>();
    r.test_set = j.at("test_set").get<std::string>();
    for (const auto& e : j.at("labels")) r.labels.push_back(emotion_from_json(e));
    r.total = j.at("total").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.uar = j.at("uar").get<double>();
    for (const auto& m : j.at("per_class")) {
      ClassMetrics c;
      c.label = emotion_from_json(m.at("label"));
      c.support = m.at("support").get<std::size_t>();
      c.predicted = m.at("predicted").get<std::size_t>();
      c.precision = m.at("precision").get<double>();
      c.recall = m.at("recall").get<double>();
      c.precision_undefined = m.at("precision_undefined").get<bool>();
      c.recall_undefined = m.at("recall_undefined").get<bool>();
      r.per_class.push_back(c);
    }
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    if (!j.at("language_accuracy").is_null()) r.language_accuracy = j.at("language_accuracy").get<double>();
    r.config = j.at("config");
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::Corrupt, std::string("malformed report: ") + e.what());
  }
}

const char* to_string(ReportLayout l) {
  switch (l) {
    case ReportLayout::SingleCorpus: return "single_corpus";
    case ReportLayout::CrossCorpus: return "cross_corpus";
    case ReportLayout::Transfer: return "transfer";
    case ReportLayout::Mtl: return "mtl";
  }
  return "?";
}

ReportLayout report_layout_from_string(const std::string& s) {
  for (auto l : {ReportLayout::SingleCorpus, ReportLayout::CrossCorpus, ReportLayout::Transfer, ReportLayout::Mtl})
    if (s == to_string(l)) return l;
  throw Error(Errc::Config, "unknown report layout '" + s + "'");
}

std::string transfer_base_row(const std::string& base_corpus) { return "Train on " + base_corpus; }

namespace {

[[noreturn]] void mismatch(const std::string& msg) { throw Error(Errc::LayoutMismatch, msg); }

void check_layout(const std::vector<EvalReport>& reports, ReportLayout layout) {
  if (reports.empty()) mismatch("no reports to render");
  std::set<std::pair<std::string, std::string>> cells;
  for (const auto& r : reports)
    if (!cells.insert({r.row, r.test_set}).second)
      mismatch("two reports for row '" + r.row + "' and column '" + r.test_set + "'");

  switch (layout) {
    case ReportLayout::SingleCorpus:
      for (const auto& r : reports)
        if (r.train_set != r.test_set)
          mismatch("single-corpus report trained on '" + r.train_set + "' but tested on '" + r.test_set + "'");
      break;
    case ReportLayout::CrossCorpus:
      for (const auto& r : reports)
        if (r.train_set != reports.front().train_set)
          mismatch("cross-corpus reports must share one training corpus");
      break;
    case ReportLayout::Transfer: {
      bool base = false, tuned = false;
      for (const auto& r : reports) {
        if (r.row == kTransferFinetuneRow) tuned = true;
        else if (r.row == transfer_base_row(r.train_set)) base = true;
        else mismatch("row '" + r.row + "' does not belong in a transfer table");
      }
      if (!base || !tuned) mismatch("a transfer table needs both the base and the fine-tuned row");
      break;
    }
    case ReportLayout::Mtl: {
      bool single = false, joint = false;
      for (const auto& r : reports) {
        if (r.row == kMtlSingleRow) single = true;
        else if (r.row == kMtlJointRow) joint = true;
        else mismatch("row '" + r.row + "' does not belong in a multi-task table");
      }
      if (!single || !joint) mismatch("a multi-task table needs both the single-task and joint rows");
      break;
    }
  }
}

template <class T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

RenderedReport render_report(const std::vector<EvalReport>& reports, ReportLayout layout) {
  check_layout(reports, layout);
  std::vector<std::string> rows, cols;
  if (layout == ReportLayout::Transfer) push_unique(rows, transfer_base_row(reports.front().train_set));
  if (layout == ReportLayout::Mtl) rows = {kMtlSingleRow, kMtlJointRow};
  for (const auto& r : reports) {
    if (layout == ReportLayout::Transfer && r.row == kTransferFinetuneRow) continue;
    push_unique(rows, r.row);
  }
  if (layout == ReportLayout::Transfer) rows.push_back(kTransferFinetuneRow);
  for (const auto& r : reports) push_unique(cols, r.test_set);

  std::map<std::pair<std::string, std::string>, const EvalReport*> cell;
  for (const auto& r : reports) cell[{r.row, r.test_set}] = &r;

  std::vector<std::vector<std::string>> grid;
  grid.push_back({layout == ReportLayout::CrossCorpus ? "Train on " + reports.front().train_set : ""});
  for (const auto& c : cols) grid.back().push_back(c);
  for (const auto& row : rows) {
    grid.push_back({row});
    for (const auto& c : cols) {
      auto it = cell.find({row, c});
      grid.back().push_back(it == cell.end() ? "-" : percent(it->second->accuracy));
    }
  }
  std::vector<std::size_t> width(cols.size() + 1, 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());

  RenderedReport out;
  for (const auto& line : grid) {
    std::string text;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i == 0) text += line[i] + std::string(width[i] - line[i].size(), ' ');
      else text += "  " + std::string(width[i] - line[i].size(), ' ') + line[i];
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out.text += text + "\n";
  }

  out.json["layout"] = to_string(layout);
  out.json["rows"] = rows;
  out.json["columns"] = cols;
  out.json["reports"] = json::array();
  for (const auto& r : reports) out.json["reports"].push_back(to_json(r));
  return out;
}

std::vector<EvalReport> reports_from_json(const json& j) {
  std::vector<EvalReport> out;
  if (j.is_object() && j.contains("reports")) {
    for (const auto& r : j.at("reports")) out.push_back(report_from_json(r));
  } else if (j.is_array()) {
    for (const auto& r : j) out.push_back(report_from_json(r));
  } else {
    out.push_back(report_from_json(j));
  }
  return out;
}

}  // namespace ser
