#include "ser/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "ser/binary_io.hpp"
#include "ser/error.hpp"

namespace ser {

const char* to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::LogReg: return "logreg";
    case ClassifierKind::Svm: return "svm";
    case ClassifierKind::Lstm: return "lstm";
    case ClassifierKind::Mtl: return "mtl";
  }
  return "?";
}

namespace {

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  const auto end = s.find_last_not_of(ws);
  s.erase(end == std::string::npos ? 0 : end + 1);
  return s;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& msg) {
  throw Error(Errc::Config, key + ": " + msg);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, "expected true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
  return out;
}

}  // namespace

std::uint64_t ExperimentConfig::hash() const {
  std::string text;
  for (const auto& [k, v] : canonical) text += k + "=" + v + "\n";
  return fnv1a64(text);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : canonical) j[k] = v;
  return j;
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                              const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> kv;
  std::string section;
  auto add = [&](std::string key, std::string value, const std::string& where) {
    key = trim(key);
    value = trim(value);
    if (key.empty()) throw Error(Errc::Config, where + ": empty key");
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw Error(Errc::Config, where + ": key '" + key + "' outside any section");
      key = section + "." + key;
    }
    kv[key] = value;
  };

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(Errc::Config, where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::Config, where + ": expected key = value");
    add(line.substr(0, eq), line.substr(eq + 1), where);
  }
  section.clear();
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw Error(Errc::Config, "override '" + o + "': expected key=value");
    add(o.substr(0, eq), o.substr(eq + 1), "override");
  }

  ExperimentConfig c;
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  auto paths = [&](const std::string& v) {
    std::vector<std::filesystem::path> out;
    for (const auto& s : split_list(v)) out.push_back(path(s));
    return out;
  };

  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> schema = {
      {"experiment.id", [&](auto&, auto& v) { c.id = v; }},
      {"experiment.seed", [&](auto& k, auto& v) { c.seed = to_uint(k, v); }},
      {"experiment.output_dir", [&](auto&, auto& v) { c.output_dir = path(v); }},
      {"data.train_manifest", [&](auto&, auto& v) { c.train_manifest = path(v); }},
      {"data.test_manifests", [&](auto&, auto& v) { c.test_manifests = paths(v); }},
      {"data.cache", [&](auto&, auto& v) { c.cache = v.empty() ? std::filesystem::path() : path(v); }},
      {"data.held_out_speakers", [&](auto&, auto& v) { c.held_out_speakers = split_list(v); }},
      {"data.merge_excitement", [&](auto& k, auto& v) { c.merge_excitement = to_bool(k, v); }},
      {"data.strict_labels", [&](auto& k, auto& v) { c.strict_labels = to_bool(k, v); }},
      {"data.extract", [&](auto& k, auto& v) { c.extract = to_bool(k, v); }},
      {"data.jobs", [&](auto& k, auto& v) { c.jobs = to_uint(k, v); }},
      {"features.kind", [&](auto&, auto& v) { c.feature = feature_kind_from_string(v); }},
      {"classifier.kind",
       [&](auto& k, auto& v) {
         if (v == "logreg") c.classifier = ClassifierKind::LogReg;
         else if (v == "svm") c.classifier = ClassifierKind::Svm;
         else if (v == "lstm") c.classifier = ClassifierKind::Lstm;
         else if (v == "mtl") c.classifier = ClassifierKind::Mtl;
         else bad(k, "unknown classifier '" + v + "'");
       }},
      {"classifier.allow_feature_override", [&](auto& k, auto& v) { c.allow_feature_override = to_bool(k, v); }},
      {"logreg.l2", [&](auto& k, auto& v) { c.logreg.l2 = to_double(k, v); }},
      {"logreg.grad_tol", [&](auto& k, auto& v) { c.logreg.grad_tol = to_double(k, v); }},
      {"logreg.max_iter", [&](auto& k, auto& v) { c.logreg.max_iter = to_uint(k, v); }},
      {"svm.C", [&](auto& k, auto& v) { c.svm.C = to_double(k, v); }},
      {"svm.gamma",
       [&](auto& k, auto& v) {
         if (v == "auto") c.svm.gamma.reset();
         else c.svm.gamma = to_double(k, v);
       }},
      {"svm.tol", [&](auto& k, auto& v) { c.svm.tol = to_double(k, v); }},
      {"svm.max_iter_per_sample", [&](auto& k, auto& v) { c.svm.max_iter_per_sample = to_uint(k, v); }},
      {"lstm.hidden",
       [&](auto& k, auto& v) {
         c.lstm.hidden.clear();
         for (const auto& h : split_list(v)) c.lstm.hidden.push_back(to_uint(k, h));
       }},
      {"lstm.penultimate", [&](auto& k, auto& v) { c.lstm.penultimate = to_uint(k, v); }},
      {"lstm.batch_size", [&](auto& k, auto& v) { c.lstm.batch_size = to_uint(k, v); }},
      {"lstm.epochs", [&](auto& k, auto& v) { c.lstm.epochs = to_uint(k, v); }},
      {"lstm.patience", [&](auto& k, auto& v) { c.lstm.patience = to_uint(k, v); }},
      {"lstm.validation_fraction", [&](auto& k, auto& v) { c.lstm.validation_fraction = to_double(k, v); }},
      {"lstm.lr", [&](auto& k, auto& v) { c.lstm.adam.lr = to_double(k, v); }},
      {"lstm.beta1", [&](auto& k, auto& v) { c.lstm.adam.beta1 = to_double(k, v); }},
      {"lstm.beta2", [&](auto& k, auto& v) { c.lstm.adam.beta2 = to_double(k, v); }},
      {"lstm.eps", [&](auto& k, auto& v) { c.lstm.adam.eps = to_double(k, v); }},
      {"mtl.lambda_lang", [&](auto& k, auto& v) { c.lambda_lang = to_double(k, v); }},
      {"transfer.base_model", [&](auto&, auto& v) { c.base_model = path(v); }},
      {"transfer.train_head", [&](auto& k, auto& v) { c.finetune.train_head = to_bool(k, v); }},
      {"transfer.refit_normalizer",
       [&](auto& k, auto& v) { c.finetune.refit_normalizer = to_bool(k, v); }},
      {"transfer.epochs", [&](auto& k, auto& v) { c.finetune.epochs = to_uint(k, v); }},
      {"transfer.batch_size", [&](auto& k, auto& v) { c.finetune.batch_size = to_uint(k, v); }},
      {"transfer.lr", [&](auto& k, auto& v) { c.finetune.adam.lr = to_double(k, v); }},
      {"transfer.target_manifests", [&](auto&, auto& v) { c.target_manifests = paths(v); }},
  };
  for (const auto& [k, v] : kv) {
    auto it = schema.find(k);
    if (it == schema.end()) throw Error(Errc::Config, k + ": unknown configuration key");
    it->second(k, v);
  }

  // Validation.
  const bool vector_model = c.classifier == ClassifierKind::LogReg || c.classifier == ClassifierKind::Svm;
  if (vector_model && c.feature != FeatureKind::Is09)
    bad("classifier.kind/features.kind", std::string(to_string(c.classifier)) + " requires is09 features");
  if (c.classifier == ClassifierKind::Mtl && c.feature != FeatureKind::MfccSeq && !c.allow_feature_override)
    bad("classifier.kind/features.kind",
        "mtl is specified on mfcc_seq features; set classifier.allow_feature_override = true to use is09");
  if (c.lstm.hidden.empty() || std::count(c.lstm.hidden.begin(), c.lstm.hidden.end(), 0u))
    bad("lstm.hidden", "needs at least one positive layer size");
  if (c.lstm.batch_size == 0) bad("lstm.batch_size", "must be positive");
  if (c.finetune.batch_size == 0) bad("transfer.batch_size", "must be positive");
  if (c.lstm.validation_fraction < 0 || c.lstm.validation_fraction >= 1)
    bad("lstm.validation_fraction", "must be in [0, 1)");
  if (c.lambda_lang < 0) bad("mtl.lambda_lang", "must be non-negative");
  if (c.svm.C <= 0) bad("svm.C", "must be positive");
  if (c.svm.gamma && *c.svm.gamma <= 0) bad("svm.gamma", "must be positive");
  c.finetune.seed = c.seed;
  c.lstm.seed = c.seed;

  // Canonical snapshot of every effective setting (defaults included).
  auto& m = c.canonical;
  m["experiment.id"] = c.id;
  m["experiment.seed"] = std::to_string(c.seed);
  m["data.train_manifest"] = c.train_manifest.generic_string();
  std::vector<std::string> s;
  for (const auto& p : c.test_manifests) s.push_back(p.generic_string());
  m["data.test_manifests"] = join(s);
  m["data.held_out_speakers"] = join(c.held_out_speakers);
  m["data.merge_excitement"] = c.merge_excitement ? "true" : "false";
  m["data.strict_labels"] = c.strict_labels ? "true" : "false";
  m["features.kind"] = to_string(c.feature);
  m["classifier.kind"] = to_string(c.classifier);
  m["classifier.allow_feature_override"] = c.allow_feature_override ? "true" : "false";
  m["logreg.l2"] = fmt_double(c.logreg.l2);
  m["logreg.grad_tol"] = fmt_double(c.logreg.grad_tol);
  m["logreg.max_iter"] = std::to_string(c.logreg.max_iter);
  m["svm.C"] = fmt_double(c.svm.C);
  m["svm.gamma"] = c.svm.gamma ? fmt_double(*c.svm.gamma) : "auto";
  m["svm.tol"] = fmt_double(c.svm.tol);
  m["svm.max_iter_per_sample"] = std::to_string(c.svm.max_iter_per_sample);
  s.clear();
  for (auto h : c.lstm.hidden) s.push_back(std::to_string(h));
  m["lstm.hidden"] = join(s);
  m["lstm.penultimate"] = std::to_string(c.lstm.penultimate);
  m["lstm.batch_size"] = std::to_string(c.lstm.batch_size);
  m["lstm.epochs"] = std::to_string(c.lstm.epochs);
  m["lstm.patience"] = std::to_string(c.lstm.patience);
  m["lstm.validation_fraction"] = fmt_double(c.lstm.validation_fraction);
  m["lstm.lr"] = fmt_double(c.lstm.adam.lr);
  m["lstm.beta1"] = fmt_double(c.lstm.adam.beta1);
  m["lstm.beta2"] = fmt_double(c.lstm.adam.beta2);
  m["lstm.eps"] = fmt_double(c.lstm.adam.eps);
  m["mtl.lambda_lang"] = fmt_double(c.lambda_lang);
  m["transfer.base_model"] = c.base_model.generic_string();
  m["transfer.train_head"] = c.finetune.train_head ? "true" : "false";
  m["transfer.refit_normalizer"] = c.finetune.refit_normalizer ? "true" : "false";
  m["transfer.epochs"] = std::to_string(c.finetune.epochs);
  m["transfer.batch_size"] = std::to_string(c.finetune.batch_size);
  m["transfer.lr"] = fmt_double(c.finetune.adam.lr);
  s.clear();
  for (const auto& p : c.target_manifests) s.push_back(p.generic_string());
  m["transfer.target_manifests"] = join(s);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error& e) {
    throw Error(Errc::Config, "cannot read config " + path.string() + ": " + e.what());
  }
  const std::string text(bytes.begin(), bytes.end());
  return parse_config(text, path.parent_path(), overrides);
}

}  // namespace ser
