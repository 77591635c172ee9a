#include "ser/experiment.hpp"

#include <cstdio>
#include <fstream>

#include "ser/binary_io.hpp"
#include "ser/error.hpp"

namespace ser {

using nlohmann::json;

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::Config: return kExitConfig;
    case Errc::NumericFailure: return kExitNumeric;
    default: return kExitData;
  }
}

json error_record(const Error& e) {
  return {{"error", to_string(e.code())}, {"message", e.what()}, {"exit_code", exit_code_for(e.code())}};
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

bool has_kind(const CachedFeatures& f, FeatureKind kind) {
  return kind == FeatureKind::Is09 ? f.is09.has_value() : f.mfcc.has_value();
}

std::uint64_t features_hash(const FeatureCache& c) { return fnv1a64(c.serialize()); }

}  // namespace

Manifest read_manifest(const ExperimentConfig& cfg, const std::filesystem::path& manifest) {
  ManifestOptions opts;
  opts.strict = cfg.strict_labels;
  opts.labels.merge_excitement = cfg.merge_excitement;
  return load_manifest(manifest, opts);
}

Dataset subset(const Dataset& d, const std::vector<UtteranceRecord>& records, FeatureKind kind) {
  Dataset out;
  out.corpus = d.corpus;
  out.records = records;
  for (const auto& r : records) {
    CachedFeatures f = d.features.get(r.id);
    if (!has_kind(f, kind))
      throw Error(Errc::MissingUtterance, "no " + std::string(to_string(kind)) + " features for '" + r.id + "'");
    if (kind == FeatureKind::Is09) f.mfcc.reset();
    else f.is09.reset();
    if (kind == FeatureKind::Is09) f.valid_frames = 0;
    out.features.put(r.id, std::move(f));
  }
  out.feature_hash = features_hash(out.features);
  return out;
}

Dataset load_dataset(const ExperimentConfig& cfg, const std::filesystem::path& manifest, FeatureKind kind) {
  const Manifest m = read_manifest(cfg, manifest);
  if (m.records.empty()) throw Error(Errc::EmptySplit, "manifest " + manifest.string() + " has no usable rows");

  FeatureCache cache;
  std::filesystem::path cache_file;
  if (!cfg.cache.empty()) {
    const auto bytes = read_file_bytes(manifest);
    cache_file = cfg.cache / (manifest.stem().string() + "-" + hex64(fnv1a64(bytes)) + ".serf");
    if (std::filesystem::exists(cache_file)) cache = FeatureCache::load(cache_file);
  }
  std::vector<UtteranceRecord> missing;
  for (const auto& r : m.records)
    if (!cache.contains(r.id) || !has_kind(cache.get(r.id), kind)) missing.push_back(r);
  if (!missing.empty()) {
    if (!cfg.extract && !cfg.cache.empty())
      throw Error(Errc::MissingUtterance, std::to_string(missing.size()) + " utterances of " + manifest.string() +
                                              " are not in the feature cache (first: '" + missing.front().id + "')");
    ExtractOptions opts;
    opts.is09 = kind == FeatureKind::Is09;
    opts.mfcc = kind == FeatureKind::MfccSeq;
    opts.jobs = cfg.jobs;
    const FeatureCache fresh = extract_features(missing, opts);
    for (const auto& [id, f] : fresh.entries()) {
      CachedFeatures merged = cache.contains(id) ? cache.get(id) : CachedFeatures{};
      if (f.is09) merged.is09 = f.is09;
      if (f.mfcc) {
        merged.mfcc = f.mfcc;
        merged.valid_frames = f.valid_frames;
      }
      cache.put(id, std::move(merged));
    }
    if (!cache_file.empty()) cache.save(cache_file);
  }
  Dataset all;
  all.corpus = m.records.front().corpus;
  all.features = std::move(cache);
  return subset(all, m.records, kind);
}

std::vector<FeatureInput> feature_inputs(const Dataset& d, FeatureKind kind) {
  std::vector<FeatureInput> out;
  out.reserve(d.records.size());
  for (const auto& r : d.records) {
    const auto& f = d.features.get(r.id);
    if (kind == FeatureKind::Is09) out.emplace_back(f.is09_vector());
    else out.emplace_back(f.mfcc_sequence());
  }
  return out;
}

std::vector<Emotion> emotions(const std::vector<UtteranceRecord>& records) {
  std::vector<Emotion> out;
  for (const auto& r : records) out.push_back(r.emotion);
  return out;
}

std::string classifier_row(FeatureKind feature, ClassifierKind classifier) {
  const std::string f = feature == FeatureKind::Is09 ? "IS09" : "MFCC";
  switch (classifier) {
    case ClassifierKind::LogReg: return f + " + Logistic Regression";
    case ClassifierKind::Svm: return f + " + SVC";
    case ClassifierKind::Lstm: return f + " + LSTM";
    case ClassifierKind::Mtl: return f + " + Multi-task LSTM";
  }
  return f;
}

SequenceSet sequence_set(const Dataset& d, FeatureKind kind) {
  SequenceSet s;
  s.kind = kind;
  for (const auto& r : d.records) {
    const auto& f = d.features.get(r.id);
    if (kind == FeatureKind::MfccSeq) {
      auto m = f.mfcc_sequence();
      s.seqs.push_back(std::move(m.matrix));
      s.valid.push_back(m.valid_frames);
    } else {
      const auto v = f.is09_vector();
      Matrix row(1, static_cast<Eigen::Index>(kIs09Dim));
      for (std::size_t i = 0; i < kIs09Dim; ++i) row(0, static_cast<Eigen::Index>(i)) = v.values[i];
      s.seqs.push_back(std::move(row));
      s.valid.push_back(1);
    }
  }
  return s;
}

namespace {

Matrix is09_matrix(const Dataset& d) {
  std::vector<Is09Vector> xs;
  for (const auto& r : d.records) xs.push_back(d.features.get(r.id).is09_vector());
  return stack_is09(xs);
}

std::vector<Emotion> predicted_emotions(const std::vector<Prediction>& ps) {
  std::vector<Emotion> out;
  for (const auto& p : ps) out.push_back(p.emotion);
  return out;
}

}  // namespace

EmotionModel train_configured(const ExperimentConfig& cfg, const Dataset& train) {
  const auto y = emotions(train.records);
  switch (cfg.classifier) {
    case ClassifierKind::LogReg: return train_logreg(is09_matrix(train), y, cfg.logreg);
    case ClassifierKind::Svm: return train_svm_ovr(is09_matrix(train), y, cfg.svm);
    case ClassifierKind::Lstm:
    case ClassifierKind::Mtl: return train_lstm(sequence_set(train, cfg.feature), y, cfg.lstm);
  }
  throw Error(Errc::Config, "classifier.kind: unsupported");
}

MtlModel train_configured_mtl(const ExperimentConfig& cfg, const Dataset& train) {
  std::vector<std::string> langs;
  for (const auto& r : train.records) langs.push_back(r.language);
  MtlConfig mc;
  mc.lstm = cfg.lstm;
  mc.lambda_lang = cfg.lambda_lang;
  return train_multitask(sequence_set(train, cfg.feature), emotions(train.records), langs, mc);
}

EvalReport evaluate(const EmotionModel& model, const Dataset& test) {
  const auto preds = predict_batch(model, feature_inputs(test, model.feature));
  auto r = compute_metrics(predicted_emotions(preds), emotions(test.records));
  r.test_set = test.corpus;
  return r;
}

EvalReport evaluate(const MtlModel& model, const Dataset& test) {
  const auto preds = predict_batch(model, feature_inputs(test, model.feature));
  auto r = compute_metrics(predicted_emotions(preds), emotions(test.records));
  std::vector<std::string> got, gold;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    got.push_back(*preds[i].language);
    gold.push_back(test.records[i].language);
  }
  r.language_accuracy = language_accuracy(got, gold);
  r.test_set = test.corpus;
  return r;
}

namespace {

void stamp(EvalReport& r, const ExperimentConfig& cfg, const std::string& row, const std::string& train_set) {
  r.experiment_id = cfg.id;
  r.row = row;
  r.train_set = train_set;
  r.config = cfg.to_json();
  r.seed = cfg.seed;
}

json provenance(const std::vector<const ExperimentConfig*>& cfgs, const json& caches) {
  json p;
  p["version"] = SER_VERSION;
  p["configs"] = json::array();
  for (const auto* c : cfgs)
    p["configs"].push_back({{"config", c->to_json()}, {"config_hash", hex64(c->hash())}, {"seed", c->seed}});
  p["feature_caches"] = caches;
  return p;
}

void write_outputs(const std::filesystem::path& dir, RunOutput& out) {
  const std::string js = dump_json(out.json);
  write_file_bytes(dir / "report.json", std::vector<std::uint8_t>(js.begin(), js.end()));
  write_file_bytes(dir / "report.txt", std::vector<std::uint8_t>(out.rendered.text.begin(), out.rendered.text.end()));
}

Split split_for(const ExperimentConfig& cfg, const Dataset& d) {
  SplitSpec spec;
  spec.held_out_speakers = cfg.held_out_speakers;
  spec.seed = cfg.seed;
  return split_speaker_disjoint(d.records, spec);
}

}  // namespace

RunOutput cmd_run(const ExperimentConfig& cfg) {
  if (cfg.train_manifest.empty()) throw Error(Errc::Config, "data.train_manifest: required");
  const Dataset all = load_dataset(cfg, cfg.train_manifest, cfg.feature);
  const Split split = split_for(cfg, all);
  const Dataset train = subset(all, split.train, cfg.feature);
  Dataset test = subset(all, split.test, cfg.feature);

  std::vector<Dataset> tests;
  tests.push_back(std::move(test));
  for (const auto& m : cfg.test_manifests) tests.push_back(load_dataset(cfg, m, cfg.feature));

  json caches = json::object();
  caches[all.corpus + ":train"] = hex64(train.feature_hash);
  for (const auto& t : tests) caches[t.corpus + ":test"] = hex64(t.feature_hash);

  RunOutput out;
  if (cfg.classifier == ClassifierKind::Mtl) {
    out.layout = ReportLayout::Mtl;
    const EmotionModel single = train_configured(cfg, train);
    const MtlModel joint = train_configured_mtl(cfg, train);
    for (const auto& t : tests) {
      auto a = evaluate(single, t);
      stamp(a, cfg, kMtlSingleRow, all.corpus);
      out.reports.push_back(std::move(a));
      auto b = evaluate(joint, t);
      stamp(b, cfg, kMtlJointRow, all.corpus);
      out.reports.push_back(std::move(b));
    }
    save_model_file(cfg.output_dir / "model.serm", {joint, cfg.hash()});
    save_model_file(cfg.output_dir / "single_task.serm", {single, cfg.hash()});
  } else {
    out.layout = cfg.test_manifests.empty() ? ReportLayout::SingleCorpus : ReportLayout::CrossCorpus;
    const EmotionModel model = train_configured(cfg, train);
    for (const auto& t : tests) {
      auto r = evaluate(model, t);
      stamp(r, cfg, classifier_row(cfg.feature, cfg.classifier), all.corpus);
      out.reports.push_back(std::move(r));
    }
    save_model_file(cfg.output_dir / "model.serm", {model, cfg.hash()});
  }
  out.rendered = render_report(out.reports, out.layout);
  out.json = out.rendered.json;
  out.json["split"] = {{"held_out_speakers", split.spec.held_out_speakers},
                       {"train_utterances", split.train.size()},
                       {"test_utterances", split.test.size()}};
  out.json["provenance"] = provenance({&cfg}, caches);
  write_outputs(cfg.output_dir, out);
  return out;
}

inline constexpr std::size_t kTransferPenultimate = 64;

RunOutput cmd_transfer(const ExperimentConfig& base_cfg_in, const ExperimentConfig& ft_cfg) {
  if (base_cfg_in.classifier != ClassifierKind::Lstm)
    throw Error(Errc::Config, "classifier.kind: transfer needs an lstm base model");
  ExperimentConfig base_cfg = base_cfg_in;
  if (base_cfg.lstm.penultimate == 0 && !ft_cfg.finetune.train_head) {
    base_cfg.lstm.penultimate = kTransferPenultimate;
    base_cfg.canonical["lstm.penultimate"] = std::to_string(kTransferPenultimate);
  }

  json caches = json::object();
  EmotionModel base;
  std::string base_corpus;
  const auto base_path = ft_cfg.base_model.empty() ? ft_cfg.output_dir / "base.serm" : ft_cfg.base_model;
  if (!ft_cfg.base_model.empty() && std::filesystem::exists(ft_cfg.base_model)) {
    auto bundle = load_model_file(ft_cfg.base_model, base_cfg.hash());
    if (!std::holds_alternative<EmotionModel>(bundle.model))
      throw Error(Errc::VariantMismatch, "base bundle holds a multi-task model");
    base = std::get<EmotionModel>(std::move(bundle.model));
    base_corpus = read_manifest(base_cfg, base_cfg.train_manifest).records.at(0).corpus;
  } else {
    if (base_cfg.train_manifest.empty()) throw Error(Errc::Config, "data.train_manifest: required for the base model");
    const Dataset d = load_dataset(base_cfg, base_cfg.train_manifest, base_cfg.feature);
    caches[d.corpus + ":base"] = hex64(d.feature_hash);
    base_corpus = d.corpus;
    base = train_configured(base_cfg, d);
    save_model_file(base_path, {base, base_cfg.hash()});
  }
  if (base.feature != ft_cfg.feature)
    throw Error(Errc::FeatureKindMismatch, std::string("base model uses ") + to_string(base.feature) +
                                               " features, fine-tuning config uses " + to_string(ft_cfg.feature));

  auto targets = ft_cfg.target_manifests;
  if (targets.empty() && !ft_cfg.train_manifest.empty()) targets.push_back(ft_cfg.train_manifest);
  if (targets.empty()) throw Error(Errc::Config, "transfer.target_manifests: required");

  RunOutput out;
  out.layout = ReportLayout::Transfer;
  for (const auto& t : targets) {
    const Dataset all = load_dataset(ft_cfg, t, ft_cfg.feature);
    const Split split = split_for(ft_cfg, all);
    const Dataset train = subset(all, split.train, ft_cfg.feature);
    const Dataset test = subset(all, split.test, ft_cfg.feature);
    caches[all.corpus + ":train"] = hex64(train.feature_hash);
    caches[all.corpus + ":test"] = hex64(test.feature_hash);

    auto before = evaluate(base, test);
    stamp(before, base_cfg, transfer_base_row(base_corpus), base_corpus);
    out.reports.push_back(std::move(before));

    const EmotionModel tuned =
        finetune_frozen(base, sequence_set(train, ft_cfg.feature), emotions(train.records), ft_cfg.finetune);
    auto after = evaluate(tuned, test);
    stamp(after, ft_cfg, kTransferFinetuneRow, all.corpus);
    out.reports.push_back(std::move(after));
    save_model_file(ft_cfg.output_dir / ("finetuned_" + all.corpus + ".serm"), {tuned, ft_cfg.hash()});
  }
  out.rendered = render_report(out.reports, out.layout);
  out.json = out.rendered.json;
  out.json["provenance"] = provenance({&base_cfg, &ft_cfg}, caches);
  write_outputs(ft_cfg.output_dir, out);
  return out;
}

}  // namespace ser
