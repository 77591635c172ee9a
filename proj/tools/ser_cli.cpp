// Command-line front end: synthesis, extraction, splitting, training,
// fine-tuning, multi-task training, evaluation, prediction and reporting.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "ser/binary_io.hpp"
#include "ser/experiment.hpp"
#include "ser/synth.hpp"

using namespace ser;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

ExperimentConfig config_or_default(const std::string& path, const std::vector<std::string>& sets) {
  if (path.empty()) return parse_config("", {}, sets);
  return load_config(path, sets);
}

std::filesystem::path out_or(const std::string& out, const std::filesystem::path& fallback) {
  return out.empty() ? fallback : std::filesystem::path(out);
}

Dataset train_split(const ExperimentConfig& cfg, const std::filesystem::path& manifest) {
  if (manifest.empty()) throw Error(Errc::Config, "data.train_manifest: required");
  const Dataset all = load_dataset(cfg, manifest, cfg.feature);
  SplitSpec spec;
  spec.held_out_speakers = cfg.held_out_speakers;
  spec.seed = cfg.seed;
  const Split split = split_speaker_disjoint(all.records, spec);
  std::cerr << "training on " << split.train.size() << " utterances; held out:";
  for (const auto& s : split.spec.held_out_speakers) std::cerr << " " << s;
  std::cerr << "\n";
  return subset(all, split.train, cfg.feature);
}

void print_prediction(const std::string& name, const Prediction& p) {
  std::printf("%s\t%s\t%.6f", name.c_str(), to_string(p.emotion), p.confidence);
  if (p.language) std::printf("\t%s\t%.6f", p.language->c_str(), *p.language_confidence);
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech emotion recognition toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SER_VERSION);

  std::string config_path, base_path, ft_path, out, manifest, model_path, layout = "single_corpus", kind = "both";
  std::vector<std::string> sets, held_out, inputs, wavs, speakers;
  SynthConfig synth;
  std::uint64_t seed = 0;
  bool lenient = false;
  std::size_t jobs = 0;

  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
  c_synth->add_option("--out", out, "Output directory")->required();
  c_synth->add_option("--classes", synth.classes, "Emotion classes (<= 5)");
  c_synth->add_option("--languages", synth.languages, "Languages (<= 3)");
  c_synth->add_option("--speakers", synth.speakers_per_language, "Speakers per language");
  c_synth->add_option("--utterances", synth.utterances_per_cell, "Utterances per class and speaker");
  c_synth->add_option("--seed", synth.seed, "Random seed");
  c_synth->add_option("--min-seconds", synth.min_seconds);
  c_synth->add_option("--max-seconds", synth.max_seconds);
  c_synth->add_option("--jobs", synth.jobs);

  auto* c_extract = app.add_subcommand("extract", "Extract features into a cache file");
  c_extract->add_option("--manifest", manifest)->required();
  c_extract->add_option("--out", out, "Cache file (.serf)")->required();
  c_extract->add_option("--kind", kind, "is09, mfcc_seq or both")->check(CLI::IsMember({"is09", "mfcc_seq", "both"}));
  c_extract->add_option("--jobs", jobs);
  c_extract->add_flag("--lenient", lenient, "Drop rows with unknown labels instead of failing");

  auto* c_split = app.add_subcommand("split", "Speaker-disjoint train/test split");
  c_split->add_option("--manifest", manifest)->required();
  c_split->add_option("--seed", seed);
  c_split->add_option("--held-out", held_out, "Speakers to hold out (default: chosen from the seed)")->delimiter(',');
  c_split->add_option("--out", out, "Split JSON (default stdout)");

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
    c->add_option("--set", sets, "Override a config key (key=value)");
  };
  auto* c_train = app.add_subcommand("train", "Train the configured classifier on the training speakers");
  add_config(c_train);
  c_train->add_option("--out", out, "Model bundle (default <output_dir>/model.serm)");

  auto* c_finetune = app.add_subcommand("finetune", "Fine-tune a base LSTM bundle on a target corpus");
  add_config(c_finetune);
  c_finetune->add_option("--manifest", manifest, "Target manifest (default: first transfer target)");
  c_finetune->add_option("--out", out, "Model bundle (default <output_dir>/finetuned.serm)");

  auto* c_mtl = app.add_subcommand("mtl-train", "Train the multi-task emotion and language model");
  add_config(c_mtl);
  c_mtl->add_option("--out", out, "Model bundle (default <output_dir>/model.serm)");

  auto* c_eval = app.add_subcommand("evaluate", "Evaluate a model bundle on a manifest");
  c_eval->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--manifest", manifest)->required();
  c_eval->add_option("--config", config_path, "Config for cache and label options");
  c_eval->add_option("--set", sets);
  c_eval->add_option("--speakers", speakers, "Only evaluate these speakers")->delimiter(',');
  c_eval->add_option("--out", out, "Report JSON (default stdout)");

  auto* c_predict = app.add_subcommand("predict", "Predict emotions for WAV files");
  c_predict->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  c_predict->add_option("wavs", wavs, "WAV files")->required();

  auto* c_report = app.add_subcommand("report", "Render report JSON files as a table");
  c_report->add_option("--layout", layout, "single_corpus, cross_corpus, transfer or mtl");
  c_report->add_option("inputs", inputs, "Report JSON files")->required();
  c_report->add_option("--out", out, "Combined JSON file");

  auto* c_run = app.add_subcommand("run", "Run a full experiment from a config");
  add_config(c_run);

  auto* c_transfer = app.add_subcommand("transfer", "Run a transfer-learning experiment");
  c_transfer->add_option("--base", base_path, "Base model config")->required()->check(CLI::ExistingFile);
  c_transfer->add_option("--finetune", ft_path, "Fine-tuning config")->required()->check(CLI::ExistingFile);
  c_transfer->add_option("--set", sets, "Override a fine-tuning config key (key=value)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*c_synth) {
      const auto records = generate_synthetic_corpus(synth, out);
      std::printf("wrote %zu utterances to %s\n", records.size(), (std::filesystem::path(out) / "manifest.csv").c_str());
    } else if (*c_extract) {
      ManifestOptions opts;
      opts.strict = !lenient;
      const Manifest m = load_manifest(manifest, opts);
      ExtractOptions eo;
      eo.is09 = kind != "mfcc_seq";
      eo.mfcc = kind != "is09";
      eo.jobs = jobs;
      const FeatureCache cache = extract_features(m.records, eo);
      cache.save(out);
      std::printf("extracted %zu utterances (%zu excluded)\n", cache.size(), m.excluded);
    } else if (*c_split) {
      const Manifest m = load_manifest(manifest);
      SplitSpec spec;
      spec.held_out_speakers = held_out;
      spec.seed = seed;
      write_text(out, split_to_json(split_speaker_disjoint(m.records, spec)));
    } else if (*c_train) {
      const auto cfg = load_config(config_path, sets);
      if (cfg.classifier == ClassifierKind::Mtl)
        throw Error(Errc::Config, "classifier.kind: use mtl-train for multi-task models");
      const EmotionModel model = train_configured(cfg, train_split(cfg, cfg.train_manifest));
      const auto path = out_or(out, cfg.output_dir / "model.serm");
      save_model_file(path, {model, cfg.hash()});
      std::printf("wrote %s\n", path.c_str());
    } else if (*c_mtl) {
      auto cfg = load_config(config_path, sets);
      const MtlModel model = train_configured_mtl(cfg, train_split(cfg, cfg.train_manifest));
      const auto path = out_or(out, cfg.output_dir / "model.serm");
      save_model_file(path, {model, cfg.hash()});
      std::printf("wrote %s\n", path.c_str());
    } else if (*c_finetune) {
      const auto cfg = load_config(config_path, sets);
      if (cfg.base_model.empty()) throw Error(Errc::Config, "transfer.base_model: required");
      auto bundle = load_model_file(cfg.base_model);
      if (!std::holds_alternative<EmotionModel>(bundle.model))
        throw Error(Errc::VariantMismatch, "base bundle holds a multi-task model");
      const auto& base = std::get<EmotionModel>(bundle.model);
      if (base.feature != cfg.feature)
        throw Error(Errc::FeatureKindMismatch, std::string("base model uses ") + to_string(base.feature) +
                                                   " features, config uses " + to_string(cfg.feature));
      std::filesystem::path target = manifest;
      if (target.empty() && !cfg.target_manifests.empty()) target = cfg.target_manifests.front();
      if (target.empty()) target = cfg.train_manifest;
      const Dataset train = train_split(cfg, target);
      const EmotionModel tuned = finetune_frozen(base, sequence_set(train, cfg.feature), emotions(train.records), cfg.finetune);
      const auto path = out_or(out, cfg.output_dir / "finetuned.serm");
      save_model_file(path, {tuned, cfg.hash()});
      std::printf("wrote %s\n", path.c_str());
    } else if (*c_eval) {
      const auto cfg = config_or_default(config_path, sets);
      const auto bundle = load_model_file(model_path);
      const FeatureKind fk = std::visit([](const auto& m) { return m.feature; }, bundle.model);
      Dataset d = load_dataset(cfg, manifest, fk);
      if (!speakers.empty()) {
        std::vector<UtteranceRecord> keep;
        for (const auto& r : d.records)
          if (std::find(speakers.begin(), speakers.end(), r.speaker_id) != speakers.end()) keep.push_back(r);
        d = subset(d, keep, fk);
      }
      EvalReport r = std::visit([&](const auto& m) { return evaluate(m, d); }, bundle.model);
      r.row = std::filesystem::path(model_path).stem().string();
      r.train_set = d.corpus;
      r.experiment_id = cfg.id;
      r.seed = cfg.seed;
      std::fprintf(stderr, "accuracy %.4f  uar %.4f  (%zu utterances)\n", r.accuracy, r.uar, r.total);
      write_text(out, dump_json(to_json(r)));
    } else if (*c_predict) {
      const auto bundle = load_model_file(model_path);
      const FeatureKind fk = std::visit([](const auto& m) { return m.feature; }, bundle.model);
      for (const auto& w : wavs) {
        const Waveform audio = read_wav(w);
        const CachedFeatures f = extract_utterance(audio, fk == FeatureKind::Is09, fk == FeatureKind::MfccSeq);
        const FeatureInput in = fk == FeatureKind::Is09 ? FeatureInput(f.is09_vector()) : FeatureInput(f.mfcc_sequence());
        print_prediction(w, std::visit([&](const auto& m) { return predict(m, in); }, bundle.model));
      }
    } else if (*c_report) {
      std::vector<EvalReport> reports;
      for (const auto& path : inputs) {
        const auto bytes = read_file_bytes(path);
        json j;
        try {
          j = json::parse(bytes.begin(), bytes.end());
        } catch (const json::exception& e) {
          throw Error(Errc::Corrupt, path + ": " + e.what());
        }
        for (auto& r : reports_from_json(j)) reports.push_back(std::move(r));
      }
      const auto rendered = render_report(reports, report_layout_from_string(layout));
      std::cout << rendered.text;
      if (!out.empty()) write_text(out, dump_json(rendered.json));
    } else if (*c_run) {
      const auto result = cmd_run(load_config(config_path, sets));
      std::cout << result.rendered.text;
    } else if (*c_transfer) {
      const auto result = cmd_transfer(load_config(base_path), load_config(ft_path, sets));
      std::cout << result.rendered.text;
    }
  } catch (const Error& e) {
    std::cerr << error_record(e).dump() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Internal"}, {"message", e.what()}, {"exit_code", kExitData}}.dump() << "\n";
    return kExitData;
  }
  return kExitOk;
}
