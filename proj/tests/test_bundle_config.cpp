#include <doctest.h>

#include <filesystem>
#include <functional>

#include "ser/binary_io.hpp"
#include "ser/bundle.hpp"
#include "ser/config.hpp"
#include "ser/error.hpp"

using namespace ser;
namespace fs = std::filesystem;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::Io;
}

std::vector<Is09Vector> random_is09(std::size_t n, Rng& rng) {
  std::vector<Is09Vector> out(n);
  for (auto& v : out)
    for (auto& x : v.values) x = rng.normal() * 3.0 + 1.0;
  return out;
}

std::vector<MfccSequence> random_mfcc(std::size_t n, Rng& rng) {
  std::vector<MfccSequence> out(n);
  for (auto& s : out) {
    s.valid_frames = 10 + rng.index(111);
    for (std::size_t t = 0; t < s.valid_frames; ++t)
      for (std::size_t k = 0; k < kNumCeps; ++k)
        s.matrix(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = rng.normal();
  }
  return out;
}

std::vector<Emotion> random_labels(std::size_t n, Rng& rng) {
  std::vector<Emotion> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<Emotion>(i < 3 ? i : rng.index(3));
  return y;
}

template <typename Model>
void check_round_trip(const Model& model, std::span<const FeatureInput> xs) {
  const auto bytes = save_model({model, 0xabcdef});
  const auto back = load_model(bytes, 0xabcdef);
  CHECK(back.config_hash == 0xabcdef);
  const auto& m2 = std::get<Model>(back.model);
  const auto a = predict_batch(model, xs);
  const auto b = predict_batch(m2, xs);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].emotion == b[i].emotion);
    CHECK(a[i].probabilities == b[i].probabilities);
    CHECK(a[i].language == b[i].language);
  }
  CHECK(save_model(back) == bytes);
}

LstmConfig tiny_lstm() {
  LstmConfig cfg;
  cfg.hidden = {6, 5};
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST_CASE("bundles round-trip every model variant with identical predictions") {
  Rng rng(1);
  const auto is09 = random_is09(40, rng);
  const auto y = random_labels(40, rng);
  const std::vector<FeatureInput> is09_in(is09.begin(), is09.end());
  check_round_trip(train_logreg(stack_is09(is09), y), is09_in);
  check_round_trip(train_svm_ovr(stack_is09(is09), y), is09_in);
  check_round_trip(train_lstm(make_sequences(is09), y, tiny_lstm()), is09_in);

  const auto mfcc = random_mfcc(30, rng);
  const auto ym = random_labels(30, rng);
  const std::vector<FeatureInput> mfcc_in(mfcc.begin(), mfcc.end());
  auto cfg = tiny_lstm();
  cfg.penultimate = 4;
  check_round_trip(train_lstm(make_sequences(mfcc), ym, cfg), mfcc_in);

  std::vector<std::string> lang(30);
  for (std::size_t i = 0; i < 30; ++i) lang[i] = i % 2 ? "synthA" : "synthB";
  MtlConfig mc;
  mc.lstm = tiny_lstm();
  mc.lambda_lang = 0.5;
  const auto mtl = train_multitask(make_sequences(mfcc), ym, lang, mc);
  check_round_trip(mtl, mfcc_in);
  const auto back = std::get<MtlModel>(load_model(save_model({mtl, 1})).model);
  CHECK(back.languages == mtl.languages);
  CHECK(back.lambda_lang == 0.5);
}

TEST_CASE("damaged or mismatched bundles are rejected") {
  Rng rng(2);
  const auto is09 = random_is09(20, rng);
  const auto y = random_labels(20, rng);
  const auto bytes = save_model({train_logreg(stack_is09(is09), y), 42});
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SERM");

  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, std::size_t{31}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK(code_of([&] { load_model(t); }) == Errc::Corrupt);
  }
  auto flipped = bytes;
  flipped[bytes.size() - 3] ^= 0x40;
  CHECK(code_of([&] { load_model(flipped); }) == Errc::Corrupt);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK(code_of([&] { load_model(magic); }) == Errc::Corrupt);
  auto version = bytes;
  version[4] = 9;
  CHECK(code_of([&] { load_model(version); }) == Errc::VersionMismatch);
  auto extra = bytes;
  extra.push_back(0);
  CHECK(code_of([&] { load_model(extra); }) == Errc::Corrupt);
  CHECK(code_of([&] { load_model(bytes, 43); }) == Errc::HashMismatch);
  CHECK(load_model(bytes, 42).config_hash == 42);

  const auto dir = fs::temp_directory_path() / "ser_test_bundle";
  fs::create_directories(dir);
  save_model_file(dir / "m.serm", {train_logreg(stack_is09(is09), y), 42});
  CHECK(read_file_bytes(dir / "m.serm") == bytes);
  CHECK(code_of([&] { load_model_file(dir / "missing.serm"); }) == Errc::Io);
  fs::remove_all(dir);
}

TEST_CASE("config parsing") {
  const std::string text =
      "# comment\n"
      "[experiment]\n"
      "id = demo\n"
      "seed = 7 ; trailing\n"
      "[data]\n"
      "train_manifest = corpora/a/manifest.csv\n"
      "test_manifests = b.csv, c.csv\n"
      "[features]\n"
      "kind = mfcc_seq\n"
      "[classifier]\n"
      "kind = lstm\n"
      "lstm.hidden = 32, 16\n"
      "lstm.penultimate = 8\n"
      "mtl.lambda_lang = 0.25\n";
  const auto c = parse_config(text, "/base");
  CHECK(c.id == "demo");
  CHECK(c.seed == 7);
  CHECK(c.train_manifest == fs::path("/base/corpora/a/manifest.csv"));
  CHECK(c.test_manifests.size() == 2);
  CHECK(c.feature == FeatureKind::MfccSeq);
  CHECK(c.classifier == ClassifierKind::Lstm);
  CHECK(c.lstm.hidden == std::vector<std::size_t>{32, 16});
  CHECK(c.lstm.penultimate == 8);
  CHECK(c.lambda_lang == 0.25);
  CHECK(c.svm.C == 1.0);
  CHECK(!c.svm.gamma.has_value());
  CHECK(c.lstm.adam.lr == 1e-3);

  const auto o = parse_config(text, "/base", {"experiment.seed=9", "lstm.epochs=3"});
  CHECK(o.seed == 9);
  CHECK(o.lstm.epochs == 3);
  CHECK(o.hash() != c.hash());
  CHECK(parse_config(text, "/base").hash() == c.hash());
  CHECK(parse_config(text, "/base", {"experiment.output_dir=elsewhere"}).hash() == c.hash());
  CHECK(c.to_json()["experiment.seed"] == "7");
}

TEST_CASE("config errors name the offending key") {
  auto message = [](const std::string& text, std::vector<std::string> overrides = {}) {
    try {
      parse_config(text, "", overrides);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::Config);
      return std::string(e.what());
    }
    FAIL("expected a config error");
    return std::string();
  };
  CHECK(message("[lstm]\nhiden = 3\n").find("lstm.hiden") != std::string::npos);
  CHECK(message("[features]\nkind = mfcc_seq\n[classifier]\nkind = svm\n").find("svm requires is09") !=
        std::string::npos);
  CHECK(message("[classifier]\nkind = logreg\n[features]\nkind = mfcc_seq\n").find("requires is09") !=
        std::string::npos);
  CHECK(message("[experiment]\nseed = -1\n").find("experiment.seed") != std::string::npos);
  CHECK(message("[lstm]\nbatch_size = 0\n").find("lstm.batch_size") != std::string::npos);
  CHECK(message("[svm]\ngamma = -2\n").find("svm.gamma") != std::string::npos);
  CHECK(message("", {"nonsense"}).find("nonsense") != std::string::npos);
  CHECK(message("[data\n").find("section") != std::string::npos);
  CHECK(message("[classifier]\nkind = forest\n").find("classifier.kind") != std::string::npos);

  const auto mtl = parse_config("[classifier]\nkind = mtl\n[features]\nkind = mfcc_seq\n");
  CHECK(mtl.classifier == ClassifierKind::Mtl);
  CHECK(message("[classifier]\nkind = mtl\n").find("mfcc_seq") != std::string::npos);
  const auto forced =
      parse_config("[classifier]\nkind = mtl\nallow_feature_override = true\n[features]\nkind = is09\n");
  CHECK(forced.feature == FeatureKind::Is09);
  CHECK(code_of([] { load_config("/nonexistent/cfg.ini"); }) == Errc::Config);
}
