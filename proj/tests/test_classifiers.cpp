#include <doctest.h>

#include <filesystem>
#include <functional>
#include <map>

#include "ser/classifiers.hpp"
#include "ser/corpus.hpp"
#include "ser/error.hpp"
#include "ser/feature_cache.hpp"
#include "ser/synth.hpp"

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

// Points in the first dims of an otherwise zero 384-vector.
Is09Vector embed(const std::vector<double>& p) {
  Is09Vector v;
  for (std::size_t i = 0; i < p.size(); ++i) v.values[i] = p[i];
  return v;
}

struct Labeled {
  std::vector<Is09Vector> x;
  std::vector<Emotion> y;

  Matrix matrix() const { return stack_is09(x); }
  std::vector<FeatureInput> inputs() const { return {x.begin(), x.end()}; }
};

Labeled blobs(std::size_t n, std::size_t d, double sep, std::uint64_t seed) {
  Rng rng(seed);
  Labeled out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = i % 2 == 0;
    std::vector<double> p(d);
    for (auto& v : p) v = rng.normal() + (pos ? sep : -sep);
    out.x.push_back(embed(p));
    out.y.push_back(pos ? Emotion::Anger : Emotion::Sad);
  }
  return out;
}

Labeled xor_clusters(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Labeled out;
  for (std::size_t i = 0; i < n; ++i) {
    const double sx = i % 2 ? 1.0 : -1.0, sy = (i / 2) % 2 ? 1.0 : -1.0;
    out.x.push_back(embed({sx + 0.2 * rng.normal(), sy + 0.2 * rng.normal()}));
    out.y.push_back(sx * sy > 0 ? Emotion::Happy : Emotion::Neutral);
  }
  return out;
}

template <typename Model>
double accuracy(const Model& m, std::span<const FeatureInput> xs, std::span<const Emotion> y) {
  const auto preds = predict_batch(m, xs);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i].emotion == y[i];
  return static_cast<double>(ok) / static_cast<double>(preds.size());
}

// Shared synthetic corpus: 2 classes, 2 languages, 4 speakers each, 50 per cell.
struct Corpus {
  std::vector<UtteranceRecord> records;
  FeatureCache features;

  std::vector<UtteranceRecord> select(const std::function<bool(const UtteranceRecord&)>& keep) const {
    std::vector<UtteranceRecord> out;
    for (const auto& r : records)
      if (keep(r)) out.push_back(r);
    return out;
  }
  SequenceSet sequences(const std::vector<UtteranceRecord>& rs) const {
    std::vector<MfccSequence> s;
    for (const auto& r : rs) s.push_back(features.get(r.id).mfcc_sequence());
    return make_sequences(s);
  }
  std::vector<FeatureInput> inputs(const std::vector<UtteranceRecord>& rs) const {
    std::vector<FeatureInput> s;
    for (const auto& r : rs) s.emplace_back(features.get(r.id).mfcc_sequence());
    return s;
  }
  static std::vector<Emotion> labels(const std::vector<UtteranceRecord>& rs) {
    std::vector<Emotion> y;
    for (const auto& r : rs) y.push_back(r.emotion);
    return y;
  }
};

const Corpus& corpus() {
  static const Corpus c = [] {
    const auto dir = fs::temp_directory_path() / "ser_test_classifier_corpus";
    fs::remove_all(dir);
    SynthConfig cfg;
    cfg.classes = 2;
    cfg.languages = 2;
    cfg.speakers_per_language = 4;
    cfg.utterances_per_cell = 50;
    cfg.min_seconds = 1.0;
    cfg.max_seconds = 1.5;
    cfg.seed = 42;
    Corpus out;
    out.records = generate_synthetic_corpus(cfg, dir);
    ExtractOptions opts;
    opts.is09 = false;
    out.features = extract_features(out.records, opts);
    fs::remove_all(dir);
    return out;
  }();
  return c;
}

LstmConfig small_lstm(std::uint64_t seed) {
  LstmConfig cfg;
  cfg.hidden = {24};
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.adam.lr = 5e-3;
  cfg.seed = seed;
  return cfg;
}

bool same_params(const std::vector<const nn::Mat*>& a, const std::vector<const nn::Mat*>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
  return true;
}

std::vector<const nn::Mat*> trunk_params(const LstmNet& n) { return std::as_const(n.trunk).params(); }

}  // namespace

TEST_CASE("normalizer statistics and the leakage sentinel") {
  Matrix train(4, 2), test(2, 2);
  train << 1, 5, 2, 5, 3, 5, 4, 5;
  test << 10, 0, 12, 1;
  const auto n = Normalizer::fit(train);
  CHECK(n.mean(0) == doctest::Approx(2.5));
  CHECK(n.stddev(0) == doctest::Approx(std::sqrt(1.25)).epsilon(1e-7));
  CHECK(n.stddev(1) == doctest::Approx(Normalizer::kStddevFloor));
  Matrix t = train;
  n.apply_rows(t);
  CHECK(std::abs(t.col(0).mean()) < 1e-7);
  CHECK(t.col(1).isZero());

  Matrix all(6, 2);
  all << train, test;
  CHECK(!(Normalizer::fit(all) == n));
  CHECK(code_of([&] { Normalizer::fit(Matrix(0, 2)); }) == Errc::DimensionMismatch);
}

TEST_CASE("logistic regression on separated blobs") {
  const auto data = blobs(200, 10, 2.0, 1);
  TrainHistory h;
  const auto m = train_logreg(data.matrix(), data.y, {}, &h);
  CHECK(m.variant() == ModelVariant::LogReg);
  CHECK(m.labels == std::vector<Emotion>{Emotion::Anger, Emotion::Sad});
  const auto xs = data.inputs();
  CHECK(accuracy(m, xs, data.y) >= 0.99);
  CHECK(h.final_loss <= h.initial_loss);
  CHECK(h.iterations > 0);

  std::vector<Emotion> one(data.y.size(), Emotion::Fear);
  CHECK(code_of([&] { train_logreg(data.matrix(), one); }) == Errc::SingleClass);
  CHECK(code_of([&] { train_logreg(data.matrix(), std::span(data.y).first(10)); }) == Errc::DimensionMismatch);
}

TEST_CASE("logistic regression objective never rises across random problems") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto data = blobs(60, 5, 0.3, 100 + seed);
    TrainHistory h;
    LogRegConfig cfg;
    cfg.max_iter = 50;
    train_logreg(data.matrix(), data.y, cfg, &h);
    CHECK(h.final_loss <= h.initial_loss);
  }
}

TEST_CASE("svm on separable blobs reaches the KKT tolerance") {
  const auto data = blobs(120, 4, 2.5, 2);
  const auto m = train_svm_ovr(data.matrix(), data.y);
  CHECK(m.variant() == ModelVariant::SvmOvr);
  const auto xs = data.inputs();
  CHECK(accuracy(m, xs, data.y) == 1.0);

  // Dual residuals recomputed from an independent kernel evaluation.
  Matrix X = data.matrix();
  m.normalizer.apply_rows(X);
  const auto& svm = std::get<SvmParams>(m.params);
  const auto n = static_cast<Eigen::Index>(data.y.size());
  Matrix K(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) K(i, j) = std::exp(-svm.gamma * (X.row(i) - X.row(j)).squaredNorm());
  std::vector<double> y(data.y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = data.y[i] == Emotion::Anger ? 1.0 : -1.0;
  const double C = 1.0, tol = 1e-3;
  const auto dual = solve_svm_dual(K, y, C, tol, 100 * y.size());
  double worst = 0.0, balance = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double f = dual.bias;
    for (Eigen::Index j = 0; j < n; ++j) f += dual.alpha(j) * y[static_cast<std::size_t>(j)] * K(i, j);
    const double margin = y[static_cast<std::size_t>(i)] * f;
    const double a = dual.alpha(i);
    CHECK(a >= 0.0);
    CHECK(a <= C);
    double r = 0.0;
    if (a <= 0.0) r = std::max(0.0, 1.0 - margin);
    else if (a >= C) r = std::max(0.0, margin - 1.0);
    else r = std::abs(margin - 1.0);
    worst = std::max(worst, r);
    balance += a * y[static_cast<std::size_t>(i)];
  }
  CHECK(worst <= tol);
  CHECK(std::abs(balance) < 1e-9);
}

TEST_CASE("rbf svm separates xor where a linear model cannot") {
  const auto data = xor_clusters(200, 3);
  const auto xs = data.inputs();
  const auto svm = train_svm_ovr(data.matrix(), data.y);
  const auto lin = train_logreg(data.matrix(), data.y);
  CHECK(accuracy(svm, xs, data.y) >= 0.95);
  CHECK(accuracy(lin, xs, data.y) <= 0.6);
}

TEST_CASE("svm tolerates conflicting duplicate points") {
  auto data = blobs(40, 3, 1.0, 4);
  data.x.push_back(data.x[0]);
  data.y.push_back(Emotion::Sad);
  data.x.push_back(data.x[0]);
  data.y.push_back(Emotion::Anger);
  const auto m = train_svm_ovr(data.matrix(), data.y);
  for (const auto& mach : std::get<SvmParams>(m.params).machines)
    CHECK(mach.coef.cwiseAbs().maxCoeff() <= 1.0 + 1e-6);
  CHECK(code_of([&] { solve_svm_dual(Matrix::Identity(3, 3), {1, -1, 1}, 1.0, 1e-3, 0); }) ==
        Errc::NoConvergence);
}

TEST_CASE("prediction tie-break, probabilities and feature kind checks") {
  EmotionModel m;
  m.feature = FeatureKind::Is09;
  m.labels = {Emotion::Happy, Emotion::Sad, Emotion::Fear};
  m.normalizer.mean = Vector::Zero(kIs09Dim);
  m.normalizer.stddev = Vector::Ones(kIs09Dim);
  LogRegParams p;
  p.dense.W = Matrix::Zero(3, kIs09Dim);
  p.dense.b = Matrix::Zero(3, 1);
  m.params = p;
  const auto pred = predict(m, embed({1.0, -3.0}));
  CHECK(pred.emotion == Emotion::Happy);
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(pred.probabilities(k) == doctest::Approx(1.0 / 3.0));
  CHECK(code_of([&] { predict(m, MfccSequence{}); }) == Errc::FeatureKindMismatch);

  Vector v(4);
  v << 0.5, 2.0, 2.0, -1.0;
  CHECK(argmax(v) == 1);

  const auto data = blobs(60, 3, 0.5, 5);
  const auto svm = train_svm_ovr(data.matrix(), data.y);
  for (const auto& pr : predict_batch(svm, data.inputs())) {
    CHECK(pr.probabilities.sum() == doctest::Approx(1.0));
    CHECK(pr.confidence == pr.probabilities.maxCoeff());
  }
}

TEST_CASE("trained models are deterministic") {
  const auto data = blobs(80, 4, 0.8, 6);
  const auto a = train_svm_ovr(data.matrix(), data.y);
  const auto b = train_svm_ovr(data.matrix(), data.y);
  const auto& sa = std::get<SvmParams>(a.params);
  const auto& sb = std::get<SvmParams>(b.params);
  for (std::size_t k = 0; k < sa.machines.size(); ++k) {
    CHECK(sa.machines[k].coef == sb.machines[k].coef);
    CHECK(sa.machines[k].bias == sb.machines[k].bias);
  }
  const auto la = train_logreg(data.matrix(), data.y);
  const auto lb = train_logreg(data.matrix(), data.y);
  CHECK(std::get<LogRegParams>(la.params).dense.W == std::get<LogRegParams>(lb.params).dense.W);
}

TEST_CASE("lstm learns the synthetic classes on held-out speakers") {
  const auto& c = corpus();
  const auto lang_a = c.select([](const auto& r) { return r.language == synth_language_name(0); });
  const auto split = split_speaker_disjoint(lang_a, {"", {}, 1});
  const auto train = c.sequences(split.train);
  const auto ytr = Corpus::labels(split.train);
  TrainHistory h;
  const auto m = train_lstm(train, ytr, small_lstm(1), &h);
  CHECK(m.variant() == ModelVariant::Lstm);
  CHECK(!h.train_loss.empty());
  CHECK(h.train_loss.size() <= 30);
  const auto xs = c.inputs(split.test);
  const auto yte = Corpus::labels(split.test);
  CHECK(accuracy(m, xs, yte) >= 0.9);
  for (const auto& p : predict_batch(m, xs)) CHECK(p.probabilities.sum() == doctest::Approx(1.0));

  const auto again = train_lstm(train, ytr, small_lstm(1));
  CHECK(same_params(std::get<LstmNet>(m.params).params(), std::get<LstmNet>(again.params).params()));
  CHECK(code_of([&] { predict(m, Is09Vector{}); }) == Errc::FeatureKindMismatch);
}

TEST_CASE("label-shuffled training stays near chance") {
  // Permutation null: the corpus labels are shuffled before the split, so
  // neither side's labels are recoverable from the audio.
  const auto& c = corpus();
  const auto lang_a = c.select([](const auto& r) { return r.language == synth_language_name(0); });
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto recs = lang_a;
    auto labels = Corpus::labels(recs);
    Rng rng(1000 + seed);
    rng.shuffle(labels);
    for (std::size_t i = 0; i < recs.size(); ++i) recs[i].emotion = labels[i];
    const auto split = split_speaker_disjoint(recs, {"", {}, seed});
    auto cfg = small_lstm(seed);
    cfg.hidden = {12};
    cfg.epochs = 8;
    const auto m = train_lstm(c.sequences(split.train), Corpus::labels(split.train), cfg);
    const auto xs = c.inputs(split.test);
    const double acc = accuracy(m, xs, Corpus::labels(split.test));
    CHECK(acc >= 0.3);
    CHECK(acc <= 0.7);
  }
}

TEST_CASE("frozen fine-tuning on a second language") {
  const auto& c = corpus();
  const auto a = c.select([](const auto& r) { return r.language == synth_language_name(0); });
  const auto b = c.select([](const auto& r) { return r.language == synth_language_name(1); });
  auto cfg = small_lstm(3);
  cfg.penultimate = 16;
  const auto base = train_lstm(c.sequences(a), Corpus::labels(a), cfg);

  const auto split = split_speaker_disjoint(b, {"", {}, 3});
  std::vector<UtteranceRecord> small;
  for (std::size_t i = 0; i < split.train.size() && small.size() < 20; i += split.train.size() / 20)
    small.push_back(split.train[i]);
  REQUIRE(small.size() == 20);
  const auto ft_data = c.sequences(small);
  const auto ft_y = Corpus::labels(small);

  FinetuneConfig ft;
  ft.epochs = 40;
  ft.batch_size = 8;
  ft.adam.lr = 5e-3;
  const auto tuned = finetune_frozen(base, ft_data, ft_y, ft);
  const auto& bn = std::get<LstmNet>(base.params);
  const auto& tn = std::get<LstmNet>(tuned.params);
  CHECK(same_params(trunk_params(bn), trunk_params(tn)));
  CHECK(tn.penultimate->W != bn.penultimate->W);
  CHECK(tn.head.W == bn.head.W);

  const auto xs = c.inputs(split.test);
  const auto yte = Corpus::labels(split.test);
  CHECK(accuracy(tuned, xs, yte) >= accuracy(base, xs, yte));

  ft.train_head = true;
  const auto with_head = finetune_frozen(base, ft_data, ft_y, ft);
  CHECK(same_params(trunk_params(bn), trunk_params(std::get<LstmNet>(with_head.params))));
  CHECK(std::get<LstmNet>(with_head.params).head.W != bn.head.W);
  {
    std::vector<Eigen::RowVectorXd> rows;
    for (std::size_t i = 0; i < ft_data.size(); ++i)
      for (std::size_t r = 0; r < ft_data.valid[i]; ++r)
        rows.push_back(ft_data.seqs[i].row(static_cast<Eigen::Index>(r)));
    Matrix valid(static_cast<Eigen::Index>(rows.size()), ft_data.seqs.front().cols());
    for (std::size_t r = 0; r < rows.size(); ++r) valid.row(static_cast<Eigen::Index>(r)) = rows[r];
    CHECK(tuned.normalizer == Normalizer::fit(valid));
  }
  CHECK(!(tuned.normalizer == base.normalizer));

  ft.train_head = false;
  ft.refit_normalizer = false;
  const auto kept = finetune_frozen(base, ft_data, ft_y, ft);
  CHECK(kept.normalizer == base.normalizer);
  CHECK(same_params(trunk_params(bn), trunk_params(std::get<LstmNet>(kept.params))));
  ft.refit_normalizer = true;

  ft.epochs = 0;
  const auto same = finetune_frozen(base, ft_data, ft_y, ft);
  CHECK(same_params(bn.params(), std::get<LstmNet>(same.params).params()));
  CHECK(same.normalizer == base.normalizer);

  const auto blob = blobs(20, 2, 1.0, 9);
  const auto lr = train_logreg(blob.matrix(), blob.y);
  CHECK(code_of([&] { finetune_frozen(lr, ft_data, ft_y); }) == Errc::VariantMismatch);
  const auto plain = train_lstm(ft_data, ft_y, [] {
    auto q = small_lstm(1);
    q.epochs = 1;
    return q;
  }());
  CHECK(code_of([&] { finetune_frozen(plain, ft_data, ft_y); }) == Errc::VariantMismatch);
  std::vector<Emotion> foreign(ft_y.size(), Emotion::Fear);
  foreign[0] = ft_y[0];
  CHECK(code_of([&] { finetune_frozen(base, ft_data, foreign, ft); }) == Errc::LabelMismatch);
}

TEST_CASE("multi-task training") {
  const auto& c = corpus();
  const auto split = split_speaker_disjoint(c.records, {"", {}, 4});
  const auto train = c.sequences(split.train);
  const auto ytr = Corpus::labels(split.train);
  std::vector<std::string> ltr;
  for (const auto& r : split.train) ltr.push_back(r.language);

  // Zero language weight reproduces single-task training exactly.
  MtlConfig zero;
  zero.lstm = small_lstm(5);
  zero.lstm.epochs = 6;
  zero.lambda_lang = 0.0;
  TrainHistory hm, hs;
  const auto mtl0 = train_multitask(train, ytr, ltr, zero, &hm);
  const auto single = train_lstm(train, ytr, zero.lstm, &hs);
  const auto& sn = std::get<LstmNet>(single.params);
  CHECK(same_params(trunk_params(mtl0.net), trunk_params(sn)));
  CHECK(mtl0.net.head.W == sn.head.W);
  CHECK(hm.train_loss == hs.train_loss);

  MtlConfig cfg;
  cfg.lstm = small_lstm(6);
  const auto mtl = train_multitask(train, ytr, ltr, cfg);
  const auto xs = c.inputs(split.test);
  std::size_t lang_ok = 0, emo_ok = 0;
  const auto preds = predict_batch(mtl, xs);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    REQUIRE(preds[i].language.has_value());
    lang_ok += *preds[i].language == split.test[i].language;
    emo_ok += preds[i].emotion == split.test[i].emotion;
    CHECK(preds[i].probabilities.sum() == doctest::Approx(1.0));
    CHECK(*preds[i].language_confidence <= 1.0);
  }
  CHECK(static_cast<double>(lang_ok) / static_cast<double>(preds.size()) >= 0.97);
  CHECK(static_cast<double>(emo_ok) / static_cast<double>(preds.size()) >= 0.85);

  // An utterance it fits is returned with its own labels.
  const auto own = predict(mtl, xs[0]);
  CHECK(own.emotion == preds[0].emotion);
  CHECK(own.language == preds[0].language);

  CHECK(code_of([&] { train_multitask(train, ytr, std::span(ltr).first(3), cfg); }) == Errc::LabelMismatch);
  const std::vector<std::string> one_language(ltr.size(), "synthA");
  CHECK(code_of([&] { train_multitask(train, ytr, one_language, cfg); }) == Errc::SingleClass);
}
