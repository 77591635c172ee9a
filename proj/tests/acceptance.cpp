// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "ser/binary_io.hpp"
#include "ser/bundle.hpp"
#include "ser/classifiers.hpp"
#include "ser/config.hpp"
#include "ser/corpus.hpp"
#include "ser/experiment.hpp"
#include "ser/feature_cache.hpp"
#include "ser/features.hpp"
#include "ser/nn.hpp"
#include "ser/signal.hpp"
#include "ser/synth.hpp"

using namespace ser;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ser_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct SynthData {
  std::vector<UtteranceRecord> records;
  FeatureCache features;
};

SynthData make_corpus(const SynthConfig& cfg, const std::string& name, bool is09, bool mfcc) {
  const auto dir = scratch(name);
  SynthData d;
  d.records = generate_synthetic_corpus(cfg, dir);
  ExtractOptions opts;
  opts.is09 = is09;
  opts.mfcc = mfcc;
  d.features = extract_features(d.records, opts);
  fs::remove_all(dir);
  return d;
}

std::vector<Emotion> labels_of(const std::vector<UtteranceRecord>& rs) {
  std::vector<Emotion> y;
  for (const auto& r : rs) y.push_back(r.emotion);
  return y;
}

std::vector<Is09Vector> is09_of(const SynthData& d, const std::vector<UtteranceRecord>& rs) {
  std::vector<Is09Vector> out;
  for (const auto& r : rs) out.push_back(d.features.get(r.id).is09_vector());
  return out;
}

std::vector<MfccSequence> mfcc_of(const SynthData& d, const std::vector<UtteranceRecord>& rs) {
  std::vector<MfccSequence> out;
  for (const auto& r : rs) out.push_back(d.features.get(r.id).mfcc_sequence());
  return out;
}

template <typename T>
std::vector<FeatureInput> as_inputs(const std::vector<T>& xs) {
  return {xs.begin(), xs.end()};
}

template <typename Model>
double accuracy(const Model& m, const std::vector<FeatureInput>& xs, const std::vector<Emotion>& y) {
  const auto preds = predict_batch(m, xs);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i].emotion == y[i];
  return static_cast<double>(ok) / static_cast<double>(preds.size());
}

bool same_mats(const std::vector<const nn::Mat*>& a, const std::vector<const nn::Mat*>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
  return true;
}

// Models trained for the learnability criterion, reused for persistence.
struct Trained {
  std::vector<EmotionModel> models;
  std::vector<std::vector<FeatureInput>> inputs;
};
Trained g_trained;

// ---- 1 ---------------------------------------------------------------------
void feature_contract(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(101);
  std::size_t wrong_length = 0, non_finite = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto u = synthesize_utterance(rng.index(5), rng.index(3), rng.index(12), 101, rng.next(), 0.25, 1.0);
    const auto v = is09_vector(u.audio);
    wrong_length += v.values.size() != kIs09Dim;
    for (double x : v.values) non_finite += !std::isfinite(x);
  }
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> c(2 + rng.index(300));
    const double scale = std::pow(10.0, rng.uniform(-2, 2));
    for (auto& v : c) v = scale * rng.uniform(-1, 1);
    const auto got = functionals(c).to_array();
    const auto ref = oracle::functionals(c);
    for (std::size_t k = 0; k < kNumFunctionals; ++k) {
      const double err = std::abs(got[k] - ref.v[k]) / std::max({1.0, std::abs(ref.v[k]), scale * scale});
      worst = std::max(worst, err);
    }
  }
  const double secs = seconds_since(t0);
  o.require(wrong_length == 0, "is09 length");
  o.require(non_finite == 0, "finite values");
  o.require(worst <= 1e-9, "functionals within 1e-9");
  o.require(secs < 10.0, "under 10 s");
  o.detail << "1000 utterances x 384 dims, worst functional error " << worst << ", " << secs << " s";
}

// ---- 2 ---------------------------------------------------------------------
void mfcc_contract(Outcome& o) {
  Rng rng(202);
  std::size_t bad_shape = 0;
  for (int i = 0; i < 100; ++i) {
    const auto u = synthesize_utterance(rng.index(5), 0, rng.index(4), 202, rng.next(), 0.03, 3.0);
    const auto s = mfcc_sequence(u.audio);
    bad_shape += s.matrix.rows() != 120 || s.matrix.cols() != 13;
  }
  double worst = 0.0;
  for (std::size_t n : {64u, 128u, 256u, 512u, 1024u}) {
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    const auto fast = power_spectrum(x, n);
    const auto slow = oracle::dft_power(x, n);
    double peak = 0.0;
    for (double v : slow) peak = std::max(peak, v);
    for (std::size_t k = 0; k < slow.size(); ++k)
      worst = std::max(worst, std::abs(fast[k] - slow[k]) / std::max(std::abs(slow[k]), 1e-3 * peak));
  }
  Waveform tone;
  tone.samples = oracle::sine(1000.0, 1600, 16000.0, 0.5);
  const auto frames = frame_signal(tone);
  MfccExtractor ex;
  const auto logs = ex.log_mel(frames.frames[1]);
  const std::size_t band = oracle::argmax(logs);
  const auto& mel = ex.filterbank();
  const bool contains = mel.lower_edge_hz(band) < 1000.0 && mel.upper_edge_hz(band) > 1000.0;
  o.require(bad_shape == 0, "shape 120x13");
  o.require(worst <= 1e-6, "fft within 1e-6");
  o.require(contains, "1 kHz band");
  o.detail << "100 extractions 120x13, fft rel error " << worst << ", 1 kHz peak in band " << band << " ["
           << mel.lower_edge_hz(band) << ", " << mel.upper_edge_hz(band) << "] Hz";
}

// ---- 3 ---------------------------------------------------------------------
void pitch_contract(Outcome& o) {
  double worst = 0.0;
  std::size_t count = 0;
  Rng rng(303);
  for (double hz = 60.0; hz <= 480.0; hz += 5.0) {
    auto x = oracle::sine(hz, kPitchWindow, 16000.0, 0.5, rng.uniform(0, 6.28));
    // 20 dB SNR
    for (auto& v : x) v += std::sqrt(0.00125) * rng.normal();
    const double f0n = pitch_f0(x, 16000);
    worst = std::max(worst, std::abs(f0n * kF0NormHz - hz) / hz);
    o.require(f0n >= 0.0 && f0n <= 1.0, "normalized to [0, 1]");
    ++count;
  }
  std::size_t voiced_noise = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng n(seed);
    std::vector<double> x(kPitchWindow);
    for (auto& v : x) v = n.normal() * 0.3;
    voiced_noise += pitch_f0(x, 16000) != 0.0;
  }
  o.require(worst <= 0.04, "within 4 percent");
  o.require(voiced_noise == 0, "noise unvoiced");
  o.detail << count << " sines at 20 dB SNR, worst error " << 100.0 * worst << "%, " << voiced_noise
           << "/20 noise frames voiced";
}

// ---- 4 ---------------------------------------------------------------------
void gradient_exactness(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(404);
  const std::size_t steps = 7, batch = 3;
  auto stack = nn::LstmStack::init(5, {8, 8}, rng);
  auto head = nn::DenseParams::init(8, 4, rng);
  nn::Mat x(5, static_cast<Eigen::Index>(steps * batch));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const std::vector<std::size_t> targets{0, 3, 1};

  auto loss = [&] {
    const auto out = nn::lstm_forward(stack, x, steps, batch);
    return nn::softmax_xent_batch(nn::dense_forward(head, out.final_hidden()), targets).loss;
  };
  const auto out = nn::lstm_forward(stack, x, steps, batch);
  const nn::Mat fin = out.final_hidden();
  const auto xe = nn::softmax_xent_batch(nn::dense_forward(head, fin), targets);
  auto head_grads = nn::DenseParams::zeros_like(head);
  const nn::Mat d_fin = nn::dense_backward(head, fin, xe.grad, head_grads);
  const auto g = nn::lstm_backward(stack, out.cache, nn::final_state_gradient(d_fin, steps));

  std::vector<nn::Mat*> params = stack.params();
  params.push_back(&head.W);
  params.push_back(&head.b);
  params.push_back(&x);
  std::vector<nn::Mat> analytic;
  for (const nn::Mat* m : g.params.params()) analytic.push_back(*m);
  analytic.push_back(head_grads.W);
  analytic.push_back(head_grads.b);
  analytic.push_back(g.input);
  const auto r = nn::grad_check(loss, params, analytic);
  const double secs = seconds_since(t0);
  o.require(r.max_rel_error < 1e-4, "max relative error below 1e-4");
  o.require(secs < 60.0, "under 60 s");
  o.detail << r.checked << " coordinates, max relative error " << r.max_rel_error << ", " << secs << " s";
}

// ---- 5 ---------------------------------------------------------------------
void learnability(Outcome& o) {
  const auto t0 = Clock::now();
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.languages = 1;
  cfg.speakers_per_language = 6;
  cfg.utterances_per_cell = 40;
  cfg.seed = 5;
  const auto d = make_corpus(cfg, "learn", true, true);
  const auto split = split_speaker_disjoint(d.records, {"", {}, 5});
  const auto ytr = labels_of(split.train), yte = labels_of(split.test);
  const auto xtr = is09_of(d, split.train), xte = is09_of(d, split.test);
  const auto in_is09 = as_inputs(xte);
  const auto in_mfcc = as_inputs(mfcc_of(d, split.test));

  const auto svm = train_svm_ovr(stack_is09(xtr), ytr);
  const auto logreg = train_logreg(stack_is09(xtr), ytr);
  LstmConfig lc;
  lc.seed = 5;
  TrainHistory h;
  const auto lstm = train_lstm(make_sequences(mfcc_of(d, split.train)), ytr, lc, &h);
  const double a_svm = accuracy(svm, in_is09, yte), a_lr = accuracy(logreg, in_is09, yte),
               a_lstm = accuracy(lstm, in_mfcc, yte);
  const double secs = seconds_since(t0);
  g_trained.models = {svm, logreg, lstm};
  g_trained.inputs = {in_is09, in_is09, in_mfcc};

  o.require(a_svm >= 0.90, "svm >= 0.90");
  o.require(a_lr >= 0.90, "logreg >= 0.90");
  o.require(a_lstm >= 0.85, "lstm >= 0.85");
  o.require(secs < 600.0, "under 10 min");
  o.detail << d.records.size() << " utterances, held out " << split.spec.held_out_speakers[0] << " ("
           << yte.size() << "): IS09+SVM " << a_svm << ", IS09+LogReg " << a_lr << ", MFCC+LSTM " << a_lstm
           << " (" << h.train_loss.size() << " epochs), " << secs << " s";
}

// ---- 6 ---------------------------------------------------------------------
void transfer(Outcome& o) {
  SynthConfig cfg;
  cfg.classes = 2;
  cfg.languages = 2;
  cfg.speakers_per_language = 4;
  cfg.utterances_per_cell = 20;
  cfg.seed = 6;
  const auto d = make_corpus(cfg, "transfer", false, true);
  std::vector<UtteranceRecord> a, b;
  for (const auto& r : d.records) (r.language == synth_language_name(0) ? a : b).push_back(r);

  LstmConfig lc;
  lc.penultimate = 64;
  lc.seed = 6;
  const auto base = train_lstm(make_sequences(mfcc_of(d, a)), labels_of(a), lc);

  const auto split = split_speaker_disjoint(b, {"", {}, 6});
  std::vector<UtteranceRecord> small;
  const std::size_t stride = split.train.size() / 20;
  for (std::size_t i = 0; small.size() < 20; i += stride) small.push_back(split.train[i]);
  FinetuneConfig fc;
  fc.seed = 6;
  const auto tuned = finetune_frozen(base, make_sequences(mfcc_of(d, small)), labels_of(small), fc);

  const auto xs = as_inputs(mfcc_of(d, split.test));
  const auto yte = labels_of(split.test);
  const double a_base = accuracy(base, xs, yte), a_tuned = accuracy(tuned, xs, yte);
  const auto& bn = std::get<LstmNet>(base.params);
  const auto& tn = std::get<LstmNet>(tuned.params);
  const bool frozen = same_mats(std::as_const(bn.trunk).params(), std::as_const(tn.trunk).params());
  o.require(a_tuned >= a_base, "fine-tuned >= base");
  o.require(frozen, "trunk bitwise unchanged");
  o.require(tn.penultimate->W != bn.penultimate->W, "penultimate updated");
  o.detail << "base on B " << a_base << ", fine-tuned on 20 B utterances " << a_tuned << ", trunk "
           << (frozen ? "bitwise unchanged" : "CHANGED");
}

// ---- 7 ---------------------------------------------------------------------
void multitask(Outcome& o) {
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.languages = 2;
  cfg.speakers_per_language = 4;
  cfg.utterances_per_cell = 15;
  cfg.seed = 7;
  const auto d = make_corpus(cfg, "mtl", false, true);
  // One held-out speaker per language so both languages are tested.
  const auto split = split_speaker_disjoint(
      d.records, {"", {synth_language_name(0) + "_spk0", synth_language_name(1) + "_spk0"}, 7});
  const auto train = make_sequences(mfcc_of(d, split.train));
  const auto ytr = labels_of(split.train), yte = labels_of(split.test);
  std::vector<std::string> ltr;
  for (const auto& r : split.train) ltr.push_back(r.language);
  const auto xs = as_inputs(mfcc_of(d, split.test));

  MtlConfig mc;
  mc.lstm.seed = 7;
  const auto mtl = train_multitask(train, ytr, ltr, mc);
  const auto single = train_lstm(train, ytr, mc.lstm);
  const auto preds = predict_batch(mtl, xs);
  std::size_t lang_ok = 0, emo_ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    lang_ok += preds[i].language == split.test[i].language;
    emo_ok += preds[i].emotion == yte[i];
  }
  const double n = static_cast<double>(preds.size());
  const double a_lang = lang_ok / n, a_mtl = emo_ok / n, a_single = accuracy(single, xs, yte);

  MtlConfig zero = mc;
  zero.lambda_lang = 0.0;
  zero.lstm.epochs = 3;
  TrainHistory hm, hs;
  const auto m0 = train_multitask(train, ytr, ltr, zero, &hm);
  const auto s0 = train_lstm(train, ytr, zero.lstm, &hs);
  const auto& sn = std::get<LstmNet>(s0.params);
  const bool same = same_mats(std::as_const(m0.net.trunk).params(), std::as_const(sn.trunk).params()) &&
                    m0.net.head.W == sn.head.W && m0.net.head.b == sn.head.b && hm.train_loss == hs.train_loss &&
                    hm.val_loss == hs.val_loss;

  o.require(a_lang >= 0.97, "language >= 0.97");
  o.require(std::abs(a_mtl - a_single) <= 0.05, "emotion within 5 points");
  o.require(same, "lambda 0 bitwise");
  o.detail << "language " << a_lang << ", emotion multi-task " << a_mtl << " vs single-task " << a_single
           << ", lambda=0 trajectory " << (same ? "bitwise identical" : "DIFFERS");
}

// ---- 8 ---------------------------------------------------------------------
void determinism(Outcome& o) {
  const auto dir = scratch("determinism");
  SynthConfig sc;
  sc.classes = 3;
  sc.languages = 2;
  sc.speakers_per_language = 3;
  sc.utterances_per_cell = 8;
  sc.min_seconds = 1.0;
  sc.max_seconds = 1.5;
  sc.seed = 8;
  generate_synthetic_corpus(sc, dir / "corpus");
  std::size_t identical = 0, runs = 0;
  for (const std::string kind : {"svm", "logreg", "lstm", "mtl"}) {
    const std::string feat = kind == "lstm" || kind == "mtl" ? "mfcc_seq" : "is09";
    const std::string text = "[experiment]\nid = det\nseed = 8\n[data]\ntrain_manifest = corpus/manifest.csv\n"
                             "cache = cache\n[features]\nkind = " + feat + "\n[classifier]\nkind = " + kind +
                             "\n[lstm]\nhidden = 16\nepochs = 4\n";
    std::vector<std::string> bytes;
    for (const std::string out : {"a", "b"}) {
      const auto cfg = parse_config(text, dir, {"experiment.output_dir=" + (dir / (kind + out)).string()});
      const auto r = cmd_run(cfg);
      const auto file = read_file_bytes(dir / (kind + out) / "report.json");
      bytes.emplace_back(file.begin(), file.end());
      o.require(dump_json(r.json) == bytes.back(), "in-memory JSON matches file");
    }
    identical += bytes[0] == bytes[1];
    ++runs;
  }
  o.require(identical == runs, "rerun JSON byte-identical");

  std::size_t bitwise = 0;
  for (std::size_t i = 0; i < g_trained.models.size(); ++i) {
    const auto bytes = save_model({g_trained.models[i], 99});
    const auto back = std::get<EmotionModel>(load_model(bytes, 99).model);
    const auto p = predict_batch(g_trained.models[i], g_trained.inputs[i]);
    const auto q = predict_batch(back, g_trained.inputs[i]);
    bool same = p.size() == q.size();
    for (std::size_t k = 0; same && k < p.size(); ++k)
      same = p[k].emotion == q[k].emotion && p[k].probabilities == q[k].probabilities;
    bitwise += same;
  }
  o.require(!g_trained.models.empty() && bitwise == g_trained.models.size(), "bundle predictions bitwise");
  o.detail << identical << "/" << runs << " reruns byte-identical, " << bitwise << "/" << g_trained.models.size()
           << " bundles predict bitwise-identically";
  fs::remove_all(dir);
}

// ---- 9 ---------------------------------------------------------------------
void split_hygiene(Outcome& o) {
  Rng rng(909);
  std::size_t overlaps = 0, wrong_count = 0, large = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const bool big = rep % 3 == 0;
    const bool sessions = big && rep % 2 == 0;
    const std::size_t speakers = 3 + rng.index(30);
    const std::size_t n = big ? kLargeCorpusUtterances + rng.index(4000) : speakers + rng.index(kLargeCorpusUtterances - speakers);
    std::vector<UtteranceRecord> recs(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t s = i < speakers ? i : rng.index(speakers);
      recs[i].id = "u" + std::to_string(i);
      recs[i].speaker_id = sessions ? "Ses" + std::to_string(10 + s / 2) + (s % 2 ? "M" : "F") : "spk" + std::to_string(s);
      recs[i].emotion = static_cast<Emotion>(rng.index(5));
    }
    if (sessions)  // every session needs both of its speakers
      for (std::size_t s = 0; s < speakers + speakers % 2; ++s) {
        UtteranceRecord r;
        r.id = "pad" + std::to_string(s);
        r.speaker_id = "Ses" + std::to_string(10 + s / 2) + (s % 2 ? "M" : "F");
        recs.push_back(r);
      }
    const auto split = split_speaker_disjoint(recs, {"", {}, rng.next()});
    std::set<std::string> tr, te;
    for (const auto& r : split.train) tr.insert(r.speaker_id);
    for (const auto& r : split.test) te.insert(r.speaker_id);
    for (const auto& s : te) overlaps += tr.count(s);
    const std::size_t expect = recs.size() < kLargeCorpusUtterances ? 1 : 2;
    large += expect == 2;
    wrong_count += te.size() != expect || split.train.size() + split.test.size() != recs.size();
  }
  o.require(overlaps == 0, "disjoint speakers");
  o.require(wrong_count == 0, "hold-out count");
  o.detail << "200 manifests (" << large << " large), " << overlaps << " shared speakers, " << wrong_count
           << " wrong hold-out counts";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"feature contract", feature_contract},   {"mfcc shape and oracle", mfcc_contract},
      {"pitch and voicing", pitch_contract},     {"gradient exactness", gradient_exactness},
      {"learnability end-to-end", learnability}, {"transfer learning", transfer},
      {"multi-task learning", multitask},        {"determinism and persistence", determinism},
      {"split hygiene", split_hygiene},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::printf("%s  criterion %zu  %-28s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
