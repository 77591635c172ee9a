#include <doctest.h>

#include <functional>

#include "ser/error.hpp"
#include "ser/eval.hpp"
#include "ser/rng.hpp"

using namespace ser;

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

constexpr Emotion A = Emotion::Anger, H = Emotion::Happy, S = Emotion::Sad, F = Emotion::Fear,
                  N = Emotion::Neutral;

EvalReport cell(const std::string& row, const std::string& train, const std::string& test, double acc_bias = 0) {
  std::vector<Emotion> gold{A, H, S, F, N, A, H, S};
  std::vector<Emotion> pred = gold;
  if (acc_bias > 0) pred[0] = H;
  auto r = compute_metrics(pred, gold);
  r.experiment_id = "exp";
  r.row = row;
  r.train_set = train;
  r.test_set = test;
  r.seed = 3;
  return r;
}

}  // namespace

TEST_CASE("metric examples") {
  std::vector<Emotion> gold{A, H, S, F, N};
  auto r = compute_metrics(gold, gold);
  CHECK(r.accuracy == 1.0);
  CHECK(r.total == 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(r.confusion[i][j] == (i == j ? 1u : 0u));

  std::vector<Emotion> all_anger(5, A);
  r = compute_metrics(all_anger, gold);
  CHECK(r.accuracy == doctest::Approx(0.2));
  CHECK(r.per_class[1].precision_undefined);
  CHECK(r.per_class[1].precision == 0.0);
  CHECK(r.per_class[0].precision == doctest::Approx(0.2));
  CHECK(r.uar == doctest::Approx(0.2));

  const std::vector<Emotion> g4{A, A, S, S}, p4{A, S, S, S};
  r = compute_metrics(p4, g4);
  CHECK(r.accuracy == 0.75);
  CHECK(r.labels == std::vector<Emotion>{A, S});
  CHECK(r.confusion == std::vector<std::vector<std::size_t>>{{1, 1}, {0, 2}});
  CHECK(r.per_class[0].recall == 0.5);
  CHECK(r.per_class[1].precision == doctest::Approx(2.0 / 3.0));

  r = compute_metrics(p4, g4, {A, H, S});
  CHECK(r.per_class[1].recall_undefined);
  CHECK(r.uar == doctest::Approx(0.75));
}

TEST_CASE("metric errors") {
  const std::vector<Emotion> a{A, H}, b{A};
  CHECK(code_of([&] { compute_metrics(a, b); }) == Errc::LengthMismatch);
  CHECK(code_of([&] { compute_metrics(std::vector<Emotion>{}, std::vector<Emotion>{}); }) == Errc::EmptyEval);
  CHECK(code_of([&] { compute_metrics(a, a, {A}); }) == Errc::LabelMismatch);
  const std::vector<std::string> l1{"x", "y", "y"}, l2{"x", "y", "x"};
  CHECK(language_accuracy(l1, l2) == doctest::Approx(2.0 / 3.0));
  CHECK(code_of([&] { language_accuracy(l1, std::span(l2).first(1)); }) == Errc::LengthMismatch);
}

TEST_CASE("confusion invariants and json round trip over random predictions") {
  Rng rng(77);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t n = 1 + rng.index(200);
    std::vector<Emotion> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<Emotion>(rng.index(5));
      g[i] = rng.uniform() < 0.6 ? p[i] : static_cast<Emotion>(rng.index(5));
    }
    auto r = compute_metrics(p, g);
    std::size_t trace = 0, sum = 0;
    for (std::size_t i = 0; i < r.labels.size(); ++i) {
      std::size_t row = 0;
      for (std::size_t j = 0; j < r.labels.size(); ++j) {
        row += r.confusion[i][j];
        sum += r.confusion[i][j];
      }
      trace += r.confusion[i][i];
      CHECK(row == r.per_class[i].support);
    }
    CHECK(sum == n);
    CHECK(std::abs(static_cast<double>(trace) / static_cast<double>(sum) - r.accuracy) <= 1e-12);

    if (rep % 3 == 0) r.language_accuracy = rng.uniform();
    r.config = {{"seed", rep}, {"kind", "svm"}};
    r.seed = rng.next();
    const auto text = to_json(r).dump();
    CHECK(report_from_json(nlohmann::json::parse(text)) == r);
  }
  CHECK(code_of([] { report_from_json(nlohmann::json::object()); }) == Errc::Corrupt);
}

TEST_CASE("report layouts") {
  std::vector<EvalReport> single{cell("IS09 + SVC", "emodb", "emodb"), cell("IS09 + SVC", "savee", "savee", 1),
                                 cell("MFCC + LSTM", "emodb", "emodb")};
  const auto s = render_report(single, ReportLayout::SingleCorpus);
  CHECK(s.text.find("IS09 + SVC") != std::string::npos);
  CHECK(s.text.find("100.00") != std::string::npos);
  CHECK(s.text.find("87.50") != std::string::npos);
  CHECK(s.json["layout"] == "single_corpus");
  CHECK(s.json["columns"].size() == 2);
  CHECK(reports_from_json(s.json) == single);

  auto bad = single;
  bad[1].test_set = "emodb";
  CHECK(code_of([&] { render_report(bad, ReportLayout::SingleCorpus); }) == Errc::LayoutMismatch);
  bad[1].train_set = "emodb";
  CHECK(code_of([&] { render_report(bad, ReportLayout::SingleCorpus); }) == Errc::LayoutMismatch);
  CHECK(code_of([&] { render_report({}, ReportLayout::Mtl); }) == Errc::LayoutMismatch);

  std::vector<EvalReport> cross{cell("IS09 + SVC", "iemocap", "emodb"), cell("IS09 + SVC", "iemocap", "savee")};
  CHECK(render_report(cross, ReportLayout::CrossCorpus).json["columns"].size() == 2);
  cross[1].train_set = "masc";
  CHECK(code_of([&] { render_report(cross, ReportLayout::CrossCorpus); }) == Errc::LayoutMismatch);

  std::vector<EvalReport> transfer{cell(transfer_base_row("iemocap"), "iemocap", "emodb"),
                                   cell(kTransferFinetuneRow, "emodb", "emodb", 1)};
  const auto t = render_report(transfer, ReportLayout::Transfer);
  CHECK(t.text.find("Train on iemocap") != std::string::npos);
  CHECK(t.text.find("Fine-tune on smaller dataset") != std::string::npos);
  CHECK(code_of([&] { render_report({transfer[0]}, ReportLayout::Transfer); }) == Errc::LayoutMismatch);

  std::vector<EvalReport> mtl{cell(kMtlSingleRow, "emodb", "emodb"), cell(kMtlJointRow, "emodb", "emodb", 1)};
  mtl[1].language_accuracy = 0.99;
  const auto m = render_report(mtl, ReportLayout::Mtl);
  CHECK(m.text.find("only predict emotion") != std::string::npos);
  CHECK(m.text.find("predict both emotion and language ID") != std::string::npos);
  CHECK(code_of([&] { render_report(single, ReportLayout::Mtl); }) == Errc::LayoutMismatch);

  auto dup = mtl;
  dup.push_back(mtl[0]);
  CHECK(code_of([&] { render_report(dup, ReportLayout::Mtl); }) == Errc::LayoutMismatch);

  for (auto l : {ReportLayout::SingleCorpus, ReportLayout::CrossCorpus, ReportLayout::Transfer, ReportLayout::Mtl})
    CHECK(report_layout_from_string(to_string(l)) == l);
}
