#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ser/corpus.hpp"
#include "ser/feature_cache.hpp"
#include "ser/features.hpp"
#include "ser/nn.hpp"

namespace ser {

// Per-dimension standardization fitted on training data only.
struct Normalizer {
  Vector mean;
  Vector stddev;

  static constexpr double kStddevFloor = 1e-8;

  // rows = samples
  static Normalizer fit(const Matrix& rows);
  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  void apply_rows(Matrix& rows) const;
  void apply_rows(Matrix& rows, std::size_t first_n_rows) const;

  bool operator==(const Normalizer& o) const { return mean == o.mean && stddev == o.stddev; }
};

// Label vocabulary: the canonical emotions present, in canonical order.
std::vector<Emotion> label_vocabulary(std::span<const Emotion> y);

struct LogRegConfig {
  double l2 = 1e-4;
  double grad_tol = 1e-5;
  std::size_t max_iter = 10000;
};

struct SvmConfig {
  double C = 1.0;
  std::optional<double> gamma;  // default 1 / (d · var(X))
  double tol = 1e-3;
  std::size_t max_iter_per_sample = 100;
};

struct LstmConfig {
  std::vector<std::size_t> hidden = {128, 128};
  std::size_t penultimate = 0;  // 0 = none; the transfer base uses 64 (ReLU)
  nn::AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::size_t patience = 5;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct FinetuneConfig {
  std::size_t epochs = 30;
  bool train_head = false;  // only the penultimate layer learns
  bool refit_normalizer = true;  // input statistics from the target data
  nn::AdamConfig adam;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct MtlConfig {
  LstmConfig lstm;
  double lambda_lang = 1.0;
};

struct LogRegParams {
  nn::DenseParams dense;  // K × d
};

struct BinarySvm {
  Matrix support;  // n_sv × d (normalized features)
  Vector coef;     // α_i · y_i
  double bias = 0.0;
};

struct SvmParams {
  double gamma = 0.0;
  double C = 1.0;
  std::vector<BinarySvm> machines;  // one per class, one-vs-rest
};

// LSTM trunk → optional ReLU penultimate dense → linear head (+ optional
// language head reading the same final hidden state).
struct LstmNet {
  nn::LstmStack trunk;
  std::optional<nn::DenseParams> penultimate;
  nn::DenseParams head;
  std::optional<nn::DenseParams> language_head;

  std::vector<nn::Mat*> params();
  std::vector<const nn::Mat*> params() const;
  static LstmNet zeros_like(const LstmNet& net);
};

enum class ModelVariant : std::uint8_t { LogReg = 0, SvmOvr = 1, Lstm = 2 };
const char* to_string(ModelVariant v);

struct EmotionModel {
  FeatureKind feature = FeatureKind::Is09;
  Normalizer normalizer;
  std::vector<Emotion> labels;
  std::variant<LogRegParams, SvmParams, LstmNet> params;

  ModelVariant variant() const { return static_cast<ModelVariant>(params.index()); }
};

struct MtlModel {
  FeatureKind feature = FeatureKind::MfccSeq;
  Normalizer normalizer;
  std::vector<Emotion> labels;
  std::vector<std::string> languages;
  double lambda_lang = 1.0;
  LstmNet net;  // language_head always present
};

struct TrainHistory {
  std::vector<double> train_loss;  // mean over each epoch's batches
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  std::size_t iterations = 0;      // logreg / svm iteration counts
  double initial_loss = 0.0;       // logreg objective at initialization
  double final_loss = 0.0;
};

// ---- feature assembly -------------------------------------------------------

Matrix stack_is09(std::span<const Is09Vector> xs);

// Sequence data for the LSTM: each entry is steps × dims, with `valid`
// leading rows of real frames (the rest is zero padding).
struct SequenceSet {
  FeatureKind kind = FeatureKind::MfccSeq;
  std::vector<Matrix> seqs;
  std::vector<std::size_t> valid;

  std::size_t size() const { return seqs.size(); }
};

SequenceSet make_sequences(std::span<const MfccSequence> xs);
// Each 384-vector becomes a length-1 sequence.
SequenceSet make_sequences(std::span<const Is09Vector> xs);

// ---- training -----------------------------------------------------------------

EmotionModel train_logreg(const Matrix& X, std::span<const Emotion> y, const LogRegConfig& cfg = {},
                          TrainHistory* history = nullptr);
EmotionModel train_svm_ovr(const Matrix& X, std::span<const Emotion> y, const SvmConfig& cfg = {},
                           TrainHistory* history = nullptr);
EmotionModel train_lstm(const SequenceSet& data, std::span<const Emotion> y, const LstmConfig& cfg = {},
                        TrainHistory* history = nullptr);
EmotionModel finetune_frozen(const EmotionModel& base, const SequenceSet& data,
                             std::span<const Emotion> y, const FinetuneConfig& cfg = {},
                             TrainHistory* history = nullptr);
MtlModel train_multitask(const SequenceSet& data, std::span<const Emotion> y_emotion,
                         std::span<const std::string> y_language, const MtlConfig& cfg = {},
                         TrainHistory* history = nullptr);

// ---- inference ------------------------------------------------------------------

using FeatureInput = std::variant<Is09Vector, MfccSequence>;

struct Prediction {
  Emotion emotion = Emotion::Neutral;
  double confidence = 0.0;
  Vector probabilities;  // over model.labels
  std::optional<std::string> language;
  std::optional<double> language_confidence;
};

// SVM confidences are a softmax over decision values (uncalibrated). Ties go
// to the lowest class index.
Prediction predict(const EmotionModel& model, const FeatureInput& features);
Prediction predict(const MtlModel& model, const FeatureInput& features);

// Batched inference over many utterances (same results as predict, faster).
std::vector<Prediction> predict_batch(const EmotionModel& model, std::span<const FeatureInput> xs);
std::vector<Prediction> predict_batch(const MtlModel& model, std::span<const FeatureInput> xs);

struct SvmDual {
  Vector alpha;
  double bias = 0.0;
  std::size_t iterations = 0;
};

// Binary soft-margin dual (labels ±1) over a precomputed kernel matrix, solved
// by SMO with second-order working-set selection until the maximal violating
// pair gap drops below tol. NoConvergence after max_iter updates.
SvmDual solve_svm_dual(const Matrix& K, const std::vector<double>& y, double C, double tol,
                       std::size_t max_iter);

// SVM raw decision values (one per class) for a normalized feature row.
Vector svm_decision_values(const SvmParams& svm, const Vector& x);

std::size_t argmax(const Vector& v);

}  // namespace ser
