#include "ser/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <utility>

#include "ser/error.hpp"
#include "ser/rng.hpp"

namespace ser {

using nn::Mat;

// ---- normalizer ---------------------------------------------------------------

Normalizer Normalizer::fit(const Matrix& rows) {
  if (rows.rows() == 0) throw Error(Errc::DimensionMismatch, "cannot fit a normalizer on no data");
  Normalizer n;
  const double count = static_cast<double>(rows.rows());
  n.mean = rows.colwise().sum().transpose() / count;
  n.stddev.resize(rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    const double var = (rows.col(j).array() - n.mean(j)).square().sum() / count;
    n.stddev(j) = std::max(std::sqrt(var), kStddevFloor);
  }
  // Statistics are stored as f32; keep exactly what a saved model will see.
  n.mean = n.mean.cast<float>().cast<double>();
  n.stddev = n.stddev.cast<float>().cast<double>();
  return n;
}

void Normalizer::apply_rows(Matrix& rows) const {
  apply_rows(rows, static_cast<std::size_t>(rows.rows()));
}

void Normalizer::apply_rows(Matrix& rows, std::size_t first_n_rows) const {
  if (rows.cols() != mean.size())
    throw Error(Errc::DimensionMismatch, "feature dimension " + std::to_string(rows.cols()) +
                                             " does not match normalizer dimension " +
                                             std::to_string(mean.size()));
  const auto n = static_cast<Eigen::Index>(first_n_rows);
  auto top = rows.topRows(n);
  top.rowwise() -= mean.transpose();
  top.array().rowwise() /= stddev.transpose().array();
}

std::vector<Emotion> label_vocabulary(std::span<const Emotion> y) {
  std::set<Emotion> present(y.begin(), y.end());
  return {present.begin(), present.end()};
}

std::size_t argmax(const Vector& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  return best;
}

const char* to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::LogReg: return "logreg";
    case ModelVariant::SvmOvr: return "svm";
    case ModelVariant::Lstm: return "lstm";
  }
  return "?";
}

namespace {

std::vector<std::size_t> class_indices(std::span<const Emotion> y, const std::vector<Emotion>& vocab) {
  std::vector<std::size_t> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto it = std::find(vocab.begin(), vocab.end(), y[i]);
    if (it == vocab.end())
      throw Error(Errc::LabelMismatch, std::string("label '") + to_string(y[i]) +
                                           "' is not in the model vocabulary");
    out[i] = static_cast<std::size_t>(it - vocab.begin());
  }
  return out;
}

std::vector<Emotion> checked_vocabulary(std::span<const Emotion> y, std::size_t n) {
  if (y.size() != n)
    throw Error(Errc::DimensionMismatch, "feature count " + std::to_string(n) + " but " +
                                             std::to_string(y.size()) + " labels");
  auto vocab = label_vocabulary(y);
  if (vocab.size() < 2) throw Error(Errc::SingleClass, "training data contains a single class");
  return vocab;
}

void check_finite(double loss, std::size_t step) {
  if (!std::isfinite(loss))
    throw Error(Errc::NumericFailure, "non-finite loss at step " + std::to_string(step));
}

// ---- sequence network plumbing ------------------------------------------------

struct NetForward {
  nn::LstmOutput trunk;
  Mat final_hidden;
  Mat pen_pre;
  Mat pen_act;
  Mat logits;
  Mat lang_logits;
};

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

NetForward net_forward(const LstmNet& net, const Mat& x, std::size_t steps, std::size_t batch) {
  NetForward f;
  f.trunk = nn::lstm_forward(net.trunk, x, steps, batch);
  f.final_hidden = f.trunk.final_hidden();
  if (net.penultimate) {
    f.pen_pre = nn::dense_forward(*net.penultimate, f.final_hidden);
    f.pen_act = relu(f.pen_pre);
    f.logits = nn::dense_forward(net.head, f.pen_act);
  } else {
    f.logits = nn::dense_forward(net.head, f.final_hidden);
  }
  if (net.language_head) f.lang_logits = nn::dense_forward(*net.language_head, f.final_hidden);
  return f;
}

// Gradient of the dense tail w.r.t. the final hidden state; accumulates tail
// parameter gradients into `grads`.
Mat tail_backward(const LstmNet& net, const Mat& final_hidden, const Mat& pen_pre,
                  const Mat& pen_act, const Mat& d_logits, const Mat* d_lang, LstmNet& grads) {
  Mat d_final;
  if (net.penultimate) {
    Mat d_act = nn::dense_backward(net.head, pen_act, d_logits, grads.head);
    Mat d_pre = d_act.cwiseProduct((pen_pre.array() > 0.0).cast<double>().matrix());
    d_final = nn::dense_backward(*net.penultimate, final_hidden, d_pre, *grads.penultimate);
  } else {
    d_final = nn::dense_backward(net.head, final_hidden, d_logits, grads.head);
  }
  if (d_lang) d_final += nn::dense_backward(*net.language_head, final_hidden, *d_lang, *grads.language_head);
  return d_final;
}

Mat build_batch(const SequenceSet& data, std::span<const std::size_t> idx) {
  const auto steps = data.seqs.front().rows();
  const auto dims = data.seqs.front().cols();
  const auto b = static_cast<Eigen::Index>(idx.size());
  Mat x(dims, steps * b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const Matrix& s = data.seqs[idx[static_cast<std::size_t>(j)]];
    for (Eigen::Index t = 0; t < steps; ++t) x.col(t * b + j) = s.row(t).transpose();
  }
  return x;
}

void check_sequences(const SequenceSet& data) {
  if (data.seqs.empty()) throw Error(Errc::ShapeMismatch, "no training sequences");
  const auto steps = data.seqs.front().rows();
  const auto dims = data.seqs.front().cols();
  for (const auto& s : data.seqs)
    if (s.rows() != steps || s.cols() != dims)
      throw Error(Errc::ShapeMismatch, "sequences differ in shape");
  if (data.valid.size() != data.seqs.size())
    throw Error(Errc::ShapeMismatch, "valid-frame list does not match sequences");
}

Normalizer fit_sequence_normalizer(const SequenceSet& data) {
  std::size_t rows = 0;
  for (std::size_t v : data.valid) rows += v;
  const auto dims = data.seqs.front().cols();
  Matrix all(static_cast<Eigen::Index>(std::max<std::size_t>(rows, 1)), dims);
  all.setZero();
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto v = static_cast<Eigen::Index>(data.valid[i]);
    all.middleRows(r, v) = data.seqs[i].topRows(v);
    r += v;
  }
  return Normalizer::fit(all);
}

SequenceSet normalized(const SequenceSet& data, const Normalizer& norm) {
  SequenceSet out = data;
  for (std::size_t i = 0; i < out.size(); ++i) norm.apply_rows(out.seqs[i], out.valid[i]);
  return out;
}

struct SeqTask {
  const SequenceSet* data = nullptr;  // normalized
  std::vector<std::size_t> emotion;
  std::vector<std::size_t> language;  // empty → single task
  std::size_t num_classes = 0;
  std::size_t num_languages = 0;
  double lambda = 0.0;
};

double batch_loss(const LstmNet& net, const SeqTask& task, std::span<const std::size_t> idx,
                  LstmNet* grads) {
  const auto steps = static_cast<std::size_t>(task.data->seqs.front().rows());
  const Mat x = build_batch(*task.data, idx);
  NetForward f = net_forward(net, x, steps, idx.size());
  std::vector<std::size_t> ye(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) ye[j] = task.emotion[idx[j]];
  auto xe = nn::softmax_xent_batch(f.logits, ye);
  double loss = xe.loss;
  Mat d_lang;
  const bool use_lang = !task.language.empty() && task.lambda != 0.0;
  if (use_lang) {
    std::vector<std::size_t> yl(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) yl[j] = task.language[idx[j]];
    auto xl = nn::softmax_xent_batch(f.lang_logits, yl);
    loss += task.lambda * xl.loss;
    d_lang = task.lambda * xl.grad;
  }
  if (grads) {
    *grads = LstmNet::zeros_like(net);
    Mat d_final = tail_backward(net, f.final_hidden, f.pen_pre, f.pen_act, xe.grad,
                                use_lang ? &d_lang : nullptr, *grads);
    auto tg = nn::lstm_backward(net.trunk, f.trunk.cache, nn::final_state_gradient(d_final, steps));
    grads->trunk = std::move(tg.params);
  }
  return loss;
}

double dataset_loss(const LstmNet& net, const SeqTask& task, const std::vector<std::size_t>& idx,
                    std::size_t batch_size) {
  double total = 0.0;
  for (std::size_t s = 0; s < idx.size(); s += batch_size) {
    const std::size_t e = std::min(idx.size(), s + batch_size);
    std::span<const std::size_t> chunk(idx.data() + s, e - s);
    total += batch_loss(net, task, chunk, nullptr) * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(idx.size());
}

LstmNet init_net(std::size_t input, const LstmConfig& cfg, std::size_t classes,
                 std::size_t languages) {
  Rng rng(derive_seed(cfg.seed, 2));
  LstmNet net;
  net.trunk = nn::LstmStack::init(input, cfg.hidden, rng);
  std::size_t head_in = net.trunk.output_size();
  if (cfg.penultimate > 0) {
    net.penultimate = nn::DenseParams::init(head_in, cfg.penultimate, rng);
    head_in = cfg.penultimate;
  }
  net.head = nn::DenseParams::init(head_in, classes, rng);
  if (languages > 0) {
    Rng lang_rng(derive_seed(cfg.seed, 3));
    net.language_head = nn::DenseParams::init(net.trunk.output_size(), languages, lang_rng);
  }
  return net;
}

// Shared by train_lstm and train_multitask so that λ = 0 follows the
// single-task trajectory exactly.
LstmNet train_sequence_net(const SeqTask& task, const LstmConfig& cfg, TrainHistory* history) {
  const std::size_t n = task.data->size();
  const auto input = static_cast<std::size_t>(task.data->seqs.front().cols());
  if (cfg.batch_size == 0) throw Error(Errc::Config, "batch size must be positive");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng split_rng(derive_seed(cfg.seed, 1));
  split_rng.shuffle(order);
  auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * cfg.validation_fraction));
  if (n_val >= n) n_val = 0;
  std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());

  LstmNet net = init_net(input, cfg, task.num_classes, task.language.empty() ? 0 : task.num_languages);
  LstmNet best = net;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  nn::AdamState adam{cfg.adam, {}, {}, 0};
  std::size_t step = 0;
  TrainHistory local;
  TrainHistory& h = history ? *history : local;
  h = {};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto shuffled = train;
    Rng epoch_rng(derive_seed(cfg.seed, 100 + epoch));
    epoch_rng.shuffle(shuffled);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < shuffled.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(shuffled.size(), s + cfg.batch_size);
      LstmNet grads;
      const double loss = batch_loss(net, task, std::span(shuffled.data() + s, e - s), &grads);
      check_finite(loss, step);
      auto p = net.params();
      auto g = std::as_const(grads).params();
      nn::adam_step(p, g, adam);
      epoch_loss += loss;
      ++batches;
      ++step;
    }
    h.train_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
    if (val.empty()) continue;
    const double vl = dataset_loss(net, task, val, cfg.batch_size);
    check_finite(vl, step);
    h.val_loss.push_back(vl);
    if (vl < best_val) {
      best_val = vl;
      best = net;
      h.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (val.empty()) {
    best = net;
    h.best_epoch = cfg.epochs ? cfg.epochs - 1 : 0;
  }
  auto p = best.params();
  nn::round_to_f32(p);
  return best;
}

// ---- SVM (SMO with second-order working-set selection) -----------------------

}  // namespace

SvmDual solve_svm_dual(const Matrix& K, const std::vector<double>& y, double C, double tol,
                     std::size_t max_iter) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Vector alpha = Vector::Zero(n);
  Vector G = Vector::Constant(n, -1.0);
  constexpr double kTau = 1e-12;
  auto up = [&](Eigen::Index t) { return (y[t] > 0 && alpha(t) < C) || (y[t] < 0 && alpha(t) > 0); };
  auto low = [&](Eigen::Index t) { return (y[t] > 0 && alpha(t) > 0) || (y[t] < 0 && alpha(t) < C); };

  std::size_t iter = 0;
  for (;; ++iter) {
    double g_max = -std::numeric_limits<double>::infinity();
    Eigen::Index i = -1;
    for (Eigen::Index t = 0; t < n; ++t)
      if (up(t) && -y[t] * G(t) >= g_max) {
        if (-y[t] * G(t) > g_max || i < 0) i = t;
        g_max = -y[t] * G(t);
      }
    double g_min = std::numeric_limits<double>::infinity();
    Eigen::Index j = -1;
    double best_obj = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (!low(t)) continue;
      const double v = -y[t] * G(t);
      g_min = std::min(g_min, v);
      if (i >= 0 && v < g_max) {
        const double b = g_max - v;
        double a = K(i, i) + K(t, t) - 2.0 * K(i, t);
        if (a <= 0) a = kTau;
        const double obj = -(b * b) / a;
        if (obj < best_obj) {
          best_obj = obj;
          j = t;
        }
      }
    }
    if (i < 0 || j < 0 || g_max - g_min < tol) break;
    if (iter >= max_iter)
      throw Error(Errc::NoConvergence, "SMO did not converge within " + std::to_string(max_iter) +
                                           " iterations");

    const double old_ai = alpha(i), old_aj = alpha(j);
    const double yi = y[i], yj = y[j];
    double quad = K(i, i) + K(j, j) - 2.0 * K(i, j);
    if (quad <= 0) quad = kTau;
    if (yi != yj) {
      const double delta = (-G(i) - G(j)) / quad;
      const double diff = alpha(i) - alpha(j);
      alpha(i) += delta;
      alpha(j) += delta;
      if (diff > 0) {
        if (alpha(j) < 0) { alpha(j) = 0; alpha(i) = diff; }
      } else if (alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = -diff;
      }
      if (diff > 0) {
        if (alpha(i) > C) { alpha(i) = C; alpha(j) = C - diff; }
      } else if (alpha(j) > C) {
        alpha(j) = C;
        alpha(i) = C + diff;
      }
    } else {
      const double delta = (G(i) - G(j)) / quad;
      const double sum = alpha(i) + alpha(j);
      alpha(i) -= delta;
      alpha(j) += delta;
      if (sum > C) {
        if (alpha(i) > C) { alpha(i) = C; alpha(j) = sum - C; }
      } else if (alpha(j) < 0) {
        alpha(j) = 0;
        alpha(i) = sum;
      }
      if (sum > C) {
        if (alpha(j) > C) { alpha(j) = C; alpha(i) = sum - C; }
      } else if (alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = sum;
      }
    }
    const double dai = alpha(i) - old_ai, daj = alpha(j) - old_aj;
    for (Eigen::Index t = 0; t < n; ++t)
      G(t) += y[t] * (yi * K(t, i) * dai + yj * K(t, j) * daj);
  }

  // Bias: average over free vectors, otherwise the midpoint of the feasible range.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  std::size_t free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y[t] * G(t);
    const bool at_upper = alpha(t) >= C, at_lower = alpha(t) <= 0;
    if (at_upper) {
      if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (at_lower) {
      if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++free;
      sum_free += yg;
    }
  }
  const double rho = free > 0 ? sum_free / static_cast<double>(free) : (ub + lb) / 2.0;
  return {alpha, -rho, iter};
}

namespace {

double rbf(const Vector& a, const Vector& b, double gamma) { return std::exp(-gamma * (a - b).squaredNorm()); }

Matrix rbf_kernel(const Matrix& X, double gamma) {
  const Vector sq = X.rowwise().squaredNorm();
  Matrix K = X * X.transpose();
  for (Eigen::Index i = 0; i < K.rows(); ++i)
    for (Eigen::Index j = 0; j < K.cols(); ++j)
      K(i, j) = std::exp(-gamma * std::max(0.0, sq(i) + sq(j) - 2.0 * K(i, j)));
  return K;
}

Matrix normalized_is09_row(const EmotionModel& model, const FeatureInput& f) {
  if (!std::holds_alternative<Is09Vector>(f))
    throw Error(Errc::FeatureKindMismatch, "model expects is09 features");
  const auto& v = std::get<Is09Vector>(f).values;
  Matrix row(1, static_cast<Eigen::Index>(kIs09Dim));
  for (std::size_t i = 0; i < kIs09Dim; ++i) row(0, static_cast<Eigen::Index>(i)) = v[i];
  model.normalizer.apply_rows(row);
  return row;
}

SequenceSet sequences_for(FeatureKind kind, std::span<const FeatureInput> xs) {
  SequenceSet s;
  s.kind = kind;
  for (const auto& f : xs) {
    if (kind == FeatureKind::MfccSeq) {
      if (!std::holds_alternative<MfccSequence>(f))
        throw Error(Errc::FeatureKindMismatch, "model expects mfcc_seq features");
      const auto& m = std::get<MfccSequence>(f);
      s.seqs.push_back(m.matrix);
      s.valid.push_back(m.valid_frames);
    } else {
      if (!std::holds_alternative<Is09Vector>(f))
        throw Error(Errc::FeatureKindMismatch, "model expects is09 features");
      const auto& v = std::get<Is09Vector>(f).values;
      Matrix row(1, static_cast<Eigen::Index>(kIs09Dim));
      for (std::size_t i = 0; i < kIs09Dim; ++i) row(0, static_cast<Eigen::Index>(i)) = v[i];
      s.seqs.push_back(std::move(row));
      s.valid.push_back(1);
    }
  }
  return s;
}

constexpr std::size_t kInferenceBatch = 64;

struct NetOutputs {
  Mat probs;       // K × n
  Mat lang_probs;  // L × n (MTL only)
};

NetOutputs run_net(const LstmNet& net, const SequenceSet& data) {
  NetOutputs out;
  const auto n = static_cast<Eigen::Index>(data.size());
  out.probs.resize(net.head.W.rows(), n);
  if (net.language_head) out.lang_probs.resize(net.language_head->W.rows(), n);
  if (n == 0) return out;
  const auto steps = static_cast<std::size_t>(data.seqs.front().rows());
  std::vector<std::size_t> idx;
  for (Eigen::Index s = 0; s < n; s += static_cast<Eigen::Index>(kInferenceBatch)) {
    const Eigen::Index e = std::min<Eigen::Index>(n, s + static_cast<Eigen::Index>(kInferenceBatch));
    idx.clear();
    for (Eigen::Index i = s; i < e; ++i) idx.push_back(static_cast<std::size_t>(i));
    const Mat x = build_batch(data, idx);
    auto f = net_forward(net, x, steps, idx.size());
    out.probs.middleCols(s, e - s) = nn::softmax_columns(f.logits);
    if (net.language_head) out.lang_probs.middleCols(s, e - s) = nn::softmax_columns(f.lang_logits);
  }
  return out;
}

Prediction make_prediction(const std::vector<Emotion>& labels, const Vector& probs) {
  Prediction p;
  const std::size_t k = argmax(probs);
  p.emotion = labels.at(k);
  p.confidence = probs(static_cast<Eigen::Index>(k));
  p.probabilities = probs;
  return p;
}

}  // namespace

// ---- public ---------------------------------------------------------------------

std::vector<nn::Mat*> LstmNet::params() {
  auto out = trunk.params();
  if (penultimate)
    for (Mat* p : penultimate->params()) out.push_back(p);
  for (Mat* p : head.params()) out.push_back(p);
  if (language_head)
    for (Mat* p : language_head->params()) out.push_back(p);
  return out;
}

std::vector<const nn::Mat*> LstmNet::params() const {
  auto out = trunk.params();
  if (penultimate)
    for (const Mat* p : penultimate->params()) out.push_back(p);
  for (const Mat* p : head.params()) out.push_back(p);
  if (language_head)
    for (const Mat* p : language_head->params()) out.push_back(p);
  return out;
}

LstmNet LstmNet::zeros_like(const LstmNet& net) {
  LstmNet z;
  z.trunk = nn::LstmStack::zeros_like(net.trunk);
  if (net.penultimate) z.penultimate = nn::DenseParams::zeros_like(*net.penultimate);
  z.head = nn::DenseParams::zeros_like(net.head);
  if (net.language_head) z.language_head = nn::DenseParams::zeros_like(*net.language_head);
  return z;
}

Matrix stack_is09(std::span<const Is09Vector> xs) {
  Matrix X(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(kIs09Dim));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < kIs09Dim; ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xs[i].values[j];
  return X;
}

SequenceSet make_sequences(std::span<const MfccSequence> xs) {
  std::vector<FeatureInput> in(xs.begin(), xs.end());
  return sequences_for(FeatureKind::MfccSeq, in);
}

SequenceSet make_sequences(std::span<const Is09Vector> xs) {
  std::vector<FeatureInput> in(xs.begin(), xs.end());
  return sequences_for(FeatureKind::Is09, in);
}

EmotionModel train_logreg(const Matrix& X_raw, std::span<const Emotion> y, const LogRegConfig& cfg,
                          TrainHistory* history) {
  auto vocab = checked_vocabulary(y, static_cast<std::size_t>(X_raw.rows()));
  EmotionModel model;
  model.feature = FeatureKind::Is09;
  model.labels = vocab;
  model.normalizer = Normalizer::fit(X_raw);
  Matrix Xn = X_raw;
  model.normalizer.apply_rows(Xn);
  const Mat X = Xn.transpose();  // d × n
  const auto targets = class_indices(y, vocab);
  const auto K = static_cast<Eigen::Index>(vocab.size());
  const double n = static_cast<double>(targets.size());

  nn::DenseParams p{Mat::Zero(K, X.rows()), Mat::Zero(K, 1)};
  auto objective = [&](const nn::DenseParams& q, nn::DenseParams* grad) {
    auto xe = nn::softmax_xent_batch(nn::dense_forward(q, X), targets);
    const double loss = xe.loss + 0.5 * cfg.l2 * q.W.squaredNorm();
    if (grad) {
      *grad = nn::DenseParams::zeros_like(q);
      nn::dense_backward(q, X, xe.grad, *grad);
      grad->W += cfg.l2 * q.W;
    }
    return loss;
  };
  (void)n;

  nn::DenseParams g;
  double loss = objective(p, &g);
  TrainHistory local;
  TrainHistory& h = history ? *history : local;
  h = {};
  h.initial_loss = loss;
  double step = 1.0;
  std::size_t iter = 0;
  for (; iter < cfg.max_iter; ++iter) {
    const double gnorm2 = g.W.squaredNorm() + g.b.squaredNorm();
    if (std::sqrt(gnorm2) < cfg.grad_tol) break;
    step = std::min(step * 2.0, 1e4);
    nn::DenseParams trial;
    double trial_loss = 0.0;
    for (;;) {
      trial = {p.W - step * g.W, p.b - step * g.b};
      trial_loss = objective(trial, nullptr);
      if (trial_loss <= loss - 1e-4 * step * gnorm2 || step < 1e-14) break;
      step *= 0.5;
    }
    check_finite(trial_loss, iter);
    if (trial_loss > loss) break;  // no descent possible at machine precision
    p = std::move(trial);
    loss = objective(p, &g);
  }
  h.iterations = iter;
  h.final_loss = loss;
  auto params = p.params();
  nn::round_to_f32(params);
  model.params = LogRegParams{std::move(p)};
  return model;
}

EmotionModel train_svm_ovr(const Matrix& X_raw, std::span<const Emotion> y, const SvmConfig& cfg,
                           TrainHistory* history) {
  auto vocab = checked_vocabulary(y, static_cast<std::size_t>(X_raw.rows()));
  EmotionModel model;
  model.feature = FeatureKind::Is09;
  model.labels = vocab;
  model.normalizer = Normalizer::fit(X_raw);
  Matrix X = X_raw;
  model.normalizer.apply_rows(X);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = static_cast<float>(X.data()[i]);
  const auto targets = class_indices(y, vocab);

  SvmParams svm;
  svm.C = static_cast<float>(cfg.C);
  if (cfg.gamma) {
    svm.gamma = *cfg.gamma;
  } else {
    const double mean = X.mean();
    const double var = (X.array() - mean).square().mean();
    svm.gamma = 1.0 / (static_cast<double>(X.cols()) * (var > 0 ? var : 1.0));
  }
  const Matrix K = rbf_kernel(X, svm.gamma);
  const std::size_t max_iter = cfg.max_iter_per_sample * targets.size();
  std::size_t iterations = 0;
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    std::vector<double> yb(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) yb[i] = targets[i] == c ? 1.0 : -1.0;
    auto res = solve_svm_dual(K, yb, cfg.C, cfg.tol, max_iter);
    iterations += res.iterations;
    BinarySvm m;
    std::vector<Eigen::Index> sv;
    for (Eigen::Index i = 0; i < res.alpha.size(); ++i)
      if (res.alpha(i) > 0) sv.push_back(i);
    m.support.resize(static_cast<Eigen::Index>(sv.size()), X.cols());
    m.coef.resize(static_cast<Eigen::Index>(sv.size()));
    for (std::size_t k = 0; k < sv.size(); ++k) {
      const auto row = static_cast<Eigen::Index>(k);
      m.support.row(row) = X.row(sv[k]);
      m.coef(row) = static_cast<float>(res.alpha(sv[k]) * yb[static_cast<std::size_t>(sv[k])]);
    }
    m.bias = static_cast<float>(res.bias);
    svm.machines.push_back(std::move(m));
  }
  svm.gamma = static_cast<float>(svm.gamma);
  if (history) {
    *history = {};
    history->iterations = iterations;
  }
  model.params = std::move(svm);
  return model;
}

Vector svm_decision_values(const SvmParams& svm, const Vector& x) {
  Vector out(static_cast<Eigen::Index>(svm.machines.size()));
  for (std::size_t c = 0; c < svm.machines.size(); ++c) {
    const auto& m = svm.machines[c];
    double acc = m.bias;
    for (Eigen::Index i = 0; i < m.support.rows(); ++i)
      acc += m.coef(i) * rbf(m.support.row(i).transpose(), x, svm.gamma);
    out(static_cast<Eigen::Index>(c)) = acc;
  }
  return out;
}

EmotionModel train_lstm(const SequenceSet& data, std::span<const Emotion> y, const LstmConfig& cfg,
                        TrainHistory* history) {
  check_sequences(data);
  auto vocab = checked_vocabulary(y, data.size());
  EmotionModel model;
  model.feature = data.kind;
  model.labels = vocab;
  model.normalizer = fit_sequence_normalizer(data);
  const SequenceSet norm = normalized(data, model.normalizer);
  SeqTask task;
  task.data = &norm;
  task.emotion = class_indices(y, vocab);
  task.num_classes = vocab.size();
  model.params = train_sequence_net(task, cfg, history);
  return model;
}

EmotionModel finetune_frozen(const EmotionModel& base, const SequenceSet& data,
                             std::span<const Emotion> y, const FinetuneConfig& cfg,
                             TrainHistory* history) {
  if (base.variant() != ModelVariant::Lstm)
    throw Error(Errc::VariantMismatch, std::string("fine-tuning needs an lstm base, got ") +
                                           to_string(base.variant()));
  if (data.kind != base.feature)
    throw Error(Errc::FeatureKindMismatch, "fine-tuning data does not match the base feature kind");
  const auto& base_net = std::get<LstmNet>(base.params);
  if (!base_net.penultimate && !cfg.train_head)
    throw Error(Errc::VariantMismatch, "base model has no penultimate dense layer to fine-tune");
  check_sequences(data);
  if (y.size() != data.size()) throw Error(Errc::DimensionMismatch, "label count mismatch");

  EmotionModel model = base;
  TrainHistory local;
  TrainHistory& h = history ? *history : local;
  h = {};
  const auto targets = class_indices(y, base.labels);
  if (cfg.epochs == 0) return model;

  auto& net = std::get<LstmNet>(model.params);
  if (cfg.refit_normalizer) model.normalizer = fit_sequence_normalizer(data);
  const SequenceSet norm = normalized(data, model.normalizer);
  const auto steps = static_cast<std::size_t>(norm.seqs.front().rows());

  // The trunk is frozen, so its final states are computed once.
  const auto n = static_cast<Eigen::Index>(norm.size());
  Mat finals(static_cast<Eigen::Index>(net.trunk.output_size()), n);
  {
    std::vector<std::size_t> idx;
    for (Eigen::Index s = 0; s < n; s += static_cast<Eigen::Index>(kInferenceBatch)) {
      const Eigen::Index e = std::min<Eigen::Index>(n, s + static_cast<Eigen::Index>(kInferenceBatch));
      idx.clear();
      for (Eigen::Index i = s; i < e; ++i) idx.push_back(static_cast<std::size_t>(i));
      finals.middleCols(s, e - s) =
          nn::lstm_forward(net.trunk, build_batch(norm, idx), steps, idx.size()).final_hidden();
    }
  }

  std::vector<nn::Mat*> trainable;
  if (net.penultimate)
    for (Mat* p : net.penultimate->params()) trainable.push_back(p);
  if (cfg.train_head)
    for (Mat* p : net.head.params()) trainable.push_back(p);

  nn::AdamState adam{cfg.adam, {}, {}, 0};
  std::vector<std::size_t> order(targets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 200 + epoch));
    auto shuffled = order;
    rng.shuffle(shuffled);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < shuffled.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(shuffled.size(), s + cfg.batch_size);
      const auto b = static_cast<Eigen::Index>(e - s);
      Mat fin(finals.rows(), b);
      std::vector<std::size_t> yb(e - s);
      for (std::size_t j = s; j < e; ++j) {
        fin.col(static_cast<Eigen::Index>(j - s)) = finals.col(static_cast<Eigen::Index>(shuffled[j]));
        yb[j - s] = targets[shuffled[j]];
      }
      Mat pen_pre, pen_act, logits;
      if (net.penultimate) {
        pen_pre = nn::dense_forward(*net.penultimate, fin);
        pen_act = relu(pen_pre);
        logits = nn::dense_forward(net.head, pen_act);
      } else {
        logits = nn::dense_forward(net.head, fin);
      }
      auto xe = nn::softmax_xent_batch(logits, yb);
      check_finite(xe.loss, step);
      LstmNet grads;
      grads.head = nn::DenseParams::zeros_like(net.head);
      if (net.penultimate) grads.penultimate = nn::DenseParams::zeros_like(*net.penultimate);
      tail_backward(net, fin, pen_pre, pen_act, xe.grad, nullptr, grads);
      std::vector<const nn::Mat*> g;
      if (net.penultimate)
        for (const Mat* p : std::as_const(*grads.penultimate).params()) g.push_back(p);
      if (cfg.train_head)
        for (const Mat* p : std::as_const(grads.head).params()) g.push_back(p);
      nn::adam_step(trainable, g, adam);
      epoch_loss += xe.loss;
      ++batches;
      ++step;
    }
    h.train_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }
  h.best_epoch = cfg.epochs - 1;
  nn::round_to_f32(trainable);
  return model;
}

MtlModel train_multitask(const SequenceSet& data, std::span<const Emotion> y_emotion,
                         std::span<const std::string> y_language, const MtlConfig& cfg,
                         TrainHistory* history) {
  if (y_emotion.size() != y_language.size())
    throw Error(Errc::LabelMismatch, "emotion and language label vectors differ in length");
  if (y_emotion.empty()) throw Error(Errc::LabelMismatch, "no labels");
  if (cfg.lambda_lang < 0) throw Error(Errc::Config, "lambda_lang must be non-negative");
  check_sequences(data);
  auto vocab = checked_vocabulary(y_emotion, data.size());

  MtlModel model;
  model.feature = data.kind;
  model.labels = vocab;
  model.lambda_lang = cfg.lambda_lang;
  std::set<std::string> langs(y_language.begin(), y_language.end());
  model.languages.assign(langs.begin(), langs.end());
  if (model.languages.size() < 2)
    throw Error(Errc::SingleClass, "multi-task training needs at least two languages");
  model.normalizer = fit_sequence_normalizer(data);
  const SequenceSet norm = normalized(data, model.normalizer);

  SeqTask task;
  task.data = &norm;
  task.emotion = class_indices(y_emotion, vocab);
  task.num_classes = vocab.size();
  task.num_languages = model.languages.size();
  task.lambda = cfg.lambda_lang;
  task.language.resize(y_language.size());
  for (std::size_t i = 0; i < y_language.size(); ++i)
    task.language[i] = static_cast<std::size_t>(
        std::find(model.languages.begin(), model.languages.end(), y_language[i]) -
        model.languages.begin());
  model.net = train_sequence_net(task, cfg.lstm, history);
  return model;
}

std::vector<Prediction> predict_batch(const EmotionModel& model, std::span<const FeatureInput> xs) {
  std::vector<Prediction> out;
  out.reserve(xs.size());
  switch (model.variant()) {
    case ModelVariant::LogReg: {
      const auto& p = std::get<LogRegParams>(model.params).dense;
      for (const auto& f : xs) {
        const Matrix row = normalized_is09_row(model, f);
        const Mat logits = nn::dense_forward(p, row.transpose());
        out.push_back(make_prediction(model.labels, nn::softmax(logits.col(0))));
      }
      break;
    }
    case ModelVariant::SvmOvr: {
      const auto& svm = std::get<SvmParams>(model.params);
      for (const auto& f : xs) {
        const Matrix row = normalized_is09_row(model, f);
        const Vector dv = svm_decision_values(svm, row.row(0).transpose());
        Prediction p = make_prediction(model.labels, nn::softmax(dv));
        out.push_back(std::move(p));
      }
      break;
    }
    case ModelVariant::Lstm: {
      const SequenceSet seqs = normalized(sequences_for(model.feature, xs), model.normalizer);
      const auto res = run_net(std::get<LstmNet>(model.params), seqs);
      for (Eigen::Index i = 0; i < res.probs.cols(); ++i)
        out.push_back(make_prediction(model.labels, res.probs.col(i)));
      break;
    }
  }
  return out;
}

std::vector<Prediction> predict_batch(const MtlModel& model, std::span<const FeatureInput> xs) {
  const SequenceSet seqs = normalized(sequences_for(model.feature, xs), model.normalizer);
  const auto res = run_net(model.net, seqs);
  std::vector<Prediction> out;
  for (Eigen::Index i = 0; i < res.probs.cols(); ++i) {
    Prediction p = make_prediction(model.labels, res.probs.col(i));
    const Vector lp = res.lang_probs.col(i);
    const std::size_t k = argmax(lp);
    p.language = model.languages.at(k);
    p.language_confidence = lp(static_cast<Eigen::Index>(k));
    out.push_back(std::move(p));
  }
  return out;
}

Prediction predict(const EmotionModel& model, const FeatureInput& features) {
  return predict_batch(model, std::span(&features, 1)).front();
}

Prediction predict(const MtlModel& model, const FeatureInput& features) {
  return predict_batch(model, std::span(&features, 1)).front();
}

}  // namespace ser
