#pragma once

// Dense and LSTM layers with exact backpropagation through time, softmax
// cross-entropy, Adam, and a central-difference gradient checker. Everything
// runs in f64; batches are laid out column-wise (one column per example,
// sequence step t of example b in column t·B + b).

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ser/rng.hpp"

namespace ser::nn {

using Mat = Eigen::MatrixXd;

enum class Gate : int { Input = 0, Forget = 1, Cell = 2, Output = 3 };

// Gate blocks are stacked row-wise in Gate order: rows [g·H, (g+1)·H).
struct LstmLayerParams {
  Mat W;  // 4H × I
  Mat U;  // 4H × H
  Mat b;  // 4H × 1

  std::size_t hidden_size() const { return static_cast<std::size_t>(U.cols()); }
  std::size_t input_size() const { return static_cast<std::size_t>(W.cols()); }

  auto gate_W(Gate g) { return W.middleRows(static_cast<int>(g) * U.cols(), U.cols()); }
  auto gate_U(Gate g) { return U.middleRows(static_cast<int>(g) * U.cols(), U.cols()); }
  auto gate_b(Gate g) { return b.middleRows(static_cast<int>(g) * U.cols(), U.cols()); }

  // W ~ U(±1/√input), U ~ U(±1/√hidden), biases zero except forget = 1.
  static LstmLayerParams init(std::size_t input, std::size_t hidden, Rng& rng);
  static LstmLayerParams zeros_like(const LstmLayerParams& p);

  std::vector<Mat*> params() { return {&W, &U, &b}; }
  std::vector<const Mat*> params() const { return {&W, &U, &b}; }
};

struct DenseParams {
  Mat W;  // out × in
  Mat b;  // out × 1

  std::size_t in_size() const { return static_cast<std::size_t>(W.cols()); }
  std::size_t out_size() const { return static_cast<std::size_t>(W.rows()); }

  static DenseParams init(std::size_t in, std::size_t out, Rng& rng);
  static DenseParams zeros_like(const DenseParams& p);

  std::vector<Mat*> params() { return {&W, &b}; }
  std::vector<const Mat*> params() const { return {&W, &b}; }
};

struct LstmStack {
  std::vector<LstmLayerParams> layers;

  std::size_t input_size() const { return layers.front().input_size(); }
  std::size_t output_size() const { return layers.back().hidden_size(); }

  static LstmStack init(std::size_t input, const std::vector<std::size_t>& hidden, Rng& rng);
  static LstmStack zeros_like(const LstmStack& s);

  std::vector<Mat*> params();
  std::vector<const Mat*> params() const;
};

struct LstmLayerCache {
  Mat input;   // I × TB
  Mat gates;   // 4H × TB, post-activation
  Mat cell;    // H × TB
  Mat tanh_cell;
  Mat hidden;  // H × TB
};

struct LstmCache {
  std::vector<LstmLayerCache> layers;
  std::size_t steps = 0;
  std::size_t batch = 0;
};

struct LstmOutput {
  LstmCache cache;
  const Mat& hidden() const { return cache.layers.back().hidden; }  // H × TB
  Mat final_hidden() const;                                          // H × B
};

// Zero initial hidden and cell state for every layer.
LstmOutput lstm_forward(const LstmStack& stack, const Mat& x, std::size_t steps,
                        std::size_t batch);

struct LstmGrads {
  LstmStack params;  // same shapes as the stack
  Mat input;         // I × TB
};

// d_hidden is the loss gradient w.r.t. the top layer's hidden states (H × TB).
LstmGrads lstm_backward(const LstmStack& stack, const LstmCache& cache, const Mat& d_hidden);

// Spreads a gradient on the final hidden state (H × B) into an H × TB matrix.
Mat final_state_gradient(const Mat& d_final, std::size_t steps);

Mat dense_forward(const DenseParams& p, const Mat& x);
// Accumulates parameter gradients into `grads`, returns d_input.
Mat dense_backward(const DenseParams& p, const Mat& x, const Mat& d_out, DenseParams& grads);

struct XentResult {
  double loss = 0.0;
  Eigen::VectorXd grad;  // w.r.t. logits
};

// Stable log-sum-exp; loss = −log p[target], grad = p − onehot(target).
XentResult softmax_xent(const Eigen::VectorXd& logits, std::size_t target);
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
Mat softmax_columns(const Mat& logits);

struct BatchXent {
  double loss = 0.0;  // mean over the batch
  Mat grad;           // (p − onehot)/B
};
BatchXent softmax_xent_batch(const Mat& logits, std::span<const std::size_t> targets);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Mat> m;
  std::vector<Mat> v;
  std::uint64_t step = 0;
};

// Standard bias-corrected Adam. Moment buffers are allocated on first use.
void adam_step(std::span<Mat* const> params, std::span<const Mat* const> grads, AdamState& state);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Eigen::Index worst_index = 0;
  std::size_t checked = 0;
};

// Compares analytic gradients against central differences of `loss`.
// rel = |a − n| / max(|a|, |n|, 1e-6). max_coords_per_param = 0 checks every
// coordinate, otherwise a seeded sample of that many per parameter.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<Mat* const> params,
                           std::span<const Mat> analytic, double eps = 1e-5,
                           std::size_t max_coords_per_param = 0, std::uint64_t seed = 0);

// Every parameter rounded through f32, the precision models are stored at.
void round_to_f32(std::span<Mat* const> params);

}  // namespace ser::nn
