#include "ser/nn.hpp"

#include <algorithm>
#include <cmath>

#include "ser/error.hpp"

namespace ser::nn {

namespace {

void fill_uniform(Mat& m, double scale, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-scale, scale);
}

Mat sigmoid(const Mat& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

}  // namespace

LstmLayerParams LstmLayerParams::init(std::size_t input, std::size_t hidden, Rng& rng) {
  const auto h = static_cast<Eigen::Index>(hidden);
  LstmLayerParams p;
  p.W.resize(4 * h, static_cast<Eigen::Index>(input));
  p.U.resize(4 * h, h);
  fill_uniform(p.W, 1.0 / std::sqrt(static_cast<double>(input)), rng);
  fill_uniform(p.U, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  p.b = Mat::Zero(4 * h, 1);
  p.gate_b(Gate::Forget).setConstant(1.0);
  return p;
}

LstmLayerParams LstmLayerParams::zeros_like(const LstmLayerParams& p) {
  return {Mat::Zero(p.W.rows(), p.W.cols()), Mat::Zero(p.U.rows(), p.U.cols()),
          Mat::Zero(p.b.rows(), 1)};
}

DenseParams DenseParams::init(std::size_t in, std::size_t out, Rng& rng) {
  DenseParams p;
  p.W.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  fill_uniform(p.W, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  p.b = Mat::Zero(static_cast<Eigen::Index>(out), 1);
  return p;
}

DenseParams DenseParams::zeros_like(const DenseParams& p) {
  return {Mat::Zero(p.W.rows(), p.W.cols()), Mat::Zero(p.b.rows(), 1)};
}

LstmStack LstmStack::init(std::size_t input, const std::vector<std::size_t>& hidden, Rng& rng) {
  if (hidden.empty()) throw Error(Errc::ShapeMismatch, "LSTM stack needs at least one layer");
  LstmStack s;
  std::size_t in = input;
  for (std::size_t h : hidden) {
    s.layers.push_back(LstmLayerParams::init(in, h, rng));
    in = h;
  }
  return s;
}

LstmStack LstmStack::zeros_like(const LstmStack& s) {
  LstmStack z;
  for (const auto& l : s.layers) z.layers.push_back(LstmLayerParams::zeros_like(l));
  return z;
}

std::vector<Mat*> LstmStack::params() {
  std::vector<Mat*> out;
  for (auto& l : layers)
    for (Mat* p : l.params()) out.push_back(p);
  return out;
}

std::vector<const Mat*> LstmStack::params() const {
  std::vector<const Mat*> out;
  for (const auto& l : layers)
    for (const Mat* p : l.params()) out.push_back(p);
  return out;
}

Mat LstmOutput::final_hidden() const {
  const Mat& h = hidden();
  const auto b = static_cast<Eigen::Index>(cache.batch);
  return h.rightCols(b);
}

LstmOutput lstm_forward(const LstmStack& stack, const Mat& x, std::size_t steps,
                        std::size_t batch) {
  if (stack.layers.empty()) throw Error(Errc::ShapeMismatch, "empty LSTM stack");
  if (steps == 0 || batch == 0) throw Error(Errc::ShapeMismatch, "empty sequence batch");
  const auto tb = static_cast<Eigen::Index>(steps * batch);
  const auto b = static_cast<Eigen::Index>(batch);
  if (x.cols() != tb || x.rows() != static_cast<Eigen::Index>(stack.input_size()))
    throw Error(Errc::ShapeMismatch, "LSTM input is " + std::to_string(x.rows()) + "x" +
                                         std::to_string(x.cols()) + ", expected " +
                                         std::to_string(stack.input_size()) + "x" +
                                         std::to_string(tb));
  LstmOutput out;
  out.cache.steps = steps;
  out.cache.batch = batch;
  const Mat* input = &x;
  for (const auto& layer : stack.layers) {
    const auto h = static_cast<Eigen::Index>(layer.hidden_size());
    LstmLayerCache c;
    c.input = *input;
    c.gates = layer.W * c.input;
    c.gates.colwise() += layer.b.col(0);
    c.cell.resize(h, tb);
    c.tanh_cell.resize(h, tb);
    c.hidden.resize(h, tb);
    for (std::size_t t = 0; t < steps; ++t) {
      const auto col = static_cast<Eigen::Index>(t) * b;
      auto z = c.gates.middleCols(col, b);
      if (t > 0) z.noalias() += layer.U * c.hidden.middleCols(col - b, b);
      z.topRows(2 * h) = sigmoid(z.topRows(2 * h));
      z.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh().matrix();
      z.bottomRows(h) = sigmoid(z.bottomRows(h));
      auto cell = c.cell.middleCols(col, b);
      cell = z.topRows(h).cwiseProduct(z.middleRows(2 * h, h));
      if (t > 0) cell += z.middleRows(h, h).cwiseProduct(c.cell.middleCols(col - b, b));
      c.tanh_cell.middleCols(col, b) = cell.array().tanh().matrix();
      c.hidden.middleCols(col, b) = z.bottomRows(h).cwiseProduct(c.tanh_cell.middleCols(col, b));
    }
    out.cache.layers.push_back(std::move(c));
    input = &out.cache.layers.back().hidden;
  }
  return out;
}

LstmGrads lstm_backward(const LstmStack& stack, const LstmCache& cache, const Mat& d_hidden) {
  if (cache.layers.size() != stack.layers.size())
    throw Error(Errc::ShapeMismatch, "cache does not match the LSTM stack");
  const auto b = static_cast<Eigen::Index>(cache.batch);
  const auto tb = static_cast<Eigen::Index>(cache.steps * cache.batch);
  const Mat& top = cache.layers.back().hidden;
  if (d_hidden.rows() != top.rows() || d_hidden.cols() != tb)
    throw Error(Errc::ShapeMismatch, "upstream gradient shape mismatch");

  LstmGrads grads;
  grads.params = LstmStack::zeros_like(stack);
  Mat d_above = d_hidden;
  for (std::size_t li = stack.layers.size(); li-- > 0;) {
    const auto& layer = stack.layers[li];
    const auto& c = cache.layers[li];
    const auto h = static_cast<Eigen::Index>(layer.hidden_size());
    Mat dz(4 * h, tb);
    Mat dh_next = Mat::Zero(h, b);
    Mat dc_next = Mat::Zero(h, b);
    for (std::size_t step = cache.steps; step-- > 0;) {
      const auto col = static_cast<Eigen::Index>(step) * b;
      const auto g = c.gates.middleCols(col, b);
      const auto i_g = g.topRows(h).array();
      const auto f_g = g.middleRows(h, h).array();
      const auto c_g = g.middleRows(2 * h, h).array();
      const auto o_g = g.bottomRows(h).array();
      const auto tc = c.tanh_cell.middleCols(col, b).array();

      const Mat dh = d_above.middleCols(col, b) + dh_next;
      const auto dha = dh.array();
      Mat dc = (dha * o_g * (1.0 - tc * tc)).matrix() + dc_next;
      const auto dca = dc.array();

      auto dzt = dz.middleCols(col, b);
      dzt.topRows(h) = (dca * c_g * i_g * (1.0 - i_g)).matrix();
      if (step > 0)
        dzt.middleRows(h, h) =
            (dca * c.cell.middleCols(col - b, b).array() * f_g * (1.0 - f_g)).matrix();
      else
        dzt.middleRows(h, h).setZero();
      dzt.middleRows(2 * h, h) = (dca * i_g * (1.0 - c_g * c_g)).matrix();
      dzt.bottomRows(h) = (dha * tc * o_g * (1.0 - o_g)).matrix();

      dh_next.noalias() = layer.U.transpose() * dzt;
      dc_next = (dca * f_g).matrix();
    }
    auto& gp = grads.params.layers[li];
    gp.W.noalias() = dz * c.input.transpose();
    if (cache.steps > 1)
      gp.U.noalias() = dz.rightCols(tb - b) * c.hidden.leftCols(tb - b).transpose();
    gp.b = dz.rowwise().sum();
    Mat d_input = layer.W.transpose() * dz;
    if (li == 0) grads.input = std::move(d_input);
    else d_above = std::move(d_input);
  }
  return grads;
}

Mat final_state_gradient(const Mat& d_final, std::size_t steps) {
  const auto b = d_final.cols();
  Mat d = Mat::Zero(d_final.rows(), b * static_cast<Eigen::Index>(steps));
  d.rightCols(b) = d_final;
  return d;
}

Mat dense_forward(const DenseParams& p, const Mat& x) {
  if (x.rows() != p.W.cols()) throw Error(Errc::ShapeMismatch, "dense input size mismatch");
  Mat y = p.W * x;
  y.colwise() += p.b.col(0);
  return y;
}

Mat dense_backward(const DenseParams& p, const Mat& x, const Mat& d_out, DenseParams& grads) {
  grads.W.noalias() += d_out * x.transpose();
  grads.b += d_out.rowwise().sum();
  return p.W.transpose() * d_out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

Mat softmax_columns(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) p.col(j) = softmax(logits.col(j));
  return p;
}

XentResult softmax_xent(const Eigen::VectorXd& logits, std::size_t target) {
  if (logits.size() < 2) throw Error(Errc::ShapeMismatch, "softmax needs at least 2 classes");
  if (target >= static_cast<std::size_t>(logits.size()))
    throw Error(Errc::BadTarget, "target " + std::to_string(target) + " out of range for " +
                                     std::to_string(logits.size()) + " classes");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  XentResult r;
  r.loss = lse - logits(static_cast<Eigen::Index>(target));
  r.grad = (logits.array() - lse).exp().matrix();
  r.grad(static_cast<Eigen::Index>(target)) -= 1.0;
  return r;
}

BatchXent softmax_xent_batch(const Mat& logits, std::span<const std::size_t> targets) {
  if (static_cast<std::size_t>(logits.cols()) != targets.size())
    throw Error(Errc::ShapeMismatch, "logit columns and targets differ in count");
  BatchXent out;
  out.grad.resize(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(targets.size());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    auto r = softmax_xent(logits.col(j), targets[static_cast<std::size_t>(j)]);
    out.loss += r.loss;
    out.grad.col(j) = r.grad * inv;
  }
  out.loss *= inv;
  return out;
}

void adam_step(std::span<Mat* const> params, std::span<const Mat* const> grads, AdamState& s) {
  if (params.size() != grads.size())
    throw Error(Errc::ShapeMismatch, "parameter and gradient lists differ in length");
  if (s.m.empty()) {
    for (const Mat* p : params) {
      s.m.push_back(Mat::Zero(p->rows(), p->cols()));
      s.v.push_back(Mat::Zero(p->rows(), p->cols()));
    }
  }
  if (s.m.size() != params.size()) throw Error(Errc::ShapeMismatch, "Adam state size mismatch");
  ++s.step;
  const auto& c = s.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Mat& p = *params[k];
    const Mat& g = *grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols() || s.m[k].rows() != p.rows() ||
        s.m[k].cols() != p.cols())
      throw Error(Errc::ShapeMismatch, "Adam parameter/gradient shape mismatch");
    s.m[k] = c.beta1 * s.m[k] + (1.0 - c.beta1) * g;
    s.v[k] = c.beta2 * s.v[k] + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= c.lr * (s.m[k].array() / bc1) / ((s.v[k].array() / bc2).sqrt() + c.eps);
  }
}

GradCheckResult grad_check(const std::function<double()>& loss, std::span<Mat* const> params,
                           std::span<const Mat> analytic, double eps,
                           std::size_t max_coords_per_param, std::uint64_t seed) {
  if (params.size() != analytic.size())
    throw Error(Errc::ShapeMismatch, "parameter and gradient lists differ in length");
  GradCheckResult res;
  Rng rng(seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Mat& p = *params[k];
    const Mat& a = analytic[k];
    if (a.size() != p.size()) throw Error(Errc::ShapeMismatch, "gradient shape mismatch");
    std::vector<Eigen::Index> coords;
    if (max_coords_per_param == 0 || static_cast<std::size_t>(p.size()) <= max_coords_per_param) {
      for (Eigen::Index i = 0; i < p.size(); ++i) coords.push_back(i);
    } else {
      for (std::size_t s = 0; s < max_coords_per_param; ++s)
        coords.push_back(static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(p.size()))));
    }
    for (Eigen::Index i : coords) {
      double& x = p.data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = loss();
      x = saved - eps;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double an = a.data()[i];
      const double rel =
          std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), 1e-6});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = k;
        res.worst_index = i;
      }
    }
  }
  return res;
}

void round_to_f32(std::span<Mat* const> params) {
  for (Mat* p : params)
    for (Eigen::Index i = 0; i < p->size(); ++i)
      p->data()[i] = static_cast<double>(static_cast<float>(p->data()[i]));
}

}  // namespace ser::nn
