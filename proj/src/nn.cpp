#include "wtcf/nn.hpp"

#include <cmath>

#include "wtcf/common.hpp"

namespace wtcf {

Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng) {
  const double bound = kaiming_bound(fan_in);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor xavier_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const double bound = xavier_bound(fan_in, fan_out);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<Param>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params[i].tensor.size()), 0.0);
      v_[i].assign(static_cast<std::size_t>(params[i].tensor.size()), 0.0);
    }
  }
  if (m_.size() != params.size())
    throw usage_error("adam: parameter list changed size mid-training");

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].tensor.grad();
    auto w = params[i].tensor.raw();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = g[j];
      if (!std::isfinite(gj))
        throw numeric_error("adam: non-finite gradient in parameter '" + params[i].name + "'");
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in, int out, bool relu_fed, Rng& rng) {
  weight = relu_fed ? kaiming_uniform({in, out}, in, rng) : xavier_uniform({in, out}, in, out, rng);
  bias = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x, FusedAct act) const {
  return linear(x, weight, bias, act);
}

void Linear::collect(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

// ---------------------------------------------------------------------------
// Conv1d

Conv1d::Conv1d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng)
    : stride(stride), padding(padding) {
  weight = kaiming_uniform({out_channels, in_channels, kernel}, in_channels * kernel, rng);
  bias = Tensor::zeros({out_channels}, true);
}

Tensor Conv1d::forward(const Tensor& x, FusedAct act) const {
  return conv1d(x, weight, bias, stride, padding, act);
}

void Conv1d::collect(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm::LayerNorm(int features) {
  gain = Tensor::full({features}, 1.0, true);
  shift = Tensor::zeros({features}, true);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, shift, eps); }

void LayerNorm::collect(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".shift", shift});
}

// ---------------------------------------------------------------------------
// MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(int d_model, int heads, Rng& rng) : heads(heads) {
  if (heads < 1 || d_model % heads != 0)
    throw usage_error("attention: d_model " + std::to_string(d_model) +
                      " not divisible by heads " + std::to_string(heads));
  wq = xavier_uniform({d_model, d_model}, d_model, d_model, rng);
  wk = xavier_uniform({d_model, d_model}, d_model, d_model, rng);
  wv = xavier_uniform({d_model, d_model}, d_model, d_model, rng);
  wo = xavier_uniform({d_model, d_model}, d_model, d_model, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& x) const {
  const int d_model = x.shape().back();
  const int dk = d_model / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  // head-major batching: every head's attention runs in one batched op
  Tensor q = split_heads(matmul(x, wq), heads);  // [B*h, T, dk]
  Tensor k = split_heads(matmul(x, wk), heads);
  Tensor v = split_heads(matmul(x, wv), heads);
  Tensor weights = softmax_lastdim(matmul_nt(q, k), inv_sqrt_dk);  // [B*h, T, T]
  Tensor merged = merge_heads(matmul(weights, v), heads);                 // [B, T, d_model]
  return matmul(merged, wo);
}

void MultiHeadAttention::collect(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".wk", wk});
  out.push_back({prefix + ".wv", wv});
  out.push_back({prefix + ".wo", wo});
}

// ---------------------------------------------------------------------------
// FeedForward

FeedForward::FeedForward(int d_model, int d_ff, Rng& rng)
    : lift(d_model, d_ff, true, rng), project(d_ff, d_model, true, rng) {}

Tensor FeedForward::forward(const Tensor& x) const {
  return project.forward(lift.forward(x, FusedAct::relu));
}

void FeedForward::collect(const std::string& prefix, std::vector<Param>& out) {
  lift.collect(prefix + ".lift", out);
  project.collect(prefix + ".project", out);
}

// ---------------------------------------------------------------------------
// EncoderLayer

EncoderLayer::EncoderLayer(int d_model, int heads, int d_ff, double dropout_rate, Rng& rng)
    : attention(d_model, heads, rng),
      norm_attention(d_model),
      ffn(d_model, d_ff, rng),
      norm_ffn(d_model),
      dropout_rate(dropout_rate) {}

Tensor EncoderLayer::forward(const Tensor& x, Mode mode, Rng& rng) const {
  const bool train = mode == Mode::train;
  Tensor attended = dropout(attention.forward(x), dropout_rate, train, rng);
  Tensor normed = norm_attention.forward(add(x, attended));
  Tensor ff = dropout(ffn.forward(normed), dropout_rate, train, rng);
  return norm_ffn.forward(add(normed, ff));
}

void EncoderLayer::collect(const std::string& prefix, std::vector<Param>& out) {
  attention.collect(prefix + ".attention", out);
  norm_attention.collect(prefix + ".norm_attention", out);
  ffn.collect(prefix + ".ffn", out);
  norm_ffn.collect(prefix + ".norm_ffn", out);
}

// ---------------------------------------------------------------------------
// ClassifierHead

ClassifierHead::ClassifierHead(int d_model, int d_hidden, Rng& rng)
    : hidden(d_model, d_hidden, true, rng), logit(d_hidden, 1, true, rng) {}

Tensor ClassifierHead::forward(const Tensor& x) const {
  return sigmoid(logit.forward(hidden.forward(x, FusedAct::relu)));
}

void ClassifierHead::collect(const std::string& prefix, std::vector<Param>& out) {
  hidden.collect(prefix + ".hidden", out);
  logit.collect(prefix + ".logit", out);
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3)
    throw usage_error("global_avg_pool: expected [batch, time, features], got " +
                      shape_str(x.shape()));
  return mean_axis(x, 1);
}

Tensor sinusoidal_positions(int t, int d) {
  std::vector<double> v(static_cast<std::size_t>(t) * d);
  for (int pos = 0; pos < t; ++pos)
    for (int i = 0; i < d; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
      v[static_cast<std::size_t>(pos) * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor({t, d}, std::move(v));
}

}  // namespace wtcf
