#pragma once

#include <string>
#include <vector>

#include "wtcf/rng.hpp"
#include "wtcf/tensor.hpp"

namespace wtcf {

enum class Mode { train, eval };
enum class Activation { relu, tanh };

// Parameter initialization. Kaiming-uniform feeds ReLU stacks, Xavier-uniform
// the attention projections; both bounds use the fan convention below.
Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng);
Tensor xavier_uniform(Shape shape, int fan_in, int fan_out, Rng& rng);

inline double kaiming_bound(int fan_in) { return std::sqrt(6.0 / fan_in); }
inline double xavier_bound(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

// Named trainable tensor; the model registry orders these deterministically
// for the optimizer and the weight file.
struct Param {
  std::string name;
  Tensor tensor;
};

// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  explicit Adam(double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // One update from the gradients currently stored on the parameters.
  // Grad NaN/Inf aborts with a numeric error naming the parameter.
  void step(std::vector<Param>& params);

  std::int64_t steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Layers. Each owns its parameters and appends them to a registry with
// hierarchical names; forward builds onto the active graph.

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(int in, int out, bool relu_fed, Rng& rng);
  Tensor forward(const Tensor& x, FusedAct act = FusedAct::none) const;  // x [..., in]
  void collect(const std::string& prefix, std::vector<Param>& out);
};

struct Conv1d {
  Tensor weight;  // [out, in, kernel]
  Tensor bias;    // [out]
  int stride = 1;
  int padding = 0;

  Conv1d() = default;
  Conv1d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng);
  Tensor forward(const Tensor& x, FusedAct act = FusedAct::none) const;  // x [B, in, L]
  void collect(const std::string& prefix, std::vector<Param>& out);
};

struct LayerNorm {
  Tensor gain;   // ones
  Tensor shift;  // zeros
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int features);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<Param>& out);
};

// Multi-head scaled dot-product self-attention, encoder style (no mask).
// Projections are plain matrices without biases.
struct MultiHeadAttention {
  Tensor wq, wk, wv, wo;  // [d_model, d_model]
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(int d_model, int heads, Rng& rng);
  Tensor forward(const Tensor& x) const;  // x [B, T, d_model]
  void collect(const std::string& prefix, std::vector<Param>& out);
};

// Position-wise feed-forward: ReLU(x W1 + b1) W2 + b2.
struct FeedForward {
  Linear lift;     // d_model -> d_ff
  Linear project;  // d_ff -> d_model

  FeedForward() = default;
  FeedForward(int d_model, int d_ff, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<Param>& out);
};

// Post-norm residual encoder block: both sublayers apply dropout to the
// sublayer output before the residual add, then normalize.
struct EncoderLayer {
  MultiHeadAttention attention;
  LayerNorm norm_attention;
  FeedForward ffn;
  LayerNorm norm_ffn;
  double dropout_rate = 0.1;

  EncoderLayer() = default;
  EncoderLayer(int d_model, int heads, int d_ff, double dropout_rate, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) const;
  void collect(const std::string& prefix, std::vector<Param>& out);
};

// Two fully connected layers ending in a sigmoid probability.
struct ClassifierHead {
  Linear hidden;  // d_model -> d_hidden, ReLU
  Linear logit;   // d_hidden -> 1

  ClassifierHead() = default;
  ClassifierHead(int d_model, int d_hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;  // [B, d_model] -> [B, 1] in (0,1)
  void collect(const std::string& prefix, std::vector<Param>& out);
};

// Mean over the time axis of [B, T, d] -> [B, d].
Tensor global_avg_pool(const Tensor& x);

// Sinusoidal position table [T, d], added to encoder input when enabled.
Tensor sinusoidal_positions(int t, int d);

}  // namespace wtcf
