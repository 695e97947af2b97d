#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wtcf/common.hpp"
#include "wtcf/rng.hpp"

namespace wtcf {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// Flat double buffer without value-initialization on resize; op outputs are
// always fully written, so zeroing them first would only burn memory
// bandwidth. Gradients are zeroed explicitly where required.
class Buffer {
 public:
  Buffer() = default;
  explicit Buffer(std::size_t n) { resize_uninit(n); }
  Buffer(const Buffer& o) { *this = o; }
  Buffer(Buffer&&) noexcept = default;
  Buffer& operator=(const Buffer& o) {
    resize_uninit(o.n_);
    std::copy(o.begin(), o.end(), p_.get());
    return *this;
  }
  Buffer& operator=(Buffer&&) noexcept = default;

  void resize_uninit(std::size_t n) {
    if (n != n_) {
      p_ = std::make_unique_for_overwrite<double[]>(n);
      n_ = n;
    }
  }
  void assign_zero(std::size_t n) {
    resize_uninit(n);
    std::fill(p_.get(), p_.get() + n_, 0.0);
  }

  double* data() { return p_.get(); }
  const double* data() const { return p_.get(); }
  std::size_t size() const { return n_; }
  bool empty() const { return n_ == 0; }
  double& operator[](std::size_t i) { return p_[i]; }
  double operator[](std::size_t i) const { return p_[i]; }
  double* begin() { return p_.get(); }
  double* end() { return p_.get() + n_; }
  const double* begin() const { return p_.get(); }
  const double* end() const { return p_.get() + n_; }

 private:
  std::unique_ptr<double[]> p_;
  std::size_t n_ = 0;
};

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // allocated lazily
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // deposits this node's grad into parents

  void ensure_grad() {
    if (grad.empty()) grad.assign_zero(value.size());
  }
};

}  // namespace detail

// Dense row-major 64-bit tensor participating in reverse-mode
// differentiation. Value-like handle: copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(n_->value.size()); }

  // Spans borrow from the node; binding them off an rvalue would dangle.
  std::span<const double> data() const& { return {n_->value.data(), n_->value.size()}; }
  std::span<const double> data() const&& = delete;
  // Mutable value access for optimizer updates; bypasses the graph.
  std::span<double> raw() & { return {n_->value.data(), n_->value.size()}; }
  std::span<double> raw() && = delete;

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool v) { n_->requires_grad = v; }
  std::span<const double> grad() const&;
  std::span<const double> grad() const&& = delete;
  std::span<double> grad_raw() &;
  std::span<double> grad_raw() && = delete;
  void zero_grad();

  // Reverse-mode sweep from a scalar result through the recorded graph.
  void backward() const;

  double item() const;

  // Internal graph handle; ops and serialization use it.
  const std::shared_ptr<detail::Node>& node() const { return n_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> n_;
};

// Graph recording is on by default; suppressed inside a NoGradGuard scope
// (inference paths build no graph and keep no parent references).
bool autograd_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Optional activation fused into the producing op; derivatives are taken
// from the op's stored output.
enum class FusedAct { none, relu, tanh };

// Primitive differentiable ops. Shape rules throw a dimension error naming
// the op and offending shapes.
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]; [B,m,k]x[k,n]; [B,m,k]x[B,k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // contracts last axes: [B,m,k]x[B,n,k]
Tensor transpose_last2(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // broadcast over last axis
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);
Tensor mean_all(const Tensor& x);
// softmax(prescale * x) over the last axis; the prescale overload exists so
// attention's 1/sqrt(dk) does not need its own pass over the scores.
Tensor softmax_lastdim(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x, double prescale);

// act(x W + b) in one node; bias may be an empty tensor for none.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias,
              FusedAct act = FusedAct::none);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps);
Tensor reshape(const Tensor& x, Shape target);
Tensor slice_lastdim(const Tensor& x, int from, int to);
Tensor concat_lastdim(const std::vector<Tensor>& parts);

// Head-major regrouping for attention: [B,T,h*dk] <-> [B*h,T,dk]. Equivalent
// to slicing the feature axis into h parts (split) or concatenating them back
// (merge), batched in one pass.
Tensor split_heads(const Tensor& x, int heads);
Tensor merge_heads(const Tensor& x, int heads);

// x [B,Cin,L], w [Cout,Cin,K], bias [Cout]; zero padding, cross-correlation.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
              FusedAct act = FusedAct::none);
// x [B,C,L]; gradient routes to the argmax (ties -> lowest index).
Tensor maxpool1d(const Tensor& x, int kernel, int stride);

// Channel-last twins used on the model's hot path: activations laid out as
// [B, L, C], which makes the im2col/col2im transforms contiguous. Same math
// as conv1d/maxpool1d up to the layout permutation.
Tensor conv1d_cl(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
                 FusedAct act = FusedAct::none);
Tensor maxpool1d_cl(const Tensor& x, int kernel, int stride);

// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); eval mode is the identity.
Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng);

// Mean over the batch of -[pos_weight*y*ln p + (1-y)*ln(1-p)] with p clamped
// 1e-12 away from {0,1}. y holds 0/1 labels, one per element of p.
Tensor bce_loss(const Tensor& p, const std::vector<double>& y, double pos_weight);

}  // namespace wtcf
