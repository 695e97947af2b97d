#include "wtcf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_set>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "wtcf/gemm.hpp"

namespace wtcf {

using detail::Node;

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_autograd = true;

[[noreturn]] void dim_error(const char* op, const std::string& detail) {
  throw usage_error(std::string(op) + ": " + detail);
}

void check(bool ok, const char* op, const std::string& detail) {
  if (!ok) dim_error(op, detail);
}

std::shared_ptr<Node> leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<Node>();
  if (static_cast<std::int64_t>(values.size()) != numel(shape))
    dim_error("tensor", "value count " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->value.resize_uninit(values.size());
  std::copy(values.begin(), values.end(), n->value.begin());
  n->requires_grad = requires_grad;
  return n;
}

// Interior node; records parents and enables grad only while recording.
std::shared_ptr<Node> interior(Shape shape, const char* op,
                               std::initializer_list<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.resize_uninit(static_cast<std::size_t>(numel(n->shape)));
  n->op = op;
  bool rec = false;
  if (g_autograd)
    for (const auto& p : parents) rec = rec || p->requires_grad;
  if (rec) {
    n->requires_grad = true;
    n->parents.assign(parents);
  }
  return n;
}

bool recording(const Node& n) { return n.requires_grad; }

}  // namespace

bool autograd_enabled() { return g_autograd; }

NoGradGuard::NoGradGuard() : prev_(g_autograd) { g_autograd = false; }
NoGradGuard::~NoGradGuard() { g_autograd = prev_; }

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : n_(leaf(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)), 0.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::span<const double> Tensor::grad() const& {
  n_->ensure_grad();
  return {n_->grad.data(), n_->grad.size()};
}

std::span<double> Tensor::grad_raw() & {
  n_->ensure_grad();
  return {n_->grad.data(), n_->grad.size()};
}

void Tensor::zero_grad() {
  if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

double Tensor::item() const {
  check(size() == 1, "item", "tensor " + shape_str(shape()) + " is not scalar");
  return n_->value[0];
}

void Tensor::backward() const {
  check(size() == 1, "backward", "root " + shape_str(shape()) + " is not scalar");
  // Reverse post-order DFS: every node is processed after all of its
  // consumers, so gradient accumulation (+=) completes before propagation.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(n_.get(), 0);
  seen.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  n_->ensure_grad();
  n_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->ensure_grad();
      node->backward(*node);
    }
  }
}

// ---------------------------------------------------------------------------
// matmul family

namespace {

constexpr std::int64_t kSmallGemmFlops = 1 << 16;

void run_gemm(char kind, int m, int n, int k, const double* a, int lda, const double* b, int ldb,
              double* c, int ldc, int beta) {
  const bool small = static_cast<std::int64_t>(m) * n * k * 2 < kSmallGemmFlops;
  switch (kind) {
    case 'n': small ? dgemm_small_nn(m, n, k, a, lda, b, ldb, c, ldc, beta)
                    : dgemm_nn(m, n, k, a, lda, b, ldb, c, ldc, beta);
      break;
    case 't': small ? dgemm_small_tn(m, n, k, a, lda, b, ldb, c, ldc, beta)
                    : dgemm_tn(m, n, k, a, lda, b, ldb, c, ldc, beta);
      break;
    default:  small ? dgemm_small_nt(m, n, k, a, lda, b, ldb, c, ldc, beta)
                    : dgemm_nt(m, n, k, a, lda, b, ldb, c, ldc, beta);
      break;
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  check((sa.size() == 2 || sa.size() == 3) && (sb.size() == 2 || sb.size() == 3) &&
            sb.size() <= sa.size(),
        "matmul", "unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
  const int batch = sa.size() == 3 ? sa[0] : 1;
  const int m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const int kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  check(k == kb, "matmul", "inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
  if (sb.size() == 3)
    check(sa.size() == 3 && sb[0] == batch, "matmul",
          "batch extents differ: " + shape_str(sa) + " x " + shape_str(sb));

  Shape out_shape = sa.size() == 3 ? Shape{batch, m, n} : Shape{m, n};
  auto out = interior(std::move(out_shape), "matmul", {a.node(), b.node()});
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* cp = out->value.data();

  if (sb.size() == 2) {
    // Flatten any batch axis into rows: one large GEMM.
    run_gemm('n', batch * m, n, k, ap, k, bp, n, cp, n, 0);
  } else {
    for (int i = 0; i < batch; ++i)
      run_gemm('n', m, n, k, ap + static_cast<std::size_t>(i) * m * k, k,
               bp + static_cast<std::size_t>(i) * k * n, n, cp + static_cast<std::size_t>(i) * m * n,
               n, 0);
  }

  if (recording(*out)) {
    auto an = a.node();
    auto bn = b.node();
    const bool b_batched = sb.size() == 3;
    out->backward = [an, bn, batch, m, n, k, b_batched](Node& self) {
      const double* g = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        if (!b_batched) {
          run_gemm('x', batch * m, k, n, g, n, bn->value.data(), n, an->grad.data(), k, 1);
        } else {
          for (int i = 0; i < batch; ++i)
            run_gemm('x', m, k, n, g + static_cast<std::size_t>(i) * m * n, n,
                     bn->value.data() + static_cast<std::size_t>(i) * k * n, n,
                     an->grad.data() + static_cast<std::size_t>(i) * m * k, k, 1);
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        if (!b_batched) {
          run_gemm('t', k, n, batch * m, an->value.data(), k, g, n, bn->grad.data(), n, 1);
        } else {
          for (int i = 0; i < batch; ++i)
            run_gemm('t', k, n, m, an->value.data() + static_cast<std::size_t>(i) * m * k, k,
                     g + static_cast<std::size_t>(i) * m * n, n,
                     bn->grad.data() + static_cast<std::size_t>(i) * k * n, n, 1);
        }
      }
    };
  }
  return Tensor(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  check(sa.size() == sb.size() && (sa.size() == 2 || sa.size() == 3), "matmul_nt",
        "unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
  const int batch = sa.size() == 3 ? sa[0] : 1;
  const int m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const int n = sb[sb.size() - 2], kb = sb[sb.size() - 1];
  check(k == kb, "matmul_nt", "inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
  if (sa.size() == 3)
    check(sb[0] == batch, "matmul_nt",
          "batch extents differ: " + shape_str(sa) + " x " + shape_str(sb));

  Shape out_shape = sa.size() == 3 ? Shape{batch, m, n} : Shape{m, n};
  auto out = interior(std::move(out_shape), "matmul_nt", {a.node(), b.node()});
  for (int i = 0; i < batch; ++i)
    run_gemm('x', m, n, k, a.data().data() + static_cast<std::size_t>(i) * m * k, k,
             b.data().data() + static_cast<std::size_t>(i) * n * k, k,
             out->value.data() + static_cast<std::size_t>(i) * m * n, n, 0);

  if (recording(*out)) {
    auto an = a.node();
    auto bn = b.node();
    out->backward = [an, bn, batch, m, n, k](Node& self) {
      const double* g = self.grad.data();
      for (int i = 0; i < batch; ++i) {
        const double* gi = g + static_cast<std::size_t>(i) * m * n;
        if (an->requires_grad) {
          an->ensure_grad();
          run_gemm('n', m, k, n, gi, n, bn->value.data() + static_cast<std::size_t>(i) * n * k, k,
                   an->grad.data() + static_cast<std::size_t>(i) * m * k, k, 1);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          run_gemm('t', n, k, m, gi, n, an->value.data() + static_cast<std::size_t>(i) * m * k, k,
                   bn->grad.data() + static_cast<std::size_t>(i) * n * k, k, 1);
        }
      }
    };
  }
  return Tensor(out);
}

Tensor transpose_last2(const Tensor& x) {
  const Shape& s = x.shape();
  check(s.size() >= 2, "transpose", "rank >= 2 required, got " + shape_str(s));
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 1], out_shape[s.size() - 2]);
  const int m = s[s.size() - 2], n = s[s.size() - 1];
  const std::int64_t batch = numel(s) / (static_cast<std::int64_t>(m) * n);
  auto out = interior(std::move(out_shape), "transpose", {x.node()});

  auto transpose_into = [m, n, batch](const double* src, double* dst) {
    for (std::int64_t b = 0; b < batch; ++b) {
      const double* xs = src + b * m * n;
      double* ys = dst + b * m * n;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ys[static_cast<std::size_t>(j) * m + i] = xs[static_cast<std::size_t>(i) * n + j];
    }
  };
  transpose_into(x.data().data(), out->value.data());

  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, m, n, batch](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      // inverse transpose, accumulating
      for (std::int64_t b = 0; b < batch; ++b) {
        const double* gs = self.grad.data() + b * m * n;
        double* dx = xn->grad.data() + b * m * n;
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < m; ++i) dx[static_cast<std::size_t>(i) * n + j] += gs[static_cast<std::size_t>(j) * m + i];
      }
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  check(a.shape() == b.shape(), name,
        "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = interior(a.shape(), name, {a.node(), b.node()});
  const std::size_t n = out->value.size();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = fwd(pa[i], pb[i]);
  if (recording(*out)) {
    auto an = a.node();
    auto bn = b.node();
    out->backward = [an, bn, bwd, n](Node& self) { bwd(self, *an, *bn, n); };
  }
  return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](Node& self, Node& an, Node& bn, std::size_t n) {
        if (an.requires_grad) {
          an.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) an.grad[i] += self.grad[i];
        }
        if (bn.requires_grad) {
          bn.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) bn.grad[i] += self.grad[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](Node& self, Node& an, Node& bn, std::size_t n) {
        if (an.requires_grad) {
          an.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) an.grad[i] += self.grad[i];
        }
        if (bn.requires_grad) {
          bn.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) bn.grad[i] -= self.grad[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](Node& self, Node& an, Node& bn, std::size_t n) {
        if (an.requires_grad) {
          an.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) an.grad[i] += self.grad[i] * bn.value[i];
        }
        if (bn.requires_grad) {
          bn.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) bn.grad[i] += self.grad[i] * an.value[i];
        }
      });
}

Tensor scale(const Tensor& x, double c) {
  auto out = interior(x.shape(), "scale", {x.node()});
  const std::size_t n = out->value.size();
  const double* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = px[i] * c;
  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, c, n](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += self.grad[i] * c;
    };
  }
  return Tensor(out);
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const Shape& sx = x.shape();
  check(bias.rank() == 1 && bias.dim(0) == sx.back(), "add_bias",
        "bias " + shape_str(bias.shape()) + " does not match last axis of " + shape_str(sx));
  const std::size_t d = static_cast<std::size_t>(sx.back());
  const std::size_t rows = x.size() / d;
  auto out = interior(sx, "add_bias", {x.node(), bias.node()});
  const double* px = x.data().data();
  const double* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out->value[r * d + j] = px[r * d + j] + pb[j];
  if (recording(*out)) {
    auto xn = x.node();
    auto bn = bias.node();
    out->backward = [xn, bn, rows, d](Node& self) {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < rows * d; ++i) xn->grad[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) bn->grad[j] += self.grad[r * d + j];
      }
    };
  }
  return Tensor(out);
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Bwd dfd_from_y) {
  auto out = interior(x.shape(), name, {x.node()});
  const std::size_t n = out->value.size();
  const double* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = fwd(px[i]);
  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, dfd_from_y, n](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        xn->grad[i] += self.grad[i] * dfd_from_y(xn->value[i], self.value[i]);
    };
  }
  return Tensor(out);
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// glibc's vector math kernel; deterministic and accurate to a few ulp,
// roughly 5x the scalar call on these array sizes.
#if defined(__AVX512F__) && defined(__GLIBC__)
extern "C" __m512d _ZGVeN8v_exp(__m512d);
void vec_exp(double* v, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(v + i, _ZGVeN8v_exp(_mm512_loadu_pd(v + i)));
  for (; i < n; ++i) v[i] = std::exp(v[i]);
}
#else
void vec_exp(double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) v[i] = std::exp(v[i]);
}
#endif

// Activation derivative from the stored output, applied to a gradient pass.
double fused_act_deriv(FusedAct act, double y) {
  switch (act) {
    case FusedAct::relu: return y > 0.0 ? 1.0 : 0.0;
    case FusedAct::tanh: return 1.0 - y * y;
    default: return 1.0;
  }
}

void apply_fused_act(FusedAct act, double* v, std::size_t n) {
  if (act == FusedAct::relu) {
    for (std::size_t i = 0; i < n; ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
  } else if (act == FusedAct::tanh) {
    for (std::size_t i = 0; i < n; ++i) v[i] = std::tanh(v[i]);
  }
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias, FusedAct act) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  check(sx.size() >= 2 && sw.size() == 2, "linear",
        "unsupported ranks " + shape_str(sx) + " x " + shape_str(sw));
  const int in_dim = sx.back();
  check(sw[0] == in_dim, "linear",
        "inner extents differ: " + shape_str(sx) + " x " + shape_str(sw));
  const int out_dim = sw[1];
  const bool has_bias = bias.defined();
  if (has_bias)
    check(bias.rank() == 1 && bias.dim(0) == out_dim, "linear",
          "bias " + shape_str(bias.shape()) + " does not match output width " +
              std::to_string(out_dim));
  const std::size_t rows = x.size() / static_cast<std::size_t>(in_dim);

  Shape out_shape = sx;
  out_shape.back() = out_dim;
  auto out = has_bias ? interior(std::move(out_shape), "linear", {x.node(), w.node(), bias.node()})
                      : interior(std::move(out_shape), "linear", {x.node(), w.node()});
  run_gemm('n', static_cast<int>(rows), out_dim, in_dim, x.data().data(), in_dim, w.data().data(),
           out_dim, out->value.data(), out_dim, 0);
  if (has_bias) {
    const double* pb = bias.data().data();
    double* o = out->value.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (int j = 0; j < out_dim; ++j) o[r * out_dim + j] += pb[j];
  }
  apply_fused_act(act, out->value.data(), out->value.size());

  if (recording(*out)) {
    auto xn = x.node();
    auto wn = w.node();
    auto bn = has_bias ? bias.node() : nullptr;
    out->backward = [xn, wn, bn, rows, in_dim, out_dim, act](Node& self) {
      const double* gy_raw = self.grad.data();
      // route the gradient through the fused activation first
      thread_local std::vector<double> masked;
      if (act != FusedAct::none) {
        masked.resize(self.grad.size());
        for (std::size_t i = 0; i < masked.size(); ++i)
          masked[i] = gy_raw[i] * fused_act_deriv(act, self.value[i]);
        gy_raw = masked.data();
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < out_dim; ++j) bn->grad[static_cast<std::size_t>(j)] += gy_raw[r * out_dim + j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        run_gemm('x', static_cast<int>(rows), in_dim, out_dim, gy_raw, out_dim, wn->value.data(),
                 out_dim, xn->grad.data(), in_dim, 1);
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        run_gemm('t', in_dim, out_dim, static_cast<int>(rows), xn->value.data(), in_dim, gy_raw,
                 out_dim, wn->grad.data(), out_dim, 1);
      }
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// reductions

namespace {

struct AxisSplit {
  std::size_t outer, axis, inner;
};

AxisSplit split_axis(const Shape& s, int axis, const char* op) {
  check(axis >= 0 && axis < static_cast<int>(s.size()), op,
        "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r{1, static_cast<std::size_t>(s[axis]), 1};
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[i]);
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= static_cast<std::size_t>(s[i]);
  return r;
}

Tensor reduce_axis(const char* name, const Tensor& x, int axis, double scale_out) {
  const Shape& s = x.shape();
  auto sp = split_axis(s, axis, name);
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape = {1};
  auto out = interior(std::move(out_shape), name, {x.node()});
  const double* px = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      double acc = 0.0;
      for (std::size_t a = 0; a < sp.axis; ++a) acc += px[(o * sp.axis + a) * sp.inner + in];
      out->value[o * sp.inner + in] = acc * scale_out;
    }
  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, sp, scale_out](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t a = 0; a < sp.axis; ++a)
          for (std::size_t in = 0; in < sp.inner; ++in)
            xn->grad[(o * sp.axis + a) * sp.inner + in] +=
                self.grad[o * sp.inner + in] * scale_out;
    };
  }
  return Tensor(out);
}

}  // namespace

Tensor sum_axis(const Tensor& x, int axis) { return reduce_axis("sum_axis", x, axis, 1.0); }

Tensor mean_axis(const Tensor& x, int axis) {
  const double inv = 1.0 / x.shape()[static_cast<std::size_t>(axis)];
  return reduce_axis("mean_axis", x, axis, inv);
}

Tensor mean_all(const Tensor& x) {
  auto out = interior({1}, "mean_all", {x.node()});
  const std::size_t n = x.data().size();
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out->value[0] = acc / static_cast<double>(n);
  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, n](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const double g = self.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += g;
    };
  }
  return Tensor(out);
}

Tensor softmax_lastdim(const Tensor& x, double prescale) {
  const std::size_t d = static_cast<std::size_t>(x.shape().back());
  const std::size_t rows = x.size() / d;
  auto out = interior(x.shape(), "softmax", {x.node()});
  const double* px = x.data().data();
  double* ov = out->value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px + r * d;
    double* o = ov + r * d;
    double mx = in[0] * prescale;
    for (std::size_t j = 0; j < d; ++j) mx = std::max(mx, in[j] * prescale);
    for (std::size_t j = 0; j < d; ++j) o[j] = in[j] * prescale - mx;
  }
  vec_exp(ov, rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = ov + r * d;
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) sum += o[j];
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
  }
  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, rows, d, prescale](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * d;
        const double* gy = self.grad.data() + r * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
        double* gx = xn->grad.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) gx[j] += prescale * y[j] * (gy[j] - dot);
      }
    };
  }
  return Tensor(out);
}

Tensor softmax_lastdim(const Tensor& x) { return softmax_lastdim(x, 1.0); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  const Shape& s = x.shape();
  const std::size_t d = static_cast<std::size_t>(s.back());
  check(gain.rank() == 1 && static_cast<std::size_t>(gain.dim(0)) == d && shift.rank() == 1 &&
            static_cast<std::size_t>(shift.dim(0)) == d,
        "layer_norm",
        "gain " + shape_str(gain.shape()) + " / shift " + shape_str(shift.shape()) +
            " do not match feature axis of " + shape_str(s));
  const std::size_t rows = x.size() / d;
  auto out = interior(s, "layer_norm", {x.node(), gain.node(), shift.node()});

  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* px = x.data().data();
  const double* pg = gain.data().data();
  const double* pb = shift.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = in[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    double* xh = xhat->data() + r * d;
    double* o = out->value.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (in[j] - mean) * is;
      o[j] = xh[j] * pg[j] + pb[j];
    }
  }

  if (recording(*out)) {
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = shift.node();
    out->backward = [xn, gn, bn, xhat, inv_std, rows, d](Node& self) {
      const double* gy = self.grad.data();
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j)
            gn->grad[j] += gy[r * d + j] * (*xhat)[r * d + j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) bn->grad[j] += gy[r * d + j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        const double* pg = gn->value.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xh = xhat->data() + r * d;
          const double* g = gy + r * d;
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double t = g[j] * pg[j];
            mean_g += t;
            mean_gx += t * xh[j];
          }
          mean_g /= static_cast<double>(d);
          mean_gx /= static_cast<double>(d);
          const double is = (*inv_std)[r];
          double* gx = xn->grad.data() + r * d;
          for (std::size_t j = 0; j < d; ++j)
            gx[j] += is * (g[j] * pg[j] - mean_g - xh[j] * mean_gx);
        }
      }
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// shape ops

Tensor reshape(const Tensor& x, Shape target) {
  check(numel(target) == x.size(), "reshape",
        "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(target));
  auto out = interior(std::move(target), "reshape", {x.node()});
  out->value = x.node()->value;
  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor slice_lastdim(const Tensor& x, int from, int to) {
  const Shape& s = x.shape();
  const int d = s.back();
  check(0 <= from && from < to && to <= d, "slice",
        "range [" + std::to_string(from) + "," + std::to_string(to) + ") invalid for " +
            shape_str(s));
  Shape out_shape = s;
  out_shape.back() = to - from;
  const std::size_t width = static_cast<std::size_t>(to - from);
  const std::size_t rows = x.size() / static_cast<std::size_t>(d);
  auto out = interior(std::move(out_shape), "slice", {x.node()});
  const double* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    std::memcpy(out->value.data() + r * width, px + r * d + from, width * sizeof(double));
  if (recording(*out)) {
    auto xn = x.node();
    const std::size_t dd = static_cast<std::size_t>(d);
    const std::size_t off = static_cast<std::size_t>(from);
    out->backward = [xn, rows, width, dd, off](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j)
          xn->grad[r * dd + off + j] += self.grad[r * width + j];
    };
  }
  return Tensor(out);
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat", "no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int total = 0;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    const int w = pl.back();
    pl.pop_back();
    check(pl == lead, "concat",
          "leading shapes differ: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += w;
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  auto node = std::make_shared<Node>();
  node->shape = std::move(out_shape);
  node->value.resize_uninit(static_cast<std::size_t>(numel(node->shape)));
  node->op = "concat";
  bool rec = false;
  if (g_autograd)
    for (const auto& p : parts) rec = rec || p.requires_grad();
  const std::size_t rows = static_cast<std::size_t>(numel(lead));
  const std::size_t tw = static_cast<std::size_t>(total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = static_cast<std::size_t>(p.shape().back());
    const double* src = p.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::memcpy(node->value.data() + r * tw + off, src + r * w, w * sizeof(double));
    off += w;
  }
  if (rec) {
    node->requires_grad = true;
    std::vector<std::shared_ptr<Node>> ps;
    for (const auto& p : parts) ps.push_back(p.node());
    node->parents = ps;
    node->backward = [ps, rows, tw](Node& self) {
      std::size_t off = 0;
      for (const auto& pn : ps) {
        const std::size_t w = static_cast<std::size_t>(pn->shape.back());
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j)
              pn->grad[r * w + j] += self.grad[r * tw + off + j];
        }
        off += w;
      }
    };
  }
  return Tensor(node);
}

namespace {

// (b, t, h, c) -> (b, h, t, c) permutation shared by split/merge.
void regroup_heads(const double* src, double* dst, int batch, int t, int heads, int dk,
                   bool to_head_major) {
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < t; ++i)
      for (int h = 0; h < heads; ++h) {
        const std::size_t flat = ((static_cast<std::size_t>(b) * t + i) * heads + h) *
                                 static_cast<std::size_t>(dk);
        const std::size_t grouped = ((static_cast<std::size_t>(b) * heads + h) * t + i) *
                                    static_cast<std::size_t>(dk);
        if (to_head_major)
          std::memcpy(dst + grouped, src + flat, static_cast<std::size_t>(dk) * sizeof(double));
        else
          std::memcpy(dst + flat, src + grouped, static_cast<std::size_t>(dk) * sizeof(double));
      }
}

void regroup_heads_add(const double* src, double* dst, int batch, int t, int heads, int dk,
                       bool to_head_major) {
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < t; ++i)
      for (int h = 0; h < heads; ++h) {
        const std::size_t flat = ((static_cast<std::size_t>(b) * t + i) * heads + h) *
                                 static_cast<std::size_t>(dk);
        const std::size_t grouped = ((static_cast<std::size_t>(b) * heads + h) * t + i) *
                                    static_cast<std::size_t>(dk);
        const double* s = src + (to_head_major ? flat : grouped);
        double* d = dst + (to_head_major ? grouped : flat);
        for (int c = 0; c < dk; ++c) d[c] += s[c];
      }
}

}  // namespace

Tensor split_heads(const Tensor& x, int heads) {
  const Shape& s = x.shape();
  check(s.size() == 3, "split_heads", "expected [batch, time, features], got " + shape_str(s));
  check(heads >= 1 && s[2] % heads == 0, "split_heads",
        "features " + std::to_string(s[2]) + " not divisible by heads " + std::to_string(heads));
  const int batch = s[0], t = s[1], dk = s[2] / heads;
  auto out = interior({batch * heads, t, dk}, "split_heads", {x.node()});
  regroup_heads(x.data().data(), out->value.data(), batch, t, heads, dk, true);
  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, batch, t, heads, dk](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      regroup_heads_add(self.grad.data(), xn->grad.data(), batch, t, heads, dk, false);
    };
  }
  return Tensor(out);
}

Tensor merge_heads(const Tensor& x, int heads) {
  const Shape& s = x.shape();
  check(s.size() == 3, "merge_heads", "expected [batch*heads, time, dk], got " + shape_str(s));
  check(heads >= 1 && s[0] % heads == 0, "merge_heads",
        "leading extent " + std::to_string(s[0]) + " not divisible by heads " +
            std::to_string(heads));
  const int batch = s[0] / heads, t = s[1], dk = s[2];
  auto out = interior({batch, t, heads * dk}, "merge_heads", {x.node()});
  regroup_heads(x.data().data(), out->value.data(), batch, t, heads, dk, false);
  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, batch, t, heads, dk](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      regroup_heads_add(self.grad.data(), xn->grad.data(), batch, t, heads, dk, true);
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// convolution / pooling

namespace {

struct ConvScratch {
  std::vector<double> cols;       // im2col, [B*Lout, Cin*K]
  std::vector<double> w_gemm;     // [Cin*K, Cout]
  std::vector<double> y_packed;   // [B*Lout, Cout]
  std::vector<double> gy_packed;  // backward: dY regrouped
  std::vector<double> gw_gemm;    // backward: dW in GEMM layout
  std::vector<double> gcols;      // backward: im2col gradient
};

ConvScratch& conv_scratch() {
  thread_local ConvScratch s;
  return s;
}

void im2col(const double* x, int batch, int cin, int len, int kernel, int stride, int pad,
            int lout, double* cols) {
  const int ck = cin * kernel;
  for (int b = 0; b < batch; ++b) {
    const double* xb = x + static_cast<std::size_t>(b) * cin * len;
    for (int lo = 0; lo < lout; ++lo) {
      double* row = cols + (static_cast<std::size_t>(b) * lout + lo) * ck;
      const int base = lo * stride - pad;
      if (base >= 0 && base + kernel <= len) {
        // interior: every tap is in range, copy whole runs
        for (int ci = 0; ci < cin; ++ci)
          std::memcpy(row + ci * kernel, xb + static_cast<std::size_t>(ci) * len + base,
                      static_cast<std::size_t>(kernel) * sizeof(double));
        continue;
      }
      for (int ci = 0; ci < cin; ++ci) {
        const double* xc = xb + static_cast<std::size_t>(ci) * len;
        for (int kk = 0; kk < kernel; ++kk) {
          const int pos = base + kk;
          row[ci * kernel + kk] = (pos >= 0 && pos < len) ? xc[pos] : 0.0;
        }
      }
    }
  }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
              FusedAct act) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  check(sx.size() == 3, "conv1d", "input must be [batch, channels, length], got " + shape_str(sx));
  check(sw.size() == 3, "conv1d", "weight must be [out, in, kernel], got " + shape_str(sw));
  check(stride >= 1 && padding >= 0, "conv1d", "stride/padding out of range");
  const int batch = sx[0], cin = sx[1], len = sx[2];
  const int cout = sw[0], kernel = sw[2];
  check(sw[1] == cin, "conv1d",
        "channel mismatch: input " + shape_str(sx) + " vs weight " + shape_str(sw));
  check(bias.rank() == 1 && bias.dim(0) == cout, "conv1d",
        "bias " + shape_str(bias.shape()) + " does not match out channels");
  check(len + 2 * padding >= kernel, "conv1d",
        "length " + std::to_string(len) + " + 2*padding " + std::to_string(padding) +
            " shorter than kernel " + std::to_string(kernel));
  const int lout = (len + 2 * padding - kernel) / stride + 1;
  const int ck = cin * kernel;
  const std::size_t rows = static_cast<std::size_t>(batch) * lout;

  auto& scr = conv_scratch();
  scr.cols.resize(rows * ck);
  scr.w_gemm.resize(static_cast<std::size_t>(ck) * cout);
  scr.y_packed.resize(rows * cout);

  im2col(x.data().data(), batch, cin, len, kernel, stride, padding, lout, scr.cols.data());
  // weight [Cout, Cin, K] -> [Cin*K, Cout] to match im2col column order
  const double* pw = w.data().data();
  for (int co = 0; co < cout; ++co)
    for (int r = 0; r < ck; ++r)
      scr.w_gemm[static_cast<std::size_t>(r) * cout + co] = pw[static_cast<std::size_t>(co) * ck + r];

  run_gemm('n', static_cast<int>(rows), cout, ck, scr.cols.data(), ck, scr.w_gemm.data(), cout,
           scr.y_packed.data(), cout, 0);

  auto out = interior({batch, cout, lout}, "conv1d", {x.node(), w.node(), bias.node()});
  const double* pb = bias.data().data();
  for (int b = 0; b < batch; ++b)
    for (int co = 0; co < cout; ++co) {
      double* dst = out->value.data() + (static_cast<std::size_t>(b) * cout + co) * lout;
      const double* src = scr.y_packed.data() + static_cast<std::size_t>(b) * lout * cout + co;
      const double bv = pb[co];
      for (int lo = 0; lo < lout; ++lo) dst[lo] = src[static_cast<std::size_t>(lo) * cout] + bv;
    }
  apply_fused_act(act, out->value.data(), out->value.size());

  if (recording(*out)) {
    auto xn = x.node();
    auto wn = w.node();
    auto bn = bias.node();
    out->backward = [xn, wn, bn, batch, cin, len, cout, kernel, stride, padding, lout,
                     act](Node& self) {
      const int ck = cin * kernel;
      const std::size_t rows = static_cast<std::size_t>(batch) * lout;
      auto& scr = conv_scratch();

      // dY -> [B*Lout, Cout], routed through the fused activation derivative
      scr.gy_packed.resize(rows * cout);
      double* gy_packed = scr.gy_packed.data();
      for (int b = 0; b < batch; ++b)
        for (int co = 0; co < cout; ++co) {
          const std::size_t off = (static_cast<std::size_t>(b) * cout + co) * lout;
          const double* src = self.grad.data() + off;
          const double* yv = self.value.data() + off;
          double* dst = gy_packed + static_cast<std::size_t>(b) * lout * cout + co;
          if (act == FusedAct::none) {
            for (int lo = 0; lo < lout; ++lo) dst[static_cast<std::size_t>(lo) * cout] = src[lo];
          } else {
            for (int lo = 0; lo < lout; ++lo)
              dst[static_cast<std::size_t>(lo) * cout] = src[lo] * fused_act_deriv(act, yv[lo]);
          }
        }

      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (int co = 0; co < cout; ++co) bn->grad[co] += gy_packed[r * cout + co];
      }

      if (wn->requires_grad) {
        // im2col is recomputed rather than saved; keeps graph memory flat.
        scr.cols.resize(rows * ck);
        im2col(xn->value.data(), batch, cin, len, kernel, stride, padding, lout, scr.cols.data());
        scr.gw_gemm.assign(static_cast<std::size_t>(ck) * cout, 0.0);
        run_gemm('t', ck, cout, static_cast<int>(rows), scr.cols.data(), ck, gy_packed, cout,
                 scr.gw_gemm.data(), cout, 0);
        wn->ensure_grad();
        for (int co = 0; co < cout; ++co)
          for (int r = 0; r < ck; ++r)
            wn->grad[static_cast<std::size_t>(co) * ck + r] +=
                scr.gw_gemm[static_cast<std::size_t>(r) * cout + co];
      }

      if (xn->requires_grad) {
        scr.w_gemm.resize(static_cast<std::size_t>(ck) * cout);
        const double* pw = wn->value.data();
        for (int co = 0; co < cout; ++co)
          for (int r = 0; r < ck; ++r)
            scr.w_gemm[static_cast<std::size_t>(r) * cout + co] =
                pw[static_cast<std::size_t>(co) * ck + r];
        scr.gcols.resize(rows * ck);
        run_gemm('x', static_cast<int>(rows), ck, cout, gy_packed, cout, scr.w_gemm.data(), cout,
                 scr.gcols.data(), ck, 0);
        xn->ensure_grad();
        // col2im scatter-add
        for (int b = 0; b < batch; ++b) {
          double* gx = xn->grad.data() + static_cast<std::size_t>(b) * cin * len;
          for (int lo = 0; lo < lout; ++lo) {
            const double* row = scr.gcols.data() + (static_cast<std::size_t>(b) * lout + lo) * ck;
            const int base = lo * stride - padding;
            for (int ci = 0; ci < cin; ++ci)
              for (int kk = 0; kk < kernel; ++kk) {
                const int pos = base + kk;
                if (pos >= 0 && pos < len)
                  gx[static_cast<std::size_t>(ci) * len + pos] += row[ci * kernel + kk];
              }
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor maxpool1d(const Tensor& x, int kernel, int stride) {
  const Shape& s = x.shape();
  check(s.size() == 3, "maxpool1d", "input must be [batch, channels, length], got " + shape_str(s));
  check(kernel >= 1 && stride >= 1, "maxpool1d", "kernel/stride out of range");
  const int batch = s[0], ch = s[1], len = s[2];
  check(len >= kernel, "maxpool1d",
        "length " + std::to_string(len) + " shorter than kernel " + std::to_string(kernel));
  const int lout = (len - kernel) / stride + 1;
  auto out = interior({batch, ch, lout}, "maxpool1d", {x.node()});

  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(batch) * ch * lout);
  const double* px = x.data().data();
  for (int bc = 0; bc < batch * ch; ++bc) {
    const double* in = px + static_cast<std::size_t>(bc) * len;
    double* o = out->value.data() + static_cast<std::size_t>(bc) * lout;
    int* am = argmax->data() + static_cast<std::size_t>(bc) * lout;
    for (int lo = 0; lo < lout; ++lo) {
      const int base = lo * stride;
      int best = base;
      double bv = in[base];
      for (int kk = 1; kk < kernel; ++kk)
        if (in[base + kk] > bv) {  // strict: ties keep the lowest index
          bv = in[base + kk];
          best = base + kk;
        }
      o[lo] = bv;
      am[lo] = best;
    }
  }

  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, argmax, batch, ch, len, lout](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (int bc = 0; bc < batch * ch; ++bc) {
        const double* g = self.grad.data() + static_cast<std::size_t>(bc) * lout;
        const int* am = argmax->data() + static_cast<std::size_t>(bc) * lout;
        double* gx = xn->grad.data() + static_cast<std::size_t>(bc) * len;
        for (int lo = 0; lo < lout; ++lo) gx[am[lo]] += g[lo];
      }
    };
  }
  return Tensor(out);
}

namespace {

// im2col for [B, L, Cin]: interior rows are one contiguous block per window.
void im2col_cl(const double* x, int batch, int cin, int len, int kernel, int stride, int pad,
               int lout, double* cols) {
  const int ck = cin * kernel;
  for (int b = 0; b < batch; ++b) {
    const double* xb = x + static_cast<std::size_t>(b) * len * cin;
    for (int lo = 0; lo < lout; ++lo) {
      double* row = cols + (static_cast<std::size_t>(b) * lout + lo) * ck;
      const int base = lo * stride - pad;
      if (base >= 0 && base + kernel <= len) {
        std::memcpy(row, xb + static_cast<std::size_t>(base) * cin,
                    static_cast<std::size_t>(ck) * sizeof(double));
        continue;
      }
      for (int kk = 0; kk < kernel; ++kk) {
        const int pos = base + kk;
        double* dst = row + static_cast<std::size_t>(kk) * cin;
        if (pos >= 0 && pos < len)
          std::memcpy(dst, xb + static_cast<std::size_t>(pos) * cin,
                      static_cast<std::size_t>(cin) * sizeof(double));
        else
          std::fill(dst, dst + cin, 0.0);
      }
    }
  }
}

}  // namespace

Tensor conv1d_cl(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
                 FusedAct act) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  check(sx.size() == 3, "conv1d_cl",
        "input must be [batch, length, channels], got " + shape_str(sx));
  check(sw.size() == 3, "conv1d_cl", "weight must be [out, in, kernel], got " + shape_str(sw));
  check(stride >= 1 && padding >= 0, "conv1d_cl", "stride/padding out of range");
  const int batch = sx[0], len = sx[1], cin = sx[2];
  const int cout = sw[0], kernel = sw[2];
  check(sw[1] == cin, "conv1d_cl",
        "channel mismatch: input " + shape_str(sx) + " vs weight " + shape_str(sw));
  check(bias.rank() == 1 && bias.dim(0) == cout, "conv1d_cl",
        "bias " + shape_str(bias.shape()) + " does not match out channels");
  check(len + 2 * padding >= kernel, "conv1d_cl",
        "length " + std::to_string(len) + " + 2*padding " + std::to_string(padding) +
            " shorter than kernel " + std::to_string(kernel));
  const int lout = (len + 2 * padding - kernel) / stride + 1;
  const int ck = cin * kernel;
  const std::size_t rows = static_cast<std::size_t>(batch) * lout;

  auto& scr = conv_scratch();
  scr.cols.resize(rows * ck);
  scr.w_gemm.resize(static_cast<std::size_t>(ck) * cout);

  im2col_cl(x.data().data(), batch, cin, len, kernel, stride, padding, lout, scr.cols.data());
  // weight [Cout, Cin, K] -> [K*Cin, Cout]; row index kk*cin+ci matches the
  // channel-last gather order
  const double* pw = w.data().data();
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int kk = 0; kk < kernel; ++kk)
        scr.w_gemm[(static_cast<std::size_t>(kk) * cin + ci) * cout + co] =
            pw[(static_cast<std::size_t>(co) * cin + ci) * kernel + kk];

  auto out = interior({batch, lout, cout}, "conv1d_cl", {x.node(), w.node(), bias.node()});
  // output [B*Lout, Cout] is already the wanted layout
  run_gemm('n', static_cast<int>(rows), cout, ck, scr.cols.data(), ck, scr.w_gemm.data(), cout,
           out->value.data(), cout, 0);
  {
    const double* pb = bias.data().data();
    double* o = out->value.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (int co = 0; co < cout; ++co) o[r * cout + co] += pb[co];
  }
  apply_fused_act(act, out->value.data(), out->value.size());

  if (recording(*out)) {
    auto xn = x.node();
    auto wn = w.node();
    auto bn = bias.node();
    out->backward = [xn, wn, bn, batch, cin, len, cout, kernel, stride, padding, lout,
                     act](Node& self) {
      const int ck = cin * kernel;
      const std::size_t rows = static_cast<std::size_t>(batch) * lout;
      auto& scr = conv_scratch();

      const double* gy = self.grad.data();
      if (act != FusedAct::none) {
        scr.gy_packed.resize(rows * cout);
        for (std::size_t i = 0; i < rows * static_cast<std::size_t>(cout); ++i)
          scr.gy_packed[i] = self.grad[i] * fused_act_deriv(act, self.value[i]);
        gy = scr.gy_packed.data();
      }

      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (int co = 0; co < cout; ++co) bn->grad[co] += gy[r * cout + co];
      }

      if (wn->requires_grad) {
        scr.cols.resize(rows * ck);
        im2col_cl(xn->value.data(), batch, cin, len, kernel, stride, padding, lout,
                  scr.cols.data());
        scr.gw_gemm.assign(static_cast<std::size_t>(ck) * cout, 0.0);
        run_gemm('t', ck, cout, static_cast<int>(rows), scr.cols.data(), ck, gy, cout,
                 scr.gw_gemm.data(), cout, 0);
        wn->ensure_grad();
        for (int co = 0; co < cout; ++co)
          for (int ci = 0; ci < cin; ++ci)
            for (int kk = 0; kk < kernel; ++kk)
              wn->grad[(static_cast<std::size_t>(co) * cin + ci) * kernel + kk] +=
                  scr.gw_gemm[(static_cast<std::size_t>(kk) * cin + ci) * cout + co];
      }

      if (xn->requires_grad) {
        scr.w_gemm.resize(static_cast<std::size_t>(ck) * cout);
        const double* pw = wn->value.data();
        for (int co = 0; co < cout; ++co)
          for (int ci = 0; ci < cin; ++ci)
            for (int kk = 0; kk < kernel; ++kk)
              scr.w_gemm[(static_cast<std::size_t>(kk) * cin + ci) * cout + co] =
                  pw[(static_cast<std::size_t>(co) * cin + ci) * kernel + kk];
        scr.gcols.resize(rows * ck);
        run_gemm('x', static_cast<int>(rows), ck, cout, gy, cout, scr.w_gemm.data(), cout,
                 scr.gcols.data(), ck, 0);
        xn->ensure_grad();
        // col2im: contiguous row segments accumulate back into x
        for (int b = 0; b < batch; ++b) {
          double* gx = xn->grad.data() + static_cast<std::size_t>(b) * len * cin;
          for (int lo = 0; lo < lout; ++lo) {
            const double* row = scr.gcols.data() + (static_cast<std::size_t>(b) * lout + lo) * ck;
            const int base = lo * stride - padding;
            for (int kk = 0; kk < kernel; ++kk) {
              const int pos = base + kk;
              if (pos < 0 || pos >= len) continue;
              double* dst = gx + static_cast<std::size_t>(pos) * cin;
              const double* src = row + static_cast<std::size_t>(kk) * cin;
              for (int ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
            }
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor maxpool1d_cl(const Tensor& x, int kernel, int stride) {
  const Shape& s = x.shape();
  check(s.size() == 3, "maxpool1d_cl",
        "input must be [batch, length, channels], got " + shape_str(s));
  check(kernel >= 1 && stride >= 1, "maxpool1d_cl", "kernel/stride out of range");
  const int batch = s[0], len = s[1], ch = s[2];
  check(len >= kernel, "maxpool1d_cl",
        "length " + std::to_string(len) + " shorter than kernel " + std::to_string(kernel));
  const int lout = (len - kernel) / stride + 1;
  auto out = interior({batch, lout, ch}, "maxpool1d_cl", {x.node()});

  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(batch) * lout * ch);
  const double* px = x.data().data();
  for (int b = 0; b < batch; ++b) {
    const double* xb = px + static_cast<std::size_t>(b) * len * ch;
    for (int lo = 0; lo < lout; ++lo) {
      const int base = lo * stride;
      double* o = out->value.data() + (static_cast<std::size_t>(b) * lout + lo) * ch;
      int* am = argmax->data() + (static_cast<std::size_t>(b) * lout + lo) * ch;
      const double* first = xb + static_cast<std::size_t>(base) * ch;
      for (int c = 0; c < ch; ++c) {
        o[c] = first[c];
        am[c] = base;
      }
      for (int kk = 1; kk < kernel; ++kk) {
        const double* row = xb + static_cast<std::size_t>(base + kk) * ch;
        for (int c = 0; c < ch; ++c)
          if (row[c] > o[c]) {  // strict: ties keep the lowest index
            o[c] = row[c];
            am[c] = base + kk;
          }
      }
    }
  }

  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, argmax, batch, ch, len, lout](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (int b = 0; b < batch; ++b) {
        double* gx = xn->grad.data() + static_cast<std::size_t>(b) * len * ch;
        for (int lo = 0; lo < lout; ++lo) {
          const double* g = self.grad.data() + (static_cast<std::size_t>(b) * lout + lo) * ch;
          const int* am = argmax->data() + (static_cast<std::size_t>(b) * lout + lo) * ch;
          for (int c = 0; c < ch; ++c) gx[static_cast<std::size_t>(am[c]) * ch + c] += g[c];
        }
      }
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// dropout / loss

Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng) {
  check(rate >= 0.0 && rate < 1.0, "dropout", "rate must be in [0,1)");
  if (!train || rate == 0.0) return x;
  const std::size_t n = x.data().size();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto out = interior(x.shape(), "dropout", {x.node()});
  const double* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double m = rng.uniform() < rate ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out->value[i] = px[i] * m;
  }
  if (recording(*out)) {
    auto xn = x.node();
    out->backward = [xn, mask, n](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += self.grad[i] * (*mask)[i];
    };
  }
  return Tensor(out);
}

namespace {
constexpr double kBceEps = 1e-12;
}

Tensor bce_loss(const Tensor& p, const std::vector<double>& y, double pos_weight) {
  const std::size_t n = p.data().size();
  check(y.size() == n, "bce_loss",
        "got " + std::to_string(y.size()) + " labels for " + std::to_string(n) + " probabilities");
  check(n > 0, "bce_loss", "empty batch");
  auto out = interior({1}, "bce_loss", {p.node()});
  const double* pp = p.data().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = std::clamp(pp[i], kBceEps, 1.0 - kBceEps);
    acc -= pos_weight * y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  out->value[0] = acc / static_cast<double>(n);
  if (recording(*out)) {
    auto pn = p.node();
    auto labels = std::make_shared<std::vector<double>>(y);
    out->backward = [pn, labels, pos_weight, n](Node& self) {
      if (!pn->requires_grad) return;
      pn->ensure_grad();
      const double g = self.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double pc = std::clamp(pn->value[i], kBceEps, 1.0 - kBceEps);
        pn->grad[i] += g * (-pos_weight * (*labels)[i] / pc + (1.0 - (*labels)[i]) / (1.0 - pc));
      }
    };
  }
  return Tensor(out);
}

}  // namespace wtcf
