#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "wtcf/gradcheck.hpp"
#include "wtcf/nn.hpp"
#include "wtcf/tensor.hpp"

using namespace wtcf;

namespace {

Tensor make_input(Shape shape, Rng& rng, bool off_kink = false) {
  const auto n = static_cast<std::size_t>(numel(shape));
  auto v = off_kink ? oracle::random_vector_off_kink(n, rng) : oracle::random_vector(n, rng);
  return Tensor(std::move(shape), std::move(v), true);
}

constexpr double kFdTol = 1e-6;

}  // namespace

TEST_CASE("rng: identical seeds give identical streams") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(1234), d(1235);
  bool all_equal = true;
  for (int i = 0; i < 16; ++i) all_equal = all_equal && (c.next_u64() == d.next_u64());
  CHECK_FALSE(all_equal);
}

TEST_CASE("rng: derive is independent of parent consumption") {
  Rng a(7), b(7);
  (void)a.next_u64();
  (void)a.next_u64();
  CHECK(a.derive(3).next_u64() == b.derive(3).next_u64());
}

TEST_CASE("rng: uniform range and rough normal moments") {
  Rng rng(99);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double g = rng.normal();
    sum += g;
    sum_sq += g * g;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sum_sq / n - 1.0) < 0.02);
}

// ---------------------------------------------------------------------------
// forward-value oracles

TEST_CASE("matmul matches the naive triple loop across kernel paths") {
  Rng rng(42);
  // covers remainder rows/cols and the k-blocking path (k > 256)
  const int cases[][3] = {{3, 4, 5}, {8, 16, 16}, {13, 300, 7}, {64, 520, 33}, {100, 64, 64}};
  for (const auto& c : cases) {
    const int m = c[0], k = c[1], n = c[2];
    auto av = oracle::random_vector(static_cast<std::size_t>(m) * k, rng);
    auto bv = oracle::random_vector(static_cast<std::size_t>(k) * n, rng);
    const auto expect = oracle::matmul(av, bv, m, k, n);
    Tensor a({m, k}, av);
    Tensor b({k, n}, bv);
    const Tensor got = matmul(a, b);
    for (std::size_t i = 0; i < expect.size(); ++i)
      CHECK(got.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("batched and transposed matmul agree with flattening") {
  Rng rng(43);
  const int B = 3, m = 4, k = 6, n = 5;
  auto av = oracle::random_vector(static_cast<std::size_t>(B) * m * k, rng);
  auto bv = oracle::random_vector(static_cast<std::size_t>(B) * k * n, rng);
  Tensor a({B, m, k}, av);
  Tensor b({B, k, n}, bv);
  const auto got = matmul(a, b);
  REQUIRE(got.shape() == Shape{B, m, n});
  for (int i = 0; i < B; ++i) {
    std::vector<double> ai(av.begin() + i * m * k, av.begin() + (i + 1) * m * k);
    std::vector<double> bi(bv.begin() + i * k * n, bv.begin() + (i + 1) * k * n);
    const auto expect = oracle::matmul(ai, bi, m, k, n);
    for (int j = 0; j < m * n; ++j)
      CHECK(got.data()[static_cast<std::size_t>(i * m * n + j)] ==
            doctest::Approx(expect[static_cast<std::size_t>(j)]).epsilon(1e-12));
  }

  // a x b^T equals a x transpose(b)
  Tensor bt({B, n, k}, oracle::random_vector(static_cast<std::size_t>(B) * n * k, rng));
  const Tensor via_nt = matmul_nt(a, bt);
  const Tensor via_tr = matmul(a, transpose_last2(bt));
  for (std::size_t i = 0; i < via_nt.data().size(); ++i)
    CHECK(via_nt.data()[i] == doctest::Approx(via_tr.data()[i]).epsilon(1e-12));
}

TEST_CASE("relu forward and gradient mask") {
  Tensor x({3}, {-1.0, 0.0, 2.0}, true);
  Tensor y = relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 2.0);
  mean_all(y).backward();  // upstream 1/3 each
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == doctest::Approx(1.0 / 3));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(7);
  Tensor x = make_input({5, 9}, rng);
  Tensor y = softmax_lastdim(x);
  for (int r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (int j = 0; j < 9; ++j) sum += y.data()[static_cast<std::size_t>(r * 9 + j)];
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

// ---------------------------------------------------------------------------
// finite-difference gradient checks, one per primitive

TEST_CASE("gradients: elementwise and activation primitives") {
  Rng rng(11);
  auto scalarize = [](const Tensor& t) { return mean_all(t); };

  CHECK(grad_check([&](const Tensor& x) { return scalarize(relu(x)); },
                   make_input({4, 5}, rng, true)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return scalarize(wtcf::tanh(x)); },
                   make_input({4, 5}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return scalarize(wtcf::exp(x)); },
                   make_input({4, 5}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return scalarize(sigmoid(x)); },
                   make_input({4, 5}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return scalarize(scale(x, -1.7)); },
                   make_input({4, 5}, rng)) < kFdTol);

  Tensor other = make_input({4, 5}, rng);
  other.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return scalarize(add(x, other)); },
                   make_input({4, 5}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return scalarize(sub(other, x)); },
                   make_input({4, 5}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return scalarize(mul(x, other)); },
                   make_input({4, 5}, rng)) < kFdTol);
  // both sides of mul
  CHECK(grad_check([&](const Tensor& x) { return scalarize(mul(x, x)); },
                   make_input({4, 5}, rng)) < kFdTol);
}

TEST_CASE("gradients: matmul family") {
  Rng rng(12);
  Tensor rhs = make_input({6, 3}, rng);
  rhs.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(matmul(x, rhs)); },
                   make_input({4, 6}, rng)) < kFdTol);

  Tensor lhs = make_input({4, 6}, rng);
  lhs.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(matmul(lhs, x)); },
                   make_input({6, 3}, rng)) < kFdTol);

  Tensor lhs3 = make_input({2, 4, 6}, rng);
  lhs3.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(matmul(lhs3, x)); },
                   make_input({6, 3}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(matmul(x, rhs)); },
                   make_input({2, 4, 6}, rng)) < kFdTol);

  Tensor b3 = make_input({2, 6, 3}, rng);
  b3.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(matmul(x, b3)); },
                   make_input({2, 4, 6}, rng)) < kFdTol);

  Tensor bt3 = make_input({2, 5, 6}, rng);
  bt3.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(matmul_nt(x, bt3)); },
                   make_input({2, 4, 6}, rng)) < kFdTol);
  Tensor at3 = make_input({2, 4, 6}, rng);
  at3.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(matmul_nt(at3, x)); },
                   make_input({2, 5, 6}, rng)) < kFdTol);

  CHECK(grad_check([&](const Tensor& x) { return mean_all(transpose_last2(x)); },
                   make_input({2, 4, 6}, rng)) < kFdTol);
}

TEST_CASE("gradients: reductions, shape ops, bias") {
  Rng rng(13);
  for (int axis = 0; axis < 3; ++axis) {
    CHECK(grad_check([&](const Tensor& x) { return mean_all(sum_axis(x, axis)); },
                     make_input({3, 4, 5}, rng)) < kFdTol);
    CHECK(grad_check([&](const Tensor& x) { return mean_all(mean_axis(x, axis)); },
                     make_input({3, 4, 5}, rng)) < kFdTol);
  }
  CHECK(grad_check([](const Tensor& x) { return mean_all(x); }, make_input({7}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(softmax_lastdim(x)); },
                   make_input({4, 6}, rng)) < kFdTol);
  // softmax with a non-uniform downstream weighting (mean alone hides errors)
  Tensor weights = make_input({4, 6}, rng);
  weights.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(mul(softmax_lastdim(x), weights)); },
                   make_input({4, 6}, rng)) < kFdTol);

  CHECK(grad_check([&](const Tensor& x) { return mean_all(reshape(x, {6, 2})); },
                   make_input({3, 4}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(slice_lastdim(x, 1, 4)); },
                   make_input({3, 6}, rng)) < kFdTol);
  CHECK(grad_check(
            [&](const Tensor& x) {
              return mean_all(concat_lastdim({slice_lastdim(x, 0, 2), slice_lastdim(x, 2, 6)}));
            },
            make_input({3, 6}, rng)) < kFdTol);

  Tensor bias = make_input({5}, rng);
  bias.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(add_bias(x, bias)); },
                   make_input({3, 4, 5}, rng)) < kFdTol);
  Tensor base = make_input({3, 4, 5}, rng);
  base.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(add_bias(base, x)); },
                   make_input({5}, rng)) < kFdTol);
}

TEST_CASE("gradients: layer norm") {
  Rng rng(14);
  Tensor gain = make_input({6}, rng);
  Tensor shift = make_input({6}, rng);
  gain.set_requires_grad(false);
  shift.set_requires_grad(false);
  Tensor weights = make_input({3, 6}, rng);
  weights.set_requires_grad(false);
  auto head = [&](const Tensor& y) { return mean_all(mul(y, weights)); };
  CHECK(grad_check([&](const Tensor& x) { return head(layer_norm(x, gain, shift, 1e-5)); },
                   make_input({3, 6}, rng)) < kFdTol);
  Tensor x0 = make_input({3, 6}, rng);
  x0.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& g) { return head(layer_norm(x0, g, shift, 1e-5)); },
                   make_input({6}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& s) { return head(layer_norm(x0, gain, s, 1e-5)); },
                   make_input({6}, rng)) < kFdTol);
}

TEST_CASE("gradients: conv1d and maxpool1d") {
  Rng rng(15);
  Tensor w = make_input({4, 3, 5}, rng);
  Tensor b = make_input({4}, rng);
  w.set_requires_grad(false);
  b.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(conv1d(x, w, b, 1, 2)); },
                   make_input({2, 3, 11}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& x) { return mean_all(conv1d(x, w, b, 2, 1)); },
                   make_input({2, 3, 11}, rng)) < kFdTol);

  Tensor x0 = make_input({2, 3, 11}, rng);
  x0.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& wt) { return mean_all(conv1d(x0, wt, b, 1, 2)); },
                   make_input({4, 3, 5}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& bt) { return mean_all(conv1d(x0, w, bt, 1, 2)); },
                   make_input({4}, rng)) < kFdTol);

  CHECK(grad_check([&](const Tensor& x) { return mean_all(maxpool1d(x, 5, 2)); },
                   make_input({2, 3, 13}, rng)) < kFdTol);
}

TEST_CASE("maxpool gradient routes ties to the lowest index") {
  Tensor x({1, 1, 4}, {2.0, 2.0, 1.0, 2.0}, true);
  Tensor y = maxpool1d(x, 4, 1);
  CHECK(y.data()[0] == 2.0);
  y.backward();
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("gradients: dropout with pinned masks, bce through sigmoid") {
  Rng rng(16);
  CHECK(grad_check(
            [](const Tensor& x) {
              Rng masks(555);  // re-seeded per call so both FD probes see one mask
              return mean_all(dropout(x, 0.3, true, masks));
            },
            make_input({6, 7}, rng)) < kFdTol);

  const std::vector<double> y{1.0, 0.0, 1.0, 0.0, 1.0};
  CHECK(grad_check([&](const Tensor& z) { return bce_loss(sigmoid(z), y, 1.0); },
                   make_input({5}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& z) { return bce_loss(sigmoid(z), y, 2.5); },
                   make_input({5}, rng)) < kFdTol);
}

TEST_CASE("bce gradient through sigmoid equals (p - y)/batch") {
  Rng rng(17);
  Tensor z = make_input({8}, rng);
  Tensor p = sigmoid(z);
  std::vector<double> y(8);
  for (std::size_t i = 0; i < 8; ++i) y[i] = i % 2 ? 1.0 : 0.0;
  bce_loss(p, y, 1.0).backward();
  for (std::size_t i = 0; i < 8; ++i) {
    const double expect = (p.data()[i] - y[i]) / 8.0;
    CHECK(z.grad()[i] == doctest::Approx(expect).epsilon(1e-10));
  }
}

// ---------------------------------------------------------------------------
// grad_check harness contracts

TEST_CASE("grad_check: analytic cases") {
  Rng rng(18);
  Tensor x({3}, {1.0, 2.0, 3.0}, true);
  // f = sum(x^2): grad [2,4,6]
  Tensor loss = sum_axis(mul(x, x), 0);
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));

  // f = sum(x): error ~ 0
  CHECK(grad_check([](const Tensor& t) { return sum_axis(t, 0); }, make_input({5}, rng)) < 1e-9);

  CHECK_THROWS_AS(grad_check([](const Tensor& t) { return add(t, t); }, make_input({5}, rng)),
                  Error);
}

TEST_CASE("backward accumulates into shared parameters; zero_grad resets") {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor y = add(mul(x, x), x);  // x used three times
  mean_all(y).backward();
  // d/dx (x^2 + x)/2 = (2x + 1)/2
  CHECK(x.grad()[0] == doctest::Approx(1.5));
  CHECK(x.grad()[1] == doctest::Approx(2.5));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor x({3}, {1.0, 2.0, 3.0}, true);
  NoGradGuard ng;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

// ---------------------------------------------------------------------------
// Adam

TEST_CASE("adam: first step moves by -lr; all-zero gradients never move theta") {
  std::vector<Param> params;
  params.push_back({"theta", Tensor::zeros({1}, true)});
  params[0].tensor.grad_raw()[0] = 1.0;
  Adam opt(0.001);
  opt.step(params);
  CHECK(params[0].tensor.data()[0] == doctest::Approx(-0.001).epsilon(1e-6));

  std::vector<Param> frozen;
  frozen.push_back({"theta", Tensor::full({1}, 0.25, true)});
  Adam opt2(0.001);
  for (int i = 0; i < 20; ++i) {
    frozen[0].tensor.zero_grad();
    opt2.step(frozen);
  }
  CHECK(frozen[0].tensor.data()[0] == 0.25);
}

TEST_CASE("adam: descends (theta-3)^2 monotonically after warmup") {
  std::vector<Param> params;
  params.push_back({"theta", Tensor::zeros({1}, true)});
  Adam opt(0.01);
  double dist_at_10 = 0.0;
  double prev = 3.0;
  bool monotone = true;
  for (int step = 1; step <= 100; ++step) {
    auto& t = params[0].tensor;
    t.zero_grad();
    t.grad_raw()[0] = 2.0 * (t.data()[0] - 3.0);
    opt.step(params);
    const double dist = std::abs(t.data()[0] - 3.0);
    if (step == 10) dist_at_10 = dist;
    if (step > 10 && dist > prev + 1e-12) monotone = false;
    prev = dist;
  }
  CHECK(monotone);
  CHECK(prev < dist_at_10);
}

TEST_CASE("adam: non-finite gradient aborts with a numeric error") {
  std::vector<Param> params;
  params.push_back({"theta", Tensor::zeros({1}, true)});
  params[0].tensor.grad_raw()[0] = std::numeric_limits<double>::quiet_NaN();
  Adam opt(0.001);
  CHECK_THROWS_AS(opt.step(params), Error);
}

// ---------------------------------------------------------------------------
// dropout statistics, init schemes

TEST_CASE("dropout: eval mode and rate zero are identities") {
  Rng rng(20);
  Tensor x = make_input({4, 4}, rng);
  Rng d1(1);
  Tensor eval_out = dropout(x, 0.5, false, d1);
  CHECK(eval_out.node().get() == x.node().get());
  Tensor zero_rate = dropout(x, 0.0, true, d1);
  CHECK(zero_rate.node().get() == x.node().get());
}

TEST_CASE("dropout: Monte-Carlo mean reproduces the input within 1%") {
  Rng rng(21);
  const std::size_t n = 64;
  Tensor x({static_cast<int>(n)}, oracle::random_vector(n, rng, 0.5, 2.0));
  Rng mask_rng(777);
  std::vector<double> mean(n, 0.0);
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) {
    Tensor y = dropout(x, 0.1, true, mask_rng);
    for (std::size_t i = 0; i < n; ++i) mean[i] += y.data()[i];
  }
  for (std::size_t i = 0; i < n; ++i)
    CHECK(mean[i] / trials == doctest::Approx(x.data()[i]).epsilon(0.01));
}

TEST_CASE("init: zeros, ones, and the Kaiming fan-in bound") {
  Rng rng(22);
  Linear linear(10, 4, true, rng);
  for (double v : linear.bias.data()) CHECK(v == 0.0);
  LayerNorm ln(8);
  for (double v : ln.gain.data()) CHECK(v == 1.0);
  for (double v : ln.shift.data()) CHECK(v == 0.0);

  const int fan_in = 50;
  const double bound = kaiming_bound(fan_in);
  Tensor w = kaiming_uniform({1000000}, fan_in, rng);
  double mx = 0.0;
  for (double v : w.data()) mx = std::max(mx, std::abs(v));
  CHECK(mx <= bound);
  CHECK(mx > 0.999 * bound);  // a million draws reach the bound's neighborhood

  const double xb = xavier_bound(30, 70);
  Tensor xw = xavier_uniform({4000}, 30, 70, rng);
  double xmax = 0.0;
  for (double v : xw.data()) xmax = std::max(xmax, std::abs(v));
  CHECK(xmax <= xb);
}

TEST_CASE("dimension errors name the op and shapes") {
  Tensor a({2, 3}, std::vector<double>(6, 1.0));
  Tensor b({4, 5}, std::vector<double>(20, 1.0));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), Error);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), Error);
}

// ---------------------------------------------------------------------------
// fused / layout primitives added for the training hot path

TEST_CASE("linear: equals matmul+bias composition and passes gradient checks") {
  Rng rng(30);
  Tensor x = make_input({3, 4, 6}, rng);
  Tensor w = make_input({6, 5}, rng);
  Tensor b = make_input({5}, rng);

  Tensor fused = linear(x, w, b);
  Tensor composed = add_bias(matmul(x, w), b);
  for (std::size_t i = 0; i < fused.data().size(); ++i)
    CHECK(fused.data()[i] == doctest::Approx(composed.data()[i]).epsilon(1e-12));

  Tensor w2 = make_input({6, 5}, rng);
  Tensor b2 = make_input({5}, rng);
  w2.set_requires_grad(false);
  b2.set_requires_grad(false);
  for (FusedAct act : {FusedAct::none, FusedAct::relu, FusedAct::tanh}) {
    CHECK(grad_check([&](const Tensor& t) { return mean_all(linear(t, w2, b2, act)); },
                     make_input({3, 4, 6}, rng, true)) < kFdTol);
    Tensor x0 = make_input({3, 4, 6}, rng, true);
    x0.set_requires_grad(false);
    CHECK(grad_check([&](const Tensor& t) { return mean_all(linear(x0, t, b2, act)); },
                     make_input({6, 5}, rng)) < kFdTol);
    CHECK(grad_check([&](const Tensor& t) { return mean_all(linear(x0, w2, t, act)); },
                     make_input({5}, rng)) < kFdTol);
  }
  // biasless form
  CHECK(grad_check([&](const Tensor& t) { return mean_all(linear(t, w2, Tensor())); },
                   make_input({3, 4, 6}, rng)) < kFdTol);
}

TEST_CASE("channel-last conv/pool agree with the channel-first ops") {
  Rng rng(31);
  const int batch = 2, cin = 3, len = 17, cout = 4, kernel = 5;
  Tensor x_cf = make_input({batch, cin, len}, rng);
  Tensor x_cl = transpose_last2(x_cf);
  Tensor w = make_input({cout, cin, kernel}, rng);
  Tensor b = make_input({cout}, rng);

  for (FusedAct act : {FusedAct::none, FusedAct::relu}) {
    Tensor y_cf = conv1d(x_cf, w, b, 1, 2, act);
    Tensor y_cl = conv1d_cl(x_cl, w, b, 1, 2, act);
    Tensor y_cl_as_cf = transpose_last2(y_cl);
    REQUIRE(y_cf.shape() == y_cl_as_cf.shape());
    for (std::size_t i = 0; i < y_cf.data().size(); ++i)
      CHECK(y_cf.data()[i] == doctest::Approx(y_cl_as_cf.data()[i]).epsilon(1e-12));
  }

  Tensor p_cf = maxpool1d(x_cf, 5, 2);
  Tensor p_cl = maxpool1d_cl(x_cl, 5, 2);
  Tensor p_cl_as_cf = transpose_last2(p_cl);
  for (std::size_t i = 0; i < p_cf.data().size(); ++i)
    CHECK(p_cf.data()[i] == p_cl_as_cf.data()[i]);
}

TEST_CASE("gradients: channel-last conv and pool") {
  Rng rng(32);
  Tensor w = make_input({4, 3, 5}, rng);
  Tensor b = make_input({4}, rng);
  w.set_requires_grad(false);
  b.set_requires_grad(false);
  for (FusedAct act : {FusedAct::none, FusedAct::relu, FusedAct::tanh})
    CHECK(grad_check([&](const Tensor& t) { return mean_all(conv1d_cl(t, w, b, 1, 2, act)); },
                     make_input({2, 11, 3}, rng, true)) < kFdTol);
  Tensor x0 = make_input({2, 11, 3}, rng, true);
  x0.set_requires_grad(false);
  CHECK(grad_check([&](const Tensor& t) { return mean_all(conv1d_cl(x0, t, b, 1, 2)); },
                   make_input({4, 3, 5}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& t) { return mean_all(conv1d_cl(x0, w, t, 1, 2)); },
                   make_input({4}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& t) { return mean_all(maxpool1d_cl(t, 4, 2)); },
                   make_input({2, 13, 3}, rng)) < kFdTol);
  // fused relu conv also checks the weight path through the mask
  CHECK(grad_check(
            [&](const Tensor& t) { return mean_all(conv1d_cl(x0, t, b, 1, 2, FusedAct::relu)); },
            make_input({4, 3, 5}, rng)) < kFdTol);
}

TEST_CASE("split/merge heads: round trip, slice equivalence, gradients") {
  Rng rng(33);
  const int batch = 2, t = 5, heads = 4, dk = 3;
  Tensor x = make_input({batch, t, heads * dk}, rng);

  Tensor grouped = split_heads(x, heads);
  REQUIRE(grouped.shape() == Shape{batch * heads, t, dk});
  Tensor back = merge_heads(grouped, heads);
  for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(back.data()[i] == x.data()[i]);

  // head h of split == slice of the feature axis
  for (int h = 0; h < heads; ++h) {
    Tensor sl = slice_lastdim(x, h * dk, (h + 1) * dk);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < t; ++i)
        for (int c = 0; c < dk; ++c)
          CHECK(grouped.data()[((static_cast<std::size_t>(b) * heads + h) * t + i) * dk + c] ==
                sl.data()[(static_cast<std::size_t>(b) * t + i) * dk + c]);
  }

  CHECK(grad_check([&](const Tensor& v) { return mean_all(mul(split_heads(v, heads), split_heads(v, heads))); },
                   make_input({batch, t, heads * dk}, rng)) < kFdTol);
  CHECK(grad_check([&](const Tensor& v) { return mean_all(mul(merge_heads(v, heads), merge_heads(v, heads))); },
                   make_input({batch * heads, t, dk}, rng)) < kFdTol);
}

TEST_CASE("prescaled softmax equals softmax of scaled input") {
  Rng rng(34);
  Tensor x = make_input({3, 7}, rng);
  const double c = 0.3536;
  Tensor direct = softmax_lastdim(scale(x, c));
  Tensor fused = softmax_lastdim(x, c);
  for (std::size_t i = 0; i < direct.data().size(); ++i)
    CHECK(fused.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-12));

  Tensor weights = make_input({3, 7}, rng);
  weights.set_requires_grad(false);
  CHECK(grad_check(
            [&](const Tensor& t) { return mean_all(mul(softmax_lastdim(t, c), weights)); },
            make_input({3, 7}, rng)) < kFdTol);
}
