#include "wtcf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "wtcf/common.hpp"

namespace wtcf {

namespace {

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& fn, Tensor x, double h) {
  if (!x.requires_grad()) throw usage_error("grad_check: input does not require grad");
  x.zero_grad();
  Tensor out = fn(x);
  if (out.size() != 1)
    throw usage_error("grad_check: function output " + shape_str(out.shape()) + " is not scalar");
  out.backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  double worst = 0.0;
  auto values = x.raw();
  NoGradGuard ng;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double fp = fn(x).item();
    values[i] = saved - h;
    const double fm = fn(x).item();
    values[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, rel_err(analytic[i], numeric));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Param>& params,
                         double sample_fraction, Rng& rng, double h) {
  if (params.empty()) throw usage_error("grad_check_params: empty parameter list");
  for (auto& p : params) p.tensor.zero_grad();
  Tensor out = loss_fn();
  if (out.size() != 1)
    throw usage_error("grad_check_params: loss " + shape_str(out.shape()) + " is not scalar");
  out.backward();

  struct Coord {
    std::size_t param, index;
  };
  std::vector<Coord> coords;
  std::size_t total = 0;
  for (const auto& p : params) total += static_cast<std::size_t>(p.tensor.size());
  const std::size_t want = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                        std::llround(sample_fraction * total)));
  for (std::size_t n = 0; n < want; ++n) {
    std::size_t flat = static_cast<std::size_t>(rng.uniform_int(total));
    std::size_t pi = 0;
    while (flat >= static_cast<std::size_t>(params[pi].tensor.size())) {
      flat -= static_cast<std::size_t>(params[pi].tensor.size());
      ++pi;
    }
    coords.push_back({pi, flat});
  }

  std::vector<std::vector<double>> analytic(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    analytic[i].assign(params[i].tensor.grad().begin(), params[i].tensor.grad().end());

  double worst = 0.0;
  NoGradGuard ng;
  for (const auto& c : coords) {
    auto values = params[c.param].tensor.raw();
    const double saved = values[c.index];
    values[c.index] = saved + h;
    const double fp = loss_fn().item();
    values[c.index] = saved - h;
    const double fm = loss_fn().item();
    values[c.index] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, rel_err(analytic[c.param][c.index], numeric));
  }
  return worst;
}

}  // namespace wtcf
