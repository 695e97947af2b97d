#pragma once

#include <functional>
#include <span>

#include "wtcf/nn.hpp"
#include "wtcf/tensor.hpp"

namespace wtcf {

// Central finite-difference verification of reverse-mode gradients.
// Relative error per coordinate: |analytic - numeric| / max(1, |analytic|, |numeric|).
//
// The function must be a pure map from the current tensor values to a scalar;
// anything stochastic inside (dropout) has to be re-seeded per call so both
// f(x+h) and f(x-h) see identical draws.

// d fn / dx over every coordinate of x. x must require grad.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, Tensor x, double h = 1e-6);

// Same sweep, but over a sampled fraction of the coordinates of a whole
// parameter set; loss_fn reads the parameters in place.
double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Param>& params,
                         double sample_fraction, Rng& rng, double h = 1e-6);

}  // namespace wtcf
