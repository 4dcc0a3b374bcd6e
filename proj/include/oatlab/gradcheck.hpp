#pragma once

#include <functional>

#include "oatlab/tensor.hpp"

namespace oatlab {

/// Central-difference check of the tape gradient of `loss_fn` with respect
/// to `wrt`. `loss_fn` must return a scalar and read `wrt` (by handle) each
/// time it runs. Requires 64-bit mode. Returns the maximum over coordinates
/// of |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
double gradcheck(const std::function<Tensor()>& loss_fn, Tensor wrt, double h = 1e-5);

}  // namespace oatlab
