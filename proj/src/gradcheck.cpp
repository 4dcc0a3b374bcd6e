#include "oatlab/gradcheck.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace oatlab {

double gradcheck(const std::function<Tensor()>& loss_fn, Tensor wrt, double h) {
  if (precision() != Precision::f64)
    throw std::logic_error("gradcheck requires 64-bit mode");
  if (h <= 0.0) throw std::invalid_argument("gradcheck: h must be positive");

  const bool prev_rg = wrt.requires_grad();
  wrt.set_requires_grad(true);
  wrt.zero_grad();
  std::vector<double> analytic;
  {
    TapeScope scope;
    Tensor loss = loss_fn();
    if (loss.size() != 1) throw std::invalid_argument("gradcheck: loss must be scalar");
    scope.tape().backward(loss);
    analytic = wrt.grad();
  }
  wrt.set_requires_grad(prev_rg);

  double max_err = 0.0;
  {
    NoGradScope no_grad;
    auto& xv = wrt.mutable_data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double saved = xv[i];
      xv[i] = saved + h;
      const double fp = loss_fn().item();
      xv[i] = saved - h;
      const double fm = loss_fn().item();
      xv[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max(1e-12, std::abs(analytic[i]) + std::abs(numeric));
      max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace oatlab
