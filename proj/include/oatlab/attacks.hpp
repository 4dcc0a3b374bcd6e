#pragma once

#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "oatlab/model.hpp"
#include "oatlab/tensor.hpp"

namespace oatlab {

enum class AttackKind { fgsm, pgd, mifgsm };

struct AttackSpec {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 8.0 / 255.0;  // L-inf budget in [0,1] pixel units
  double step = 2.0 / 255.0;     // per-iteration size (MI-FGSM derives eps/iters)
  int iters = 7;
  double mu = 1.0;               // momentum decay, MI-FGSM only
  bool random_start = true;      // PGD only
};

class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Eval-mode logits for a candidate input; must not touch running
/// statistics.
using ForwardFn = std::function<Tensor(const Tensor&)>;

/// Single ascent step: clip01(x + eps * sign(grad_x CE)). No random start.
Tensor fgsm(const ForwardFn& f, const Tensor& x, const std::vector<int>& y,
            const AttackSpec& spec);

/// Iterated ascent projected onto the eps-ball around x intersected with
/// [0,1]. Optional uniform random start in [-eps, eps].
Tensor pgd(const ForwardFn& f, const Tensor& x, const std::vector<int>& y, const AttackSpec& spec,
           std::mt19937_64* rng = nullptr);

/// Momentum attack: g <- mu*g + grad/||grad||_1 (per sample), step eps/iters,
/// no random start.
Tensor mi_fgsm(const ForwardFn& f, const Tensor& x, const std::vector<int>& y,
               const AttackSpec& spec);

/// Dispatch on spec.kind.
Tensor run_attack(const ForwardFn& f, const Tensor& x, const std::vector<int>& y,
                  const AttackSpec& spec, std::mt19937_64* rng = nullptr);

/// White-box attack against a conditional net at (lambda, width): eval-mode
/// forwards, parameters frozen for the duration, per-sample encodings fixed
/// to the lambda the samples will be evaluated (or trained) with.
Tensor run_attack(ConditionalNet& net, const Tensor& x, const std::vector<int>& y, double lambda,
                  double width, const AttackSpec& spec, std::mt19937_64* rng = nullptr,
                  const Tensor& encodings = {});

/// Freezes requires_grad on all parameters for a scope (attack generation
/// differentiates with respect to the input only).
class ParamFreezeGuard {
 public:
  explicit ParamFreezeGuard(ConditionalNet& net) : net_(&net) {
    net_->set_params_requires_grad(false);
  }
  ~ParamFreezeGuard() { net_->set_params_requires_grad(true); }
  ParamFreezeGuard(const ParamFreezeGuard&) = delete;
  ParamFreezeGuard& operator=(const ParamFreezeGuard&) = delete;

 private:
  ConditionalNet* net_;
};

}  // namespace oatlab
