#include "oatlab/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "oatlab/ops.hpp"
#include "oatlab/rng.hpp"

namespace oatlab {

namespace {

void validate(const AttackSpec& spec) {
  if (spec.epsilon < 0.0) throw AttackError("attack: epsilon must be >= 0");
  if (spec.kind != AttackKind::fgsm) {
    if (spec.iters < 1) throw AttackError("attack: iters must be >= 1");
    if (spec.kind == AttackKind::pgd && spec.step <= 0.0)
      throw AttackError("attack: step must be > 0");
  }
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// d(mean CE)/dx at x. Parameters of f must not require grad.
std::vector<double> input_gradient(const ForwardFn& f, const Tensor& x,
                                   const std::vector<int>& y) {
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  TapeScope scope;
  Tensor loss = softmax_xent(f(probe), y);
  scope.tape().backward(loss);
  const std::vector<double>& g = probe.grad();
  for (double v : g)
    if (std::isnan(v)) throw AttackError("attack: NaN input gradient");
  return g;
}

}  // namespace

Tensor fgsm(const ForwardFn& f, const Tensor& x, const std::vector<int>& y,
            const AttackSpec& spec) {
  validate(spec);
  const std::vector<double> g = input_gradient(f, x, y);
  Tensor adv = x.clone();
  adv.set_requires_grad(false);
  auto& av = adv.mutable_data();
  for (std::size_t i = 0; i < av.size(); ++i)
    av[i] = store_value(std::clamp(av[i] + spec.epsilon * sign(g[i]), 0.0, 1.0));
  return adv;
}

Tensor pgd(const ForwardFn& f, const Tensor& x, const std::vector<int>& y, const AttackSpec& spec,
           std::mt19937_64* rng) {
  validate(spec);
  const auto& origin = x.data();
  Tensor cur = x.clone();
  cur.set_requires_grad(false);
  auto& cv = cur.mutable_data();
  if (spec.random_start) {
    if (!rng) throw AttackError("pgd: random start requires an RNG");
    for (std::size_t i = 0; i < cv.size(); ++i) {
      const double delta = rand_uniform(*rng, -spec.epsilon, spec.epsilon);
      cv[i] = store_value(std::clamp(cv[i] + delta, 0.0, 1.0));
    }
  }
  for (int it = 0; it < spec.iters; ++it) {
    const std::vector<double> g = input_gradient(f, cur, y);
    for (std::size_t i = 0; i < cv.size(); ++i) {
      double v = cv[i] + spec.step * sign(g[i]);
      v = std::clamp(v, origin[i] - spec.epsilon, origin[i] + spec.epsilon);
      cv[i] = store_value(std::clamp(v, 0.0, 1.0));
    }
  }
  return cur;
}

Tensor mi_fgsm(const ForwardFn& f, const Tensor& x, const std::vector<int>& y,
               const AttackSpec& spec) {
  validate(spec);
  const double step = spec.epsilon / static_cast<double>(spec.iters);
  const auto& origin = x.data();
  const std::int64_t B = x.dim(0);
  const std::int64_t per_sample = x.size() / std::max<std::int64_t>(B, 1);

  Tensor cur = x.clone();
  cur.set_requires_grad(false);
  auto& cv = cur.mutable_data();
  std::vector<double> momentum(cv.size(), 0.0);
  for (int it = 0; it < spec.iters; ++it) {
    const std::vector<double> g = input_gradient(f, cur, y);
    for (std::int64_t b = 0; b < B; ++b) {
      double l1 = 0.0;
      for (std::int64_t i = 0; i < per_sample; ++i)
        l1 += std::abs(g[static_cast<std::size_t>(b * per_sample + i)]);
      for (std::int64_t i = 0; i < per_sample; ++i) {
        const std::size_t idx = static_cast<std::size_t>(b * per_sample + i);
        const double normalized = l1 > 0.0 ? g[idx] / l1 : 0.0;
        momentum[idx] = spec.mu * momentum[idx] + normalized;
      }
    }
    for (std::size_t i = 0; i < cv.size(); ++i) {
      double v = cv[i] + step * sign(momentum[i]);
      v = std::clamp(v, origin[i] - spec.epsilon, origin[i] + spec.epsilon);
      cv[i] = store_value(std::clamp(v, 0.0, 1.0));
    }
  }
  return cur;
}

Tensor run_attack(const ForwardFn& f, const Tensor& x, const std::vector<int>& y,
                  const AttackSpec& spec, std::mt19937_64* rng) {
  switch (spec.kind) {
    case AttackKind::fgsm: return fgsm(f, x, y, spec);
    case AttackKind::pgd: return pgd(f, x, y, spec, rng);
    case AttackKind::mifgsm: return mi_fgsm(f, x, y, spec);
  }
  throw AttackError("attack: unknown kind");
}

Tensor run_attack(ConditionalNet& net, const Tensor& x, const std::vector<int>& y, double lambda,
                  double width, const AttackSpec& spec, std::mt19937_64* rng,
                  const Tensor& encodings) {
  ParamFreezeGuard freeze(net);
  ForwardFn f = [&net, lambda, width, &encodings](const Tensor& input) {
    ForwardOptions options;
    options.lambda = lambda;
    options.width = width;
    options.mode = Mode::eval;
    options.encodings = encodings;
    return net.forward(input, options);
  };
  return run_attack(f, x, y, spec, rng);
}

}  // namespace oatlab
