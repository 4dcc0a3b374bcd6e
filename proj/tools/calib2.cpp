// Scratch micro-profile (temporary).
#include <chrono>
#include <cstdio>
#include "oatlab/attacks.hpp"
#include "oatlab/data.hpp"
#include "oatlab/model.hpp"
#include "oatlab/ops.hpp"
#include "oatlab/training.hpp"

using namespace oatlab;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int main() {
  Dataset train = synth_glyphs(26, 10, 16, 0.15, 1);
  auto [x, y] = train.batch([]{ std::vector<std::int64_t> r(128); for (int i=0;i<128;++i) r[i]=i; return r; }());
  ModelSpec spec; spec.conditional = false; spec.bn_style = BnStyle::normal;
  ConditionalNet net(spec, 7);
  ForwardOptions eo; eo.mode = Mode::eval;
  ForwardOptions to; to.mode = Mode::train;

  { auto t0 = Clock::now(); for (int i=0;i<20;++i) { NoGradScope ng; net.forward(x, eo); } std::printf("eval fwd B=128: %.2f ms\n", ms_since(t0)/20); }
  { auto t0 = Clock::now(); for (int i=0;i<20;++i) { TapeScope s; Tensor l = softmax_xent(net.forward(x, to), y); s.tape().backward(l); } std::printf("train fwd+bwd: %.2f ms\n", ms_since(t0)/20); }
  { ParamFreezeGuard fr(net);
    auto t0 = Clock::now(); for (int i=0;i<20;++i) { Tensor xc = x.clone(); xc.set_requires_grad(true); TapeScope s; Tensor l = softmax_xent(net.forward(xc, eo), y); s.tape().backward(l); } std::printf("attack-iter fwd+bwd_x: %.2f ms\n", ms_since(t0)/20); }
  AttackSpec atk; std::mt19937_64 rng(3);
  { auto t0 = Clock::now(); for (int i=0;i<5;++i) run_attack(net, x, y, 1.0, 1.0, atk, &rng); std::printf("pgd7 gen: %.2f ms\n", ms_since(t0)/5); }
  return 0;
}
