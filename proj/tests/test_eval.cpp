#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oatlab/data.hpp"
#include "oatlab/eval.hpp"
#include "oatlab/ops.hpp"
#include "oatlab/rng.hpp"

using namespace oatlab;

namespace {

Dataset tiny_set(std::uint64_t seed, int per_class = 4) {
  return synth_glyphs(per_class, 10, 16, 0.2, seed);
}

// Labels replaced by the model's own predictions.
Dataset self_labeled(ConditionalNet& net, Dataset ds, double lambda) {
  NoGradScope ng;
  std::vector<std::int64_t> rows(static_cast<std::size_t>(ds.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<std::int64_t>(i);
  auto [x, y] = ds.batch(rows);
  ForwardOptions o;
  o.lambda = lambda;
  o.mode = Mode::eval;
  ds.labels = argmax_rows(net.forward(x, o));
  return ds;
}

}  // namespace

TEST_CASE("eval_sa: a model agreeing with the labels scores exactly 100") {
  ModelSpec spec;
  ConditionalNet net(spec, 3);
  Dataset ds = self_labeled(net, tiny_set(11), 0.2);
  CHECK(eval_sa(net, ds, 0.2, 1.0) == 100.0);
  CHECK_THROWS(eval_sa(net, Dataset{}, 0.2, 1.0));
}

TEST_CASE("eval_sa: a constant classifier scores chance on a balanced set") {
  ModelSpec spec;
  ConditionalNet net(spec, 5);
  // Zero every parameter the logits depend on, then bias class 4.
  for (auto& [name, t] : net.parameters())
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  net.dense_bias().mutable_data()[4] = 3.0;

  Dataset ds = tiny_set(13);
  CHECK(eval_sa(net, ds, 0.3, 1.0) == 10.0);

  // Zero input gradient: attacks cannot move anything, RA stays at chance.
  AttackSpec atk;
  atk.random_start = false;
  CHECK(eval_ra(net, ds, 0.3, 1.0, atk, 1) == 10.0);
}

TEST_CASE("eval_sa is invariant to positive rescaling of the logits") {
  ModelSpec spec;
  ConditionalNet net(spec, 7);
  Dataset ds = tiny_set(17);
  const double before = eval_sa(net, ds, 0.1, 1.0);
  auto& w = net.dense_weight().mutable_data();
  auto& b = net.dense_bias().mutable_data();
  for (auto& v : w) v *= 3.7;
  for (auto& v : b) v *= 3.7;
  CHECK(eval_sa(net, ds, 0.1, 1.0) == before);
}

TEST_CASE("eval_ra with a zero-budget attack equals eval_sa exactly") {
  ModelSpec spec;
  ConditionalNet net(spec, 9);
  Dataset ds = tiny_set(19);
  AttackSpec atk;
  atk.epsilon = 0.0;
  atk.random_start = false;
  for (double lam : {0.0, 0.5}) {
    CHECK(eval_ra(net, ds, lam, 1.0, atk, 3) == eval_sa(net, ds, lam, 1.0));
  }
}

TEST_CASE("sweep_tradeoff: one row per (lambda, width), deterministic per seed") {
  ModelSpec spec;
  spec.widths = {0.5, 1.0};
  ConditionalNet net(spec, 11);
  Dataset ds = tiny_set(23, 2);
  AttackSpec atk;
  atk.iters = 2;

  const std::vector<double> s1 = {0.0, 0.1, 0.2, 0.3, 0.4, 1.0};
  auto pts = sweep_tradeoff(net, ds, s1, {1.0}, atk, 5);
  CHECK(pts.size() == 6);

  const std::vector<double> s2 = {0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0};
  CHECK(sweep_tradeoff(net, ds, s2, {1.0}, atk, 5).size() == 8);
  CHECK(sweep_tradeoff(net, ds, s1, {0.5, 1.0}, atk, 5).size() == 12);

  auto again = sweep_tradeoff(net, ds, s1, {1.0}, atk, 5);
  CHECK(tradeoff_csv(pts) == tradeoff_csv(again));

  CHECK_THROWS(sweep_tradeoff(net, ds, {1.2}, {1.0}, atk, 5));
}

TEST_CASE("tradeoff_csv: fixed header and two-decimal percentages") {
  TradeoffPoint p;
  p.lambda = 0.1;
  p.width = 0.75;
  p.sa = 93.456;
  p.ra = 7.0;
  p.attack = "pgd";
  p.epsilon = 8.0 / 255.0;
  p.steps = 7;
  p.seed = 42;
  CHECK(tradeoff_csv({p}) ==
        "lambda,width,sa,ra,attack,epsilon,steps,seed\n"
        "0.1,0.75,93.46,7.00,pgd,0.031372549,7,42\n");
}

TEST_CASE("jacobian_saliency: zero for constant models, input-shaped, matches FD") {
  ModelSpec spec;
  ConditionalNet constant(spec, 13);
  for (auto& [name, t] : constant.parameters())
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  Dataset ds = tiny_set(29, 2);
  auto [x, y] = ds.batch({0});
  SaliencyMap flat = jacobian_saliency(constant, x, y[0], 0.2);
  CHECK(flat.values.shape() == Shape{1, 16, 16});
  for (double v : flat.values.data()) CHECK(v == 0.0);

  // Central-difference oracle on a live model, 64-bit mode.
  PrecisionGuard mode(Precision::f64);
  ConditionalNet net(spec, 15);
  SaliencyMap map = jacobian_saliency(net, x, y[0], 0.3);
  const double h = 1e-5;
  Tensor probe = x.clone();
  ForwardOptions o;
  o.lambda = 0.3;
  o.mode = Mode::eval;
  NoGradScope ng;
  double max_rel = 0.0;
  int checked = 0;
  for (std::size_t i = 0; i < probe.data().size(); i += 7) {  // sampled coordinates
    const double saved = probe.mutable_data()[i];
    probe.mutable_data()[i] = saved + h;
    const double fp = softmax_xent(net.forward(probe, o), {y[0]}).item();
    probe.mutable_data()[i] = saved - h;
    const double fm = softmax_xent(net.forward(probe, o), {y[0]}).item();
    probe.mutable_data()[i] = saved;
    const double f0 = softmax_xent(net.forward(probe, o), {y[0]}).item();
    // Skip coordinates whose secant straddles an activation kink.
    const double dplus = (fp - f0) / h, dminus = (f0 - fm) / h;
    if (std::abs(dplus - dminus) > 1e-4 * std::max(1.0, std::abs(dplus) + std::abs(dminus)))
      continue;
    ++checked;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = map.values.data()[i];
    const double denom = std::max(1e-12, std::abs(analytic) + std::abs(numeric));
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
  }
  CHECK(checked > 20);
  CHECK(max_rel < 1e-4);
}

TEST_CASE("flops_count: dense arithmetic, slimming monotonicity, conditioning overhead") {
  ModelSpec spec;
  spec.widths = {0.5, 0.75, 1.0};

  // Independent recomputation of the full-width count.
  const std::int64_t conv1 = 16 * 16 * 16 * (1 * 3 * 3);
  const std::int64_t conv2 = 8 * 8 * 32 * (16 * 4 * 4);
  const std::int64_t bn = 16 * 16 * 16 + 8 * 8 * 32;
  const std::int64_t dense = 32 * 10;
  const std::int64_t film = 2 * (128 * 16 + 16 * 16) + 2 * (128 * 32 + 32 * 32);
  CHECK(flops_count(spec, 1.0) == conv1 + conv2 + bn + dense + film);
  CHECK(film_flops(spec, 1.0) == film);

  CHECK(flops_count(spec, 0.5) < flops_count(spec, 0.75));
  CHECK(flops_count(spec, 0.75) < flops_count(spec, 1.0));

  for (double w : spec.widths) {
    const double overhead = static_cast<double>(film_flops(spec, w)) /
                            static_cast<double>(flops_count(spec, w) - film_flops(spec, w));
    CHECK(overhead < 0.05);
  }
  CHECK_THROWS(flops_count(spec, 0.6));

  ModelSpec plain = spec;
  plain.conditional = false;
  CHECK(film_flops(plain, 1.0) == 0);
}

TEST_CASE("saliency_alignment produces a finite mean cosine in [0,1] here") {
  ModelSpec spec;
  ConditionalNet net(spec, 17);
  Dataset ds = tiny_set(31, 2);
  const double a = saliency_alignment(net, ds, 0.5, 10);
  CHECK(std::isfinite(a));
  CHECK(a >= -1.0);
  CHECK(a <= 1.0);
}
