#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oatlab/gradcheck.hpp"
#include "oatlab/layers.hpp"
#include "oatlab/model.hpp"
#include "oatlab/ops.hpp"
#include "oatlab/rng.hpp"

using namespace oatlab;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rand_uniform(rng, lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

double dot_cols(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("encoder: RO columns are orthonormal and grid values hit their column") {
  const std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 1.0};
  LambdaEncoder enc = LambdaEncoder::make(EncoderScheme::ro, 128, grid, 99);
  CHECK(enc.orthonormality_defect() < 1e-6);

  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto ei = enc.encode(grid[i]);
    CHECK(ei == std::vector<double>(enc.matrix.begin() + static_cast<std::ptrdiff_t>(i) * 128,
                                    enc.matrix.begin() + static_cast<std::ptrdiff_t>(i + 1) * 128));
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const double want = i == j ? 1.0 : 0.0;
      CHECK(dot_cols(ei, enc.encode(grid[j])) == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("encoder: scheme none passes the scalar through") {
  LambdaEncoder enc = LambdaEncoder::make(EncoderScheme::none, 1, {0.0, 1.0}, 0);
  CHECK(enc.encode(0.3) == std::vector<double>{0.3});
  CHECK(enc.dim == 1);
}

TEST_CASE("encoder: DCT-8 Gram matrix is the identity (explicit DCT-II oracle)") {
  const std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0};
  LambdaEncoder enc = LambdaEncoder::make(EncoderScheme::dct, 8, grid, 0);

  // Independent construction of the orthonormal DCT-II matrix.
  const double pi = 3.14159265358979323846;
  for (int n = 0; n < 8; ++n) {
    const auto col = enc.encode(grid[static_cast<std::size_t>(n)]);
    for (int k = 0; k < 8; ++k) {
      const double s = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      const double want = s * std::cos(pi * (2 * n + 1) * k / 16.0);
      CHECK(col[static_cast<std::size_t>(k)] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  CHECK(enc.orthonormality_defect() < 1e-6);

  CHECK_THROWS(LambdaEncoder::make(EncoderScheme::dct, 4, grid, 0));  // |grid| > d
}

TEST_CASE("encoder: unseen lambdas interpolate to unit vectors, continuously") {
  const std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 1.0};
  LambdaEncoder enc = LambdaEncoder::make(EncoderScheme::ro, 64, grid, 3);
  for (double lam : {0.05, 0.15, 0.35, 0.5, 0.7, 0.9, 0.99}) {
    const auto v = enc.encode(lam);
    CHECK(std::sqrt(dot_cols(v, v)) == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Approaching a grid point from either side converges to its column.
  const auto at = enc.encode(0.2);
  const auto near = enc.encode(0.2001);
  CHECK(dot_cols(at, near) == doctest::Approx(1.0).epsilon(1e-4));

  CHECK_THROWS(enc.encode(-0.1));
  CHECK_THROWS(enc.encode(1.1));
  CHECK_THROWS(LambdaEncoder::make(EncoderScheme::ro, 64, {}, 3));
}

TEST_CASE("batchnorm_forward: train statistics land on (beta, gamma)") {
  std::mt19937_64 rng(5);
  BatchNormState bn = BatchNormState::make(3);
  bn.gamma = Tensor::from_data({3}, {1.5, 0.5, 2.0}, true);
  bn.beta = Tensor::from_data({3}, {0.3, -0.2, 0.0}, true);

  Tensor h = random_tensor({8, 3, 4, 4}, rng, -2.0, 3.0);  // 128 values per channel
  Tensor y = batchnorm_forward(bn, h, Mode::train);

  for (std::int64_t c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (std::int64_t b = 0; b < 8; ++b)
      for (std::int64_t i = 0; i < 16; ++i) {
        const double v = y.data()[static_cast<std::size_t>((b * 3 + c) * 16 + i)];
        s += v;
        s2 += v * v;
      }
    const double m = s / 128.0;
    const double sd = std::sqrt(s2 / 128.0 - m * m);
    CHECK(m == doctest::Approx(bn.beta.data()[static_cast<std::size_t>(c)]).epsilon(1e-3));
    CHECK(sd == doctest::Approx(std::abs(bn.gamma.data()[static_cast<std::size_t>(c)]))
                    .epsilon(1e-3));
  }

  // Running statistics fold in with momentum 0.1 from (0, 1) init.
  std::vector<double> mu, var;
  batchnorm_train(h, bn.gamma, bn.beta, bn.eps, &mu, &var);
  BatchNormState fresh = BatchNormState::make(3);
  batchnorm_forward(fresh, h, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(fresh.running_mean[c] == doctest::Approx(0.1 * mu[c]).epsilon(1e-6));
    CHECK(fresh.running_var[c] == doctest::Approx(0.9 + 0.1 * var[c]).epsilon(1e-6));
  }
}

TEST_CASE("batchnorm_forward: constant channel collapses to beta in train mode") {
  BatchNormState bn = BatchNormState::make(2);
  bn.beta = Tensor::from_data({2}, {0.7, -0.1}, true);
  Tensor h = Tensor::full({4, 2, 2, 2}, 3.25);
  Tensor y = batchnorm_forward(bn, h, Mode::train);
  for (std::int64_t b = 0; b < 4; ++b)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t i = 0; i < 4; ++i)
        CHECK(y.data()[static_cast<std::size_t>((b * 2 + c) * 4 + i)] ==
              doctest::Approx(bn.beta.data()[static_cast<std::size_t>(c)]).epsilon(1e-5));
}

TEST_CASE("batchnorm_forward: eval with unit statistics is the identity") {
  std::mt19937_64 rng(6);
  BatchNormState bn = BatchNormState::make(4);
  Tensor h = random_tensor({2, 4, 3, 3}, rng);
  Tensor y = batchnorm_forward(bn, h, Mode::eval);
  for (std::size_t i = 0; i < h.data().size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(h.data()[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm_forward: tiny normalization set falls back without a stats update") {
  BatchNormState bn = BatchNormState::make(2);
  Tensor h = Tensor::from_data({1, 2, 1, 1}, {0.4, -0.6});
  const auto mean_before = bn.running_mean;
  const auto var_before = bn.running_var;
  bool fallback = false;
  Tensor y = batchnorm_forward(bn, h, Mode::train, &fallback);
  CHECK(fallback);
  CHECK(bn.running_mean == mean_before);
  CHECK(bn.running_var == var_before);
  // Eval-style normalization against (0,1) statistics.
  CHECK(y.data()[0] == doctest::Approx(0.4).epsilon(1e-4));
}

TEST_CASE("dual_bn_forward: lambda routes branches; the idle branch is untouched") {
  std::mt19937_64 rng(7);
  DualBNState dbn = DualBNState::make(3);
  Tensor h = random_tensor({4, 3, 2, 2}, rng);

  const auto a_mean = dbn.bn_a.running_mean;
  const auto a_var = dbn.bn_a.running_var;
  dual_bn_forward(dbn, h, 0.0, Mode::train);
  CHECK(dbn.bn_c.running_mean != std::vector<double>(3, 0.0));
  CHECK(dbn.bn_a.running_mean == a_mean);
  CHECK(dbn.bn_a.running_var == a_var);

  const auto c_mean = dbn.bn_c.running_mean;
  dual_bn_forward(dbn, h, 0.1, Mode::train);
  CHECK(dbn.bn_c.running_mean == c_mean);
  CHECK(dbn.bn_a.running_mean != a_mean);

  CHECK_THROWS(dual_bn_forward(dbn, h, 1.5, Mode::train));
}

TEST_CASE("dual_bn_forward: identical branches give identical eval outputs for any lambda") {
  std::mt19937_64 rng(8);
  DualBNState dbn = DualBNState::make(2);
  Tensor h = random_tensor({3, 2, 4, 4}, rng);
  Tensor y0 = dual_bn_forward(dbn, h, 0.0, Mode::eval);
  Tensor y5 = dual_bn_forward(dbn, h, 0.5, Mode::eval);
  CHECK(y0.data() == y5.data());
}

TEST_CASE("film_forward: identity at initialization for random encodings") {
  std::mt19937_64 rng(9);
  FiLMBlock film = FiLMBlock::make(16, 5, rng);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor h = random_tensor({2, 5, 3, 3}, rng);
    Tensor z = random_tensor({2, 16}, rng, -2.0, 2.0);
    Tensor y = film_forward(film, h, z, 5);
    CHECK(y.data() == h.data());
  }
}

TEST_CASE("film_forward: forced unit scale / zero shift reproduces the input") {
  std::mt19937_64 rng(10);
  FiLMBlock film = FiLMBlock::make(8, 3, rng);
  // Perturb then force the output layers back to (1, 0).
  film.g1.w2 = Tensor::zeros({3, 3}, true);
  film.g1.b2 = Tensor::full({3}, 1.0, true);
  film.g2.w2 = Tensor::zeros({3, 3}, true);
  film.g2.b2 = Tensor::zeros({3}, true);
  Tensor h = random_tensor({4, 3, 2, 2}, rng);
  Tensor z = random_tensor({4, 8}, rng);
  CHECK(film_forward(film, h, z, 3).data() == h.data());
}

TEST_CASE("film_forward: gradients with respect to both perceptrons check out") {
  PrecisionGuard mode(Precision::f64);
  std::mt19937_64 rng(11);
  FiLMBlock film = FiLMBlock::make(6, 4, rng);
  // Move off the identity point so gradients are generic.
  film.g1.w2 = random_tensor({4, 4}, rng, -0.5, 0.5);
  film.g1.w2.set_requires_grad(true);
  film.g2.w2 = random_tensor({4, 4}, rng, -0.5, 0.5);
  film.g2.w2.set_requires_grad(true);

  Tensor h = random_tensor({3, 4, 2, 2}, rng);
  Tensor z = random_tensor({3, 6}, rng);
  Tensor proj = random_tensor({3, 4, 2, 2}, rng);
  auto loss = [&] { return sum(mul(film_forward(film, h, z, 4), proj)); };
  for (Tensor t : {film.g1.w1, film.g1.b1, film.g1.w2, film.g1.b2, film.g2.w1, film.g2.b1,
                   film.g2.w2, film.g2.b2})
    CHECK(gradcheck(loss, t) < 1e-6);

  CHECK_THROWS_AS(film_forward(film, h, random_tensor({3, 5}, rng), 4), DimensionError);
}

TEST_CASE("subnet width 1.0 is bitwise the full network") {
  ModelSpec slim;
  slim.widths = {0.5, 0.75, 1.0};
  ModelSpec full;
  full.widths = {1.0};
  ConditionalNet a(slim, 21), b(full, 21);

  std::mt19937_64 rng(12);
  Tensor x = random_tensor({4, 1, 16, 16}, rng, 0.0, 1.0);
  ForwardOptions o;
  o.lambda = 0.3;
  o.width = 1.0;
  o.mode = Mode::eval;
  Tensor ya = a.forward(x, o);
  Tensor yb = b.forward(x, o);
  CHECK(ya.data() == yb.data());
}

TEST_CASE("sliced dense layer equals full matmul under a binary prefix mask") {
  std::mt19937_64 rng(13);
  Tensor x_full = random_tensor({6, 32}, rng);
  Tensor w = random_tensor({32, 10}, rng);

  // Zero the dropped columns/rows, keep full extents.
  Tensor x_masked = x_full.clone();
  Tensor w_masked = w.clone();
  for (std::int64_t i = 0; i < 6; ++i)
    for (std::int64_t k = 16; k < 32; ++k) x_masked.mutable_data()[static_cast<std::size_t>(i * 32 + k)] = 0.0;
  for (std::int64_t k = 16; k < 32; ++k)
    for (std::int64_t j = 0; j < 10; ++j) w_masked.mutable_data()[static_cast<std::size_t>(k * 10 + j)] = 0.0;

  Tensor sliced = matmul(slice_prefix(x_full, 1, 16), slice_prefix(w, 0, 16));
  Tensor masked = matmul(x_masked, w_masked);
  CHECK(sliced.data() == masked.data());
}

TEST_CASE("subnet slicing: conv uses leading filters and leading input channels") {
  ModelSpec spec;
  spec.widths = {0.5, 1.0};
  ConditionalNet net(spec, 31);

  std::mt19937_64 rng(14);
  Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
  ForwardOptions o;
  o.lambda = 0.0;
  o.width = 0.5;
  o.mode = Mode::eval;
  Tensor y_half = net.forward(x, o);
  CHECK(y_half.shape() == Shape{2, 10});

  // Independent oracle: rebuild the slimmed forward from sliced weights.
  Tensor w1 = slice_prefix(net.conv_weight(0), 0, 8);
  Tensor h = conv2d(x, w1, 1, 1);
  h = batchnorm_forward(net.norm_site(0).dual[0].bn_c, h, Mode::eval);
  h = film_forward(net.film(0), h, net.encode_batch({0.0, 0.0}), 8);
  h = leaky_relu(h, spec.leaky_slope);
  Tensor w2 = slice_prefix(slice_prefix(net.conv_weight(1), 0, 16), 1, 8);
  h = conv2d(h, w2, 2, 1);
  h = batchnorm_forward(net.norm_site(1).dual[0].bn_c, h, Mode::eval);
  h = film_forward(net.film(1), h, net.encode_batch({0.0, 0.0}), 16);
  h = leaky_relu(h, spec.leaky_slope);
  h = global_avg_pool(h);
  Tensor logits = add_rowvec(matmul(h, slice_prefix(net.dense_weight(), 0, 16)), net.dense_bias());
  CHECK(y_half.data() == logits.data());

  CHECK_THROWS(net.forward(x, [] {
    ForwardOptions bad;
    bad.width = 0.6;
    return bad;
  }()));
}

TEST_CASE("scaled_channels uses the ceiling") {
  CHECK(scaled_channels(16, 0.5) == 8);
  CHECK(scaled_channels(16, 0.75) == 12);
  CHECK(scaled_channels(10, 0.75) == 8);  // ceil(7.5)
  CHECK(scaled_channels(32, 1.0) == 32);
}
