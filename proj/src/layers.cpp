#include "oatlab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "oatlab/ops.hpp"
#include "oatlab/rng.hpp"

namespace oatlab {

namespace {

// Orthonormal DCT-II dictionary: column n holds
// s_k * sqrt(2/d) * cos(pi * (2n+1) * k / (2d)), s_0 = 1/sqrt(2).
std::vector<double> dct_matrix(int d, int cols) {
  std::vector<double> m(static_cast<std::size_t>(d) * cols);
  const double pi = 3.14159265358979323846;
  for (int n = 0; n < cols; ++n)
    for (int k = 0; k < d; ++k) {
      const double s = (k == 0) ? std::sqrt(1.0 / d) : std::sqrt(2.0 / d);
      m[static_cast<std::size_t>(n) * d + k] = s * std::cos(pi * (2 * n + 1) * k / (2.0 * d));
    }
  return m;
}

// First `cols` columns of a random orthogonal matrix via twice-applied
// modified Gram-Schmidt on a seeded Gaussian draw.
std::vector<double> random_orthogonal(int d, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x726fULL));
  std::vector<double> m(static_cast<std::size_t>(d) * cols);
  for (auto& v : m) v = rand_normal(rng);
  for (int j = 0; j < cols; ++j) {
    double* cj = m.data() + static_cast<std::size_t>(j) * d;
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i < j; ++i) {
        const double* ci = m.data() + static_cast<std::size_t>(i) * d;
        double proj = 0.0;
        for (int k = 0; k < d; ++k) proj += ci[k] * cj[k];
        for (int k = 0; k < d; ++k) cj[k] -= proj * ci[k];
      }
    double norm = 0.0;
    for (int k = 0; k < d; ++k) norm += cj[k] * cj[k];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw std::runtime_error("random_orthogonal: degenerate draw");
    for (int k = 0; k < d; ++k) cj[k] /= norm;
  }
  return m;
}

}  // namespace

LambdaEncoder LambdaEncoder::make(EncoderScheme scheme, int dim, std::vector<double> grid,
                                  std::uint64_t seed) {
  if (grid.empty()) throw std::invalid_argument("LambdaEncoder: empty lambda grid");
  std::sort(grid.begin(), grid.end());
  for (double v : grid)
    if (v < 0.0 || v > 1.0) throw std::invalid_argument("LambdaEncoder: lambda outside [0,1]");

  LambdaEncoder enc;
  enc.scheme = scheme;
  enc.lambda_grid = std::move(grid);
  const int cols = static_cast<int>(enc.lambda_grid.size());
  switch (scheme) {
    case EncoderScheme::none:
      enc.dim = 1;
      break;
    case EncoderScheme::dct:
      if (cols > dim) throw std::invalid_argument("LambdaEncoder: |grid| exceeds dct dimension");
      enc.dim = dim;
      enc.matrix = dct_matrix(dim, cols);
      break;
    case EncoderScheme::ro:
      if (cols > dim) throw std::invalid_argument("LambdaEncoder: |grid| exceeds ro dimension");
      enc.dim = dim;
      enc.matrix = random_orthogonal(dim, cols, seed);
      break;
  }
  return enc;
}

std::vector<double> LambdaEncoder::encode(double lambda) const {
  if (lambda_grid.empty()) throw std::logic_error("LambdaEncoder: empty lambda grid");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("LambdaEncoder: lambda outside [0,1]");
  if (scheme == EncoderScheme::none) return {lambda};

  const auto column = [&](std::size_t j) {
    return std::vector<double>(matrix.begin() + static_cast<std::ptrdiff_t>(j) * dim,
                               matrix.begin() + static_cast<std::ptrdiff_t>(j + 1) * dim);
  };
  for (std::size_t j = 0; j < lambda_grid.size(); ++j)
    if (lambda_grid[j] == lambda) return column(j);

  // Unseen value: interpolate the two nearest grid columns by lambda
  // distance, then renormalize. Values outside the grid span clamp to the
  // boundary column.
  auto hi = std::upper_bound(lambda_grid.begin(), lambda_grid.end(), lambda);
  std::size_t j1, j2;
  double t;
  if (hi == lambda_grid.begin()) {
    j1 = j2 = 0;
    t = 0.0;
  } else if (hi == lambda_grid.end()) {
    j1 = j2 = lambda_grid.size() - 1;
    t = 0.0;
  } else {
    j2 = static_cast<std::size_t>(hi - lambda_grid.begin());
    j1 = j2 - 1;
    t = (lambda - lambda_grid[j1]) / (lambda_grid[j2] - lambda_grid[j1]);
  }
  std::vector<double> v = column(j1);
  const std::vector<double> c2 = column(j2);
  double norm = 0.0;
  for (int k = 0; k < dim; ++k) {
    v[static_cast<std::size_t>(k)] =
        (1.0 - t) * v[static_cast<std::size_t>(k)] + t * c2[static_cast<std::size_t>(k)];
    norm += v[static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(k)];
  }
  norm = std::sqrt(norm);
  for (auto& e : v) e /= norm;
  return v;
}

double LambdaEncoder::orthonormality_defect() const {
  if (scheme == EncoderScheme::none) return 0.0;
  const std::size_t n = lambda_grid.size();
  double defect = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double g = 0.0;
      for (int k = 0; k < dim; ++k)
        g += matrix[i * dim + k] * matrix[j * dim + k];
      defect = std::max(defect, std::abs(g - (i == j ? 1.0 : 0.0)));
    }
  return defect;
}

BatchNormState BatchNormState::make(std::int64_t channels, double momentum, double eps) {
  BatchNormState bn;
  bn.gamma = Tensor::full({channels}, 1.0, true);
  bn.beta = Tensor::zeros({channels}, true);
  bn.running_mean.assign(static_cast<std::size_t>(channels), 0.0);
  bn.running_var.assign(static_cast<std::size_t>(channels), 1.0);
  bn.momentum = momentum;
  bn.eps = eps;
  return bn;
}

Tensor batchnorm_forward(BatchNormState& bn, const Tensor& h, Mode mode, bool* fallback) {
  if (h.dim(1) != bn.channels()) throw DimensionError("batchnorm_forward: channel mismatch");
  if (fallback) *fallback = false;
  if (mode == Mode::train) {
    const std::int64_t n = h.dim(0) * h.dim(2) * h.dim(3);
    if (n < 2) {
      if (fallback) *fallback = true;
      return batchnorm_eval(h, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps);
    }
    std::vector<double> mu, var;
    Tensor y = batchnorm_train(h, bn.gamma, bn.beta, bn.eps, &mu, &var);
    const double m = bn.momentum;
    for (std::size_t c = 0; c < mu.size(); ++c) {
      bn.running_mean[c] = store_value((1.0 - m) * bn.running_mean[c] + m * mu[c]);
      bn.running_var[c] = store_value((1.0 - m) * bn.running_var[c] + m * var[c]);
    }
    return y;
  }
  return batchnorm_eval(h, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps);
}

DualBNState DualBNState::make(std::int64_t channels, double momentum, double eps) {
  DualBNState d;
  d.bn_c = BatchNormState::make(channels, momentum, eps);
  d.bn_a = BatchNormState::make(channels, momentum, eps);
  return d;
}

Tensor dual_bn_forward(DualBNState& dbn, const Tensor& h, double lambda, Mode mode,
                       bool* fallback) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("dual_bn_forward: lambda outside [0,1]");
  BatchNormState& branch = (lambda == 0.0) ? dbn.bn_c : dbn.bn_a;
  return batchnorm_forward(branch, h, mode, fallback);
}

FiLMBlock FiLMBlock::make(int encode_dim, std::int64_t channels, std::mt19937_64& rng) {
  const auto init_mlp = [&](double out_bias) {
    Mlp2 m;
    const double bound = std::sqrt(6.0 / encode_dim);
    std::vector<double> w1(static_cast<std::size_t>(encode_dim * channels));
    for (auto& v : w1) v = rand_uniform(rng, -bound, bound);
    m.w1 = Tensor::from_data({encode_dim, channels}, std::move(w1), true);
    m.b1 = Tensor::zeros({channels}, true);
    m.w2 = Tensor::zeros({channels, channels}, true);
    m.b2 = Tensor::full({channels}, out_bias, true);
    return m;
  };
  FiLMBlock f;
  f.g1 = init_mlp(1.0);
  f.g2 = init_mlp(0.0);
  return f;
}

namespace {

Tensor mlp2_forward(const Mlp2& m, const Tensor& z, std::int64_t channels) {
  const std::int64_t full = m.b2.dim(0);
  Tensor w1 = m.w1, b1 = m.b1, w2 = m.w2, b2 = m.b2;
  if (channels < full) {
    w1 = slice_prefix(w1, 1, channels);
    b1 = slice_prefix(b1, 0, channels);
    w2 = slice_prefix(slice_prefix(w2, 0, channels), 1, channels);
    b2 = slice_prefix(b2, 0, channels);
  }
  Tensor hidden = leaky_relu(add_rowvec(matmul(z, w1), b1), 0.01);
  return add_rowvec(matmul(hidden, w2), b2);
}

}  // namespace

Tensor film_forward(const FiLMBlock& film, const Tensor& h, const Tensor& z,
                    std::int64_t channels) {
  if (z.shape().size() != 2) throw DimensionError("film_forward: encodings must be [B,d]");
  if (z.dim(0) != h.dim(0)) throw DimensionError("film_forward: batch mismatch");
  if (z.dim(1) != film.g1.w1.dim(0)) throw DimensionError("film_forward: encoding dim mismatch");
  if (channels != h.dim(1)) throw DimensionError("film_forward: channel mismatch");
  Tensor gamma = mlp2_forward(film.g1, z, channels);
  Tensor beta = mlp2_forward(film.g2, z, channels);
  return film_apply(h, gamma, beta);
}

std::int64_t scaled_channels(std::int64_t channels, double width) {
  return static_cast<std::int64_t>(std::ceil(width * static_cast<double>(channels)));
}

}  // namespace oatlab
