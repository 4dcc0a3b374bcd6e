#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "oatlab/tensor.hpp"

namespace oatlab {

enum class Mode { train, eval };

enum class EncoderScheme { none, dct, ro };

/// Maps a scalar trade-off weight in [0,1] to a d-dimensional conditioning
/// vector. For dct/ro the n-th grid value owns the n-th column of an
/// orthonormal dictionary; unseen values interpolate between the two nearest
/// grid columns and are renormalized to unit length.
struct LambdaEncoder {
  EncoderScheme scheme = EncoderScheme::ro;
  int dim = 1;
  std::vector<double> lambda_grid;  // ordered
  std::vector<double> matrix;       // column-major dim x |grid|

  static LambdaEncoder make(EncoderScheme scheme, int dim, std::vector<double> grid,
                            std::uint64_t seed);

  std::vector<double> encode(double lambda) const;

  /// Max absolute off-diagonal / diagonal-minus-one entry of the Gram matrix.
  double orthonormality_defect() const;
};

struct BatchNormState {
  Tensor gamma, beta;  // [C]
  std::vector<double> running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState make(std::int64_t channels, double momentum = 0.1, double eps = 1e-5);
  std::int64_t channels() const { return gamma.dim(0); }
};

/// Train mode normalizes by batch statistics and folds them into the running
/// estimates; eval mode normalizes by the running estimates. A train-mode
/// call whose normalization set has fewer than two values falls back to
/// eval-style normalization without a statistics update and reports it
/// through `fallback`.
Tensor batchnorm_forward(BatchNormState& bn, const Tensor& h, Mode mode,
                         bool* fallback = nullptr);

/// Paired branches: bn_c sees the lambda = 0 stream, bn_a everything else.
struct DualBNState {
  BatchNormState bn_c, bn_a;

  static DualBNState make(std::int64_t channels, double momentum = 0.1, double eps = 1e-5);
};

/// Routes by exact lambda = 0 / lambda != 0; only the selected branch's
/// statistics move in train mode.
Tensor dual_bn_forward(DualBNState& dbn, const Tensor& h, double lambda, Mode mode,
                       bool* fallback = nullptr);

/// Two-layer perceptron d -> C -> C with Leaky ReLU (slope 0.01) after the
/// hidden layer.
struct Mlp2 {
  Tensor w1, b1, w2, b2;  // w1 [d,C], w2 [C,C]
};

/// Produces the per-sample channelwise affine (gamma, beta) from the lambda
/// encoding. Initialized to the identity: zero output weights, g1 bias 1,
/// g2 bias 0.
struct FiLMBlock {
  Mlp2 g1, g2;

  static FiLMBlock make(int encode_dim, std::int64_t channels, std::mt19937_64& rng);
  std::int64_t channels() const { return g1.b2.dim(0); }
};

/// Applies the block to h [B,C',H,W] given encodings z [B,d]. `channels`
/// selects the leading C' <= C slice of both perceptrons (width slimming).
Tensor film_forward(const FiLMBlock& film, const Tensor& h, const Tensor& z,
                    std::int64_t channels);

/// ceil(width * channels); the slimmed channel count of a layer.
std::int64_t scaled_channels(std::int64_t channels, double width);

}  // namespace oatlab
