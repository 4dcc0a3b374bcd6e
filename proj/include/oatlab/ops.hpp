#pragma once

#include <vector>

#include "oatlab/tensor.hpp"

namespace oatlab {

/// Raised when an operation receives tensors with incompatible extents.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Elementwise. Operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// [M,K] x [K,N] -> [M,N]. The reduction over K runs in index order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Broadcasts v over the rows of m: [M,N] + [N] -> [M,N].
Tensor add_rowvec(const Tensor& m, const Tensor& v);

/// Cross-correlation (no kernel flip) of x [B,C,H,W] with w [F,C,k,k].
/// Output extent (H + 2*pad - k) / stride + 1 must divide exactly,
/// otherwise a DimensionError is raised.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);

/// max(x, slope*x). The derivative at exactly 0 uses the positive branch (1).
Tensor leaky_relu(const Tensor& x, double slope);

/// [B,C,H,W] -> [B,C], mean over the spatial extent.
Tensor global_avg_pool(const Tensor& x);

/// Mean over the batch of -log softmax(logits)[label], max-stabilized.
Tensor softmax_xent(const Tensor& logits, const std::vector<int>& labels);

/// Per-sample -log softmax(logits)[label]: [B,c] -> [B].
Tensor softmax_xent_per_sample(const Tensor& logits, const std::vector<int>& labels);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// [N]·[N] -> scalar.
Tensor dot(const Tensor& a, const Tensor& b);

/// First `len` slices of `t` along `dim`, as a copy participating in the
/// tape (its gradient flows back into the sliced region).
Tensor slice_prefix(const Tensor& t, std::size_t dim, std::int64_t len);

/// Batch-statistics normalization over (B,H,W) per channel, then per-channel
/// affine. Uses biased variance. Optionally reports the batch statistics.
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       std::vector<double>* batch_mean = nullptr,
                       std::vector<double>* batch_var = nullptr);

/// Normalization by fixed (running) statistics, then per-channel affine.
Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const std::vector<double>& mean, const std::vector<double>& var, double eps);

/// Per-sample channelwise affine: y[b,c,·] = gamma[b,c] * h[b,c,·] + beta[b,c].
Tensor film_apply(const Tensor& h, const Tensor& gamma, const Tensor& beta);

/// Argmax per row of a [B,c] tensor. Ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace oatlab
