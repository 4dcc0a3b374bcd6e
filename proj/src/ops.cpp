#include "oatlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace oatlab {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": operand shapes differ");
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void mark_and_record(Tensor& out, bool track, std::function<void()> rule) {
  out.set_requires_grad(track);
  if (track) active_tape()->record(std::move(rule));
}

// += through the precision mode; all gradient accumulation funnels here.
inline void acc(double& slot, double delta) { slot = store_value(slot + delta); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.mutable_data();
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = store_value(av[i] + bv[i]);
  mark_and_record(out, track, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) acc(ga[i], g[i]);
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) acc(gb[i], g[i]);
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.mutable_data();
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = store_value(av[i] - bv[i]);
  mark_and_record(out, track, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) acc(ga[i], g[i]);
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) acc(gb[i], -g[i]);
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.mutable_data();
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = store_value(av[i] * bv[i]);
  mark_and_record(out, track, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      const auto& bv2 = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) acc(ga[i], g[i] * bv2[i]);
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      const auto& av2 = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) acc(gb[i], g[i] * av2[i]);
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape());
  auto& o = out.mutable_data();
  const auto& av = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = store_value(av[i] * s);
  mark_and_record(out, track, [a, out, s]() mutable {
    const auto& g = out.grad();
    auto& ga = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) acc(ga[i], g[i] * s);
  });
  return out;
}

namespace {

// All heavy kernels run in the active precision's native scalar type: real
// float arithmetic in f32 mode, pure doubles in f64 mode. Reduction order is
// sequential over k for every output element in either type.

template <typename T>
std::vector<T> to_scalar(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

// out[i][j] (+)= sum_k a[i][k] * b[k][j]; j is the vectorized lane.
template <typename T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict out, std::int64_t M,
              std::int64_t K, std::int64_t N) {
  for (std::int64_t i = 0; i < M; ++i) {
    T* orow = out + i * N;
    const T* arow = a + i * K;
    for (std::int64_t k = 0; k < K; ++k) {
      const T aik = arow[k];
      const T* brow = b + k * N;
      for (std::int64_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
    }
  }
}

template <typename T>
void matmul_forward(const std::vector<double>& av, const std::vector<double>& bv,
                    std::vector<double>& o, std::int64_t M, std::int64_t K, std::int64_t N) {
  const std::vector<T> a = to_scalar<T>(av);
  const std::vector<T> b = to_scalar<T>(bv);
  std::vector<T> out(static_cast<std::size_t>(M * N), T(0));
  gemm_acc(a.data(), b.data(), out.data(), M, K, N);
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<double>(out[i]);
}

// dA[i][k] += sum_j G[i][j] * B[k][j] (k vectorized via transposed B).
template <typename T>
void matmul_backward_a(const std::vector<double>& gv, const std::vector<double>& bv,
                       std::vector<double>& ga, std::int64_t M, std::int64_t K, std::int64_t N) {
  const std::vector<T> g = to_scalar<T>(gv);
  const std::vector<T> b = to_scalar<T>(bv);
  std::vector<T> bt(static_cast<std::size_t>(N * K));
  for (std::int64_t k = 0; k < K; ++k)
    for (std::int64_t j = 0; j < N; ++j) bt[static_cast<std::size_t>(j * K + k)] = b[static_cast<std::size_t>(k * N + j)];
  std::vector<T> da(static_cast<std::size_t>(M * K), T(0));
  gemm_acc(g.data(), bt.data(), da.data(), M, N, K);
  for (std::size_t i = 0; i < da.size(); ++i) acc(ga[i], static_cast<double>(da[i]));
}

// dB[k][j] += sum_i A[i][k] * G[i][j] (j vectorized, i sequential).
template <typename T>
void matmul_backward_b(const std::vector<double>& av, const std::vector<double>& gv,
                       std::vector<double>& gb, std::int64_t M, std::int64_t K, std::int64_t N) {
  const std::vector<T> a = to_scalar<T>(av);
  const std::vector<T> g = to_scalar<T>(gv);
  std::vector<T> db(static_cast<std::size_t>(K * N), T(0));
  for (std::int64_t i = 0; i < M; ++i) {
    const T* grow = g.data() + i * N;
    for (std::int64_t k = 0; k < K; ++k) {
      const T aik = a[static_cast<std::size_t>(i * K + k)];
      T* drow = db.data() + k * N;
      for (std::int64_t j = 0; j < N; ++j) drow[j] += aik * grow[j];
    }
  }
  for (std::size_t i = 0; i < db.size(); ++i) acc(gb[i], static_cast<double>(db[i]));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw DimensionError("matmul: operands must be 2-d");
  const std::int64_t M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
  if (K != K2) throw DimensionError("matmul: inner extents differ");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros({M, N});
  if (precision() == Precision::f32)
    matmul_forward<float>(a.data(), b.data(), out.mutable_data(), M, K, N);
  else
    matmul_forward<double>(a.data(), b.data(), out.mutable_data(), M, K, N);
  mark_and_record(out, track, [a, b, out, M, K, N]() mutable {
    const bool f32 = precision() == Precision::f32;
    const auto& g = out.grad();
    if (a.requires_grad()) {
      if (f32)
        matmul_backward_a<float>(g, b.data(), a.grad(), M, K, N);
      else
        matmul_backward_a<double>(g, b.data(), a.grad(), M, K, N);
    }
    if (b.requires_grad()) {
      if (f32)
        matmul_backward_b<float>(a.data(), g, b.grad(), M, K, N);
      else
        matmul_backward_b<double>(a.data(), g, b.grad(), M, K, N);
    }
  });
  return out;
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  if (m.shape().size() != 2 || v.shape().size() != 1 || m.dim(1) != v.dim(0))
    throw DimensionError("add_rowvec: expected [M,N] + [N]");
  const std::int64_t M = m.dim(0), N = m.dim(1);
  const bool track = tracking({&m, &v});
  Tensor out = Tensor::zeros(m.shape());
  {
    auto& o = out.mutable_data();
    const auto& mv = m.data();
    const auto& vv = v.data();
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < N; ++j)
        o[static_cast<std::size_t>(i * N + j)] =
            store_value(mv[static_cast<std::size_t>(i * N + j)] + vv[static_cast<std::size_t>(j)]);
  }
  mark_and_record(out, track, [m, v, out, M, N]() mutable {
    const auto& g = out.grad();
    if (m.requires_grad()) {
      auto& gm = m.grad();
      for (std::size_t i = 0; i < g.size(); ++i) acc(gm[i], g[i]);
    }
    if (v.requires_grad()) {
      auto& gv = v.grad();
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j)
          acc(gv[static_cast<std::size_t>(j)], g[static_cast<std::size_t>(i * N + j)]);
    }
  });
  return out;
}

namespace {

struct ConvDims {
  std::int64_t B, C, H, W, F, k, OH, OW;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4)
    throw DimensionError("conv2d: expected x [B,C,H,W] and w [F,C,k,k]");
  ConvDims d;
  d.B = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.F = w.dim(0);
  d.k = w.dim(2);
  d.stride = stride;
  d.pad = pad;
  if (w.dim(1) != d.C) throw DimensionError("conv2d: channel counts differ");
  if (w.dim(3) != d.k) throw DimensionError("conv2d: kernel must be square");
  if (stride < 1 || pad < 0) throw DimensionError("conv2d: bad stride/pad");
  if (d.k > d.H + 2 * pad || d.k > d.W + 2 * pad)
    throw DimensionError("conv2d: kernel exceeds padded input");
  if ((d.H + 2 * pad - d.k) % stride != 0 || (d.W + 2 * pad - d.k) % stride != 0)
    throw DimensionError("conv2d: non-integral output extent");
  d.OH = (d.H + 2 * pad - d.k) / stride + 1;
  d.OW = (d.W + 2 * pad - d.k) / stride + 1;
  return d;
}

// Patch matrix: one row per output pixel, columns ordered (c, kh, kw) so the
// reduction order matches the naive triple loop bit for bit.
template <typename T>
std::vector<T> im2col(const std::vector<T>& x, const ConvDims& d) {
  const std::int64_t K = d.C * d.k * d.k;
  const std::int64_t M = d.B * d.OH * d.OW;
  std::vector<T> patches(static_cast<std::size_t>(M * K), T(0));
  std::int64_t row = 0;
  for (std::int64_t b = 0; b < d.B; ++b)
    for (std::int64_t oh = 0; oh < d.OH; ++oh)
      for (std::int64_t ow = 0; ow < d.OW; ++ow, ++row) {
        T* prow = patches.data() + row * K;
        std::int64_t col = 0;
        for (std::int64_t c = 0; c < d.C; ++c)
          for (std::int64_t kh = 0; kh < d.k; ++kh)
            for (std::int64_t kw = 0; kw < d.k; ++kw, ++col) {
              const std::int64_t ih = oh * d.stride - d.pad + kh;
              const std::int64_t iw = ow * d.stride - d.pad + kw;
              if (ih >= 0 && ih < d.H && iw >= 0 && iw < d.W)
                prow[col] = x[static_cast<std::size_t>(((b * d.C + c) * d.H + ih) * d.W + iw)];
            }
      }
  return patches;
}

template <typename T>
void conv2d_forward(const std::vector<double>& xv, const std::vector<double>& wv,
                    std::vector<double>& o, const ConvDims& d) {
  const std::int64_t K = d.C * d.k * d.k;
  const std::int64_t M = d.B * d.OH * d.OW;
  const std::vector<T> patches = im2col(to_scalar<T>(xv), d);
  // w transposed to [K,F] so the inner loop runs over independent lanes.
  std::vector<T> wt(static_cast<std::size_t>(K * d.F));
  for (std::int64_t f = 0; f < d.F; ++f)
    for (std::int64_t j = 0; j < K; ++j)
      wt[static_cast<std::size_t>(j * d.F + f)] = static_cast<T>(wv[static_cast<std::size_t>(f * K + j)]);

  std::vector<T> om(static_cast<std::size_t>(M * d.F), T(0));
  gemm_acc(patches.data(), wt.data(), om.data(), M, K, d.F);
  const std::int64_t plane = d.OH * d.OW;
  for (std::int64_t m = 0; m < M; ++m) {
    const std::int64_t b = m / plane, pix = m % plane;
    for (std::int64_t f = 0; f < d.F; ++f)
      o[static_cast<std::size_t>((b * d.F + f) * plane + pix)] =
          static_cast<double>(om[static_cast<std::size_t>(m * d.F + f)]);
  }
}

// Output gradient rearranged to [M,F] rows matching the patch rows.
template <typename T>
std::vector<T> grad_as_rows(const std::vector<double>& g, const ConvDims& d) {
  const std::int64_t plane = d.OH * d.OW;
  std::vector<T> gm(static_cast<std::size_t>(d.B * plane * d.F));
  for (std::int64_t b = 0; b < d.B; ++b)
    for (std::int64_t f = 0; f < d.F; ++f)
      for (std::int64_t p = 0; p < plane; ++p)
        gm[static_cast<std::size_t>((b * plane + p) * d.F + f)] =
            static_cast<T>(g[static_cast<std::size_t>((b * d.F + f) * plane + p)]);
  return gm;
}

template <typename T>
void conv2d_backward_w(const std::vector<double>& xv, const std::vector<double>& g,
                       std::vector<double>& gw, const ConvDims& d) {
  const std::int64_t K = d.C * d.k * d.k;
  const std::int64_t M = d.B * d.OH * d.OW;
  const std::vector<T> patches = im2col(to_scalar<T>(xv), d);
  const std::vector<T> gm = grad_as_rows<T>(g, d);
  std::vector<T> dw(static_cast<std::size_t>(d.F * K), T(0));
  for (std::int64_t m = 0; m < M; ++m) {
    const T* prow = patches.data() + m * K;
    const T* grow = gm.data() + m * d.F;
    for (std::int64_t f = 0; f < d.F; ++f) {
      const T gf = grow[f];
      T* arow = dw.data() + f * K;
      for (std::int64_t j = 0; j < K; ++j) arow[j] += gf * prow[j];
    }
  }
  for (std::size_t i = 0; i < dw.size(); ++i) acc(gw[i], static_cast<double>(dw[i]));
}

template <typename T>
void conv2d_backward_x(const std::vector<double>& wv, const std::vector<double>& g,
                       std::vector<double>& gx, const ConvDims& d) {
  const std::int64_t K = d.C * d.k * d.k;
  const std::int64_t M = d.B * d.OH * d.OW;
  const std::vector<T> gm = grad_as_rows<T>(g, d);
  const std::vector<T> wvt = to_scalar<T>(wv);
  std::vector<T> gp(static_cast<std::size_t>(M * K), T(0));
  gemm_acc(gm.data(), wvt.data(), gp.data(), M, d.F, K);
  std::int64_t row = 0;
  for (std::int64_t b = 0; b < d.B; ++b)
    for (std::int64_t oh = 0; oh < d.OH; ++oh)
      for (std::int64_t ow = 0; ow < d.OW; ++ow, ++row) {
        const T* prow = gp.data() + row * K;
        std::int64_t col = 0;
        for (std::int64_t c = 0; c < d.C; ++c)
          for (std::int64_t kh = 0; kh < d.k; ++kh)
            for (std::int64_t kw = 0; kw < d.k; ++kw, ++col) {
              const std::int64_t ih = oh * d.stride - d.pad + kh;
              const std::int64_t iw = ow * d.stride - d.pad + kw;
              if (ih >= 0 && ih < d.H && iw >= 0 && iw < d.W)
                acc(gx[static_cast<std::size_t>(((b * d.C + c) * d.H + ih) * d.W + iw)],
                    static_cast<double>(prow[col]));
            }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  const ConvDims d = conv_dims(x, w, stride, pad);
  const bool track = tracking({&x, &w});
  Tensor out = Tensor::zeros({d.B, d.F, d.OH, d.OW});
  if (precision() == Precision::f32)
    conv2d_forward<float>(x.data(), w.data(), out.mutable_data(), d);
  else
    conv2d_forward<double>(x.data(), w.data(), out.mutable_data(), d);
  mark_and_record(out, track, [x, w, out, d]() mutable {
    const bool f32 = precision() == Precision::f32;
    const auto& g = out.grad();
    if (w.requires_grad()) {
      if (f32)
        conv2d_backward_w<float>(x.data(), g, w.grad(), d);
      else
        conv2d_backward_w<double>(x.data(), g, w.grad(), d);
    }
    if (x.requires_grad()) {
      if (f32)
        conv2d_backward_x<float>(w.data(), g, x.grad(), d);
      else
        conv2d_backward_x<double>(w.data(), g, x.grad(), d);
    }
  });
  return out;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (slope < 0.0 || slope >= 1.0) throw std::invalid_argument("leaky_relu: slope outside [0,1)");
  const bool track = tracking({&x});
  Tensor out = Tensor::zeros(x.shape());
  auto& o = out.mutable_data();
  const auto& xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = store_value(xv[i] >= 0.0 ? xv[i] : slope * xv[i]);
  mark_and_record(out, track, [x, out, slope]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    const auto& xv = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) acc(gx[i], g[i] * (xv[i] >= 0.0 ? 1.0 : slope));
  });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.shape().size() != 4) throw DimensionError("global_avg_pool: expected [B,C,H,W]");
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (HW == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  const bool track = tracking({&x});
  Tensor out = Tensor::zeros({B, C});
  {
    auto& o = out.mutable_data();
    const auto& xv = x.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        const double* p = xv.data() + (b * C + c) * HW;
        double s = 0.0;
        for (std::int64_t i = 0; i < HW; ++i) s += p[i];
        o[static_cast<std::size_t>(b * C + c)] = store_value(s / static_cast<double>(HW));
      }
  }
  mark_and_record(out, track, [x, out, B, C, HW]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        const double gv = g[static_cast<std::size_t>(b * C + c)] / static_cast<double>(HW);
        double* p = gx.data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) acc(p[i], gv);
      }
  });
  return out;
}

namespace {

void check_labels(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2) throw DimensionError("softmax_xent: expected [B,c] logits");
  if (static_cast<std::int64_t>(labels.size()) != logits.dim(0))
    throw DimensionError("softmax_xent: label count does not match batch");
  const int c = static_cast<int>(logits.dim(1));
  for (int y : labels)
    if (y < 0 || y >= c) throw std::out_of_range("softmax_xent: label out of range");
}

// Stabilized per-sample cross-entropy; optionally emits softmax probabilities.
std::vector<double> xent_rows(const Tensor& logits, const std::vector<int>& labels,
                              std::vector<double>* probs_out) {
  const std::int64_t B = logits.dim(0), c = logits.dim(1);
  const auto& lv = logits.data();
  std::vector<double> losses(static_cast<std::size_t>(B));
  if (probs_out) probs_out->assign(static_cast<std::size_t>(B * c), 0.0);
  for (std::int64_t i = 0; i < B; ++i) {
    const double* row = lv.data() + i * c;
    double m = row[0];
    for (std::int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lse = std::log(z);
    losses[static_cast<std::size_t>(i)] = lse - (row[labels[static_cast<std::size_t>(i)]] - m);
    if (probs_out)
      for (std::int64_t j = 0; j < c; ++j)
        (*probs_out)[static_cast<std::size_t>(i * c + j)] = std::exp(row[j] - m) / z;
  }
  return losses;
}

}  // namespace

Tensor softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  const std::int64_t B = logits.dim(0), c = logits.dim(1);
  const bool track = tracking({&logits});
  const std::vector<double> losses = xent_rows(logits, labels, nullptr);
  double total = 0.0;
  for (double v : losses) total += v;
  Tensor out = Tensor::from_data({1}, {total / static_cast<double>(B)});
  mark_and_record(out, track, [logits, out, labels, B, c]() mutable {
    const double g = out.grad()[0] / static_cast<double>(B);
    std::vector<double> probs;
    xent_rows(logits, labels, &probs);
    auto& gl = logits.grad();
    for (std::int64_t i = 0; i < B; ++i)
      for (std::int64_t j = 0; j < c; ++j) {
        const double onehot = (j == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
        acc(gl[static_cast<std::size_t>(i * c + j)],
            g * (probs[static_cast<std::size_t>(i * c + j)] - onehot));
      }
  });
  return out;
}

Tensor softmax_xent_per_sample(const Tensor& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  const std::int64_t B = logits.dim(0), c = logits.dim(1);
  const bool track = tracking({&logits});
  std::vector<double> losses = xent_rows(logits, labels, nullptr);
  for (auto& v : losses) v = store_value(v);
  Tensor out = Tensor::from_data({B}, std::move(losses));
  mark_and_record(out, track, [logits, out, labels, B, c]() mutable {
    const auto& g = out.grad();
    std::vector<double> probs;
    xent_rows(logits, labels, &probs);
    auto& gl = logits.grad();
    for (std::int64_t i = 0; i < B; ++i) {
      const double gi = g[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < c; ++j) {
        const double onehot = (j == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
        acc(gl[static_cast<std::size_t>(i * c + j)],
            gi * (probs[static_cast<std::size_t>(i * c + j)] - onehot));
      }
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  const bool track = tracking({&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::from_data({1}, {s});
  mark_and_record(out, track, [x, out]() mutable {
    const double g = out.grad()[0];
    auto& gx = x.grad();
    for (auto& v : gx) acc(v, g);
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean: empty tensor");
  const bool track = tracking({&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.size());
  Tensor out = Tensor::from_data({1}, {s / n});
  mark_and_record(out, track, [x, out, n]() mutable {
    const double g = out.grad()[0] / n;
    auto& gx = x.grad();
    for (auto& v : gx) acc(v, g);
  });
  return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 1 || b.shape().size() != 1 || a.dim(0) != b.dim(0))
    throw DimensionError("dot: expected equal-length vectors");
  const bool track = tracking({&a, &b});
  const auto& av = a.data();
  const auto& bv = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  Tensor out = Tensor::from_data({1}, {s});
  mark_and_record(out, track, [a, b, out]() mutable {
    const double g = out.grad()[0];
    if (a.requires_grad()) {
      auto& ga = a.grad();
      const auto& bv2 = b.data();
      for (std::size_t i = 0; i < ga.size(); ++i) acc(ga[i], g * bv2[i]);
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      const auto& av2 = a.data();
      for (std::size_t i = 0; i < gb.size(); ++i) acc(gb[i], g * av2[i]);
    }
  });
  return out;
}

Tensor slice_prefix(const Tensor& t, std::size_t dim, std::int64_t len) {
  const Shape& s = t.shape();
  if (dim >= s.size()) throw DimensionError("slice_prefix: dim out of range");
  if (len < 1 || len > s[dim]) throw DimensionError("slice_prefix: bad length");
  Shape out_shape = s;
  out_shape[dim] = len;
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < dim; ++i) outer *= s[i];
  for (std::size_t i = dim + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t D = s[dim];

  const bool track = tracking({&t});
  Tensor out = Tensor::zeros(out_shape);
  {
    auto& o = out.mutable_data();
    const auto& tv = t.data();
    for (std::int64_t a = 0; a < outer; ++a)
      for (std::int64_t i = 0; i < len; ++i)
        std::copy_n(tv.data() + (a * D + i) * inner, inner, o.data() + (a * len + i) * inner);
  }
  mark_and_record(out, track, [t, out, outer, inner, D, len]() mutable {
    const auto& g = out.grad();
    auto& gt = t.grad();
    for (std::int64_t a = 0; a < outer; ++a)
      for (std::int64_t i = 0; i < len; ++i) {
        const double* src = g.data() + (a * len + i) * inner;
        double* dst = gt.data() + (a * D + i) * inner;
        for (std::int64_t j = 0; j < inner; ++j) acc(dst[j], src[j]);
      }
  });
  return out;
}

namespace {

void check_bn_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.shape().size() != 4) throw DimensionError("batchnorm: expected [B,C,H,W]");
  const std::int64_t C = x.dim(1);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw DimensionError("batchnorm: gamma/beta must be [C]");
}

}  // namespace

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       std::vector<double>* batch_mean, std::vector<double>* batch_var) {
  check_bn_shapes(x, gamma, beta);
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const std::int64_t N = B * HW;
  if (N < 1) throw DimensionError("batchnorm_train: empty normalization set");
  const bool track = tracking({&x, &gamma, &beta});

  const auto& xv = x.data();
  std::vector<double> mu(static_cast<std::size_t>(C), 0.0), var(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const double* p = xv.data() + (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) s += p[i];
    }
    mu[static_cast<std::size_t>(c)] = s / static_cast<double>(N);
    double v = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const double* p = xv.data() + (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        const double dlt = p[i] - mu[static_cast<std::size_t>(c)];
        v += dlt * dlt;
      }
    }
    var[static_cast<std::size_t>(c)] = v / static_cast<double>(N);
  }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;

  std::vector<double> inv_sigma(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c)
    inv_sigma[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps);

  // x-hat kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  Tensor out = Tensor::zeros(x.shape());
  {
    auto& o = out.mutable_data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        const double* p = xv.data() + (b * C + c) * HW;
        double* xh = xhat->data() + (b * C + c) * HW;
        double* po = o.data() + (b * C + c) * HW;
        const double m = mu[static_cast<std::size_t>(c)], is = inv_sigma[static_cast<std::size_t>(c)];
        const double ga = gv[static_cast<std::size_t>(c)], be = bv[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < HW; ++i) {
          xh[i] = (p[i] - m) * is;
          po[i] = store_value(ga * xh[i] + be);
        }
      }
  }
  mark_and_record(out, track, [x, gamma, beta, out, xhat, inv_sigma, B, C, HW, N]() mutable {
    const auto& g = out.grad();
    const auto& gv = gamma.data();
    for (std::int64_t c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        const double* pg = g.data() + (b * C + c) * HW;
        const double* xh = xhat->data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          sum_g += pg[i];
          sum_gx += pg[i] * xh[i];
        }
      }
      if (gamma.requires_grad()) acc(gamma.grad()[static_cast<std::size_t>(c)], sum_gx);
      if (beta.requires_grad()) acc(beta.grad()[static_cast<std::size_t>(c)], sum_g);
      if (x.requires_grad()) {
        auto& gx = x.grad();
        const double mg = sum_g / static_cast<double>(N);
        const double mgx = sum_gx / static_cast<double>(N);
        const double coeff = gv[static_cast<std::size_t>(c)] * inv_sigma[static_cast<std::size_t>(c)];
        for (std::int64_t b = 0; b < B; ++b) {
          const double* pg = g.data() + (b * C + c) * HW;
          const double* xh = xhat->data() + (b * C + c) * HW;
          double* pgx = gx.data() + (b * C + c) * HW;
          for (std::int64_t i = 0; i < HW; ++i)
            acc(pgx[i], coeff * (pg[i] - mg - xh[i] * mgx));
        }
      }
    }
  });
  return out;
}

Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const std::vector<double>& mean, const std::vector<double>& var, double eps) {
  check_bn_shapes(x, gamma, beta);
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (static_cast<std::int64_t>(mean.size()) != C || static_cast<std::int64_t>(var.size()) != C)
    throw DimensionError("batchnorm_eval: running statistics must be [C]");
  const bool track = tracking({&x, &gamma, &beta});

  std::vector<double> inv_sigma(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c)
    inv_sigma[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps);

  Tensor out = Tensor::zeros(x.shape());
  {
    auto& o = out.mutable_data();
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        const double* p = xv.data() + (b * C + c) * HW;
        double* po = o.data() + (b * C + c) * HW;
        const double m = mean[static_cast<std::size_t>(c)], is = inv_sigma[static_cast<std::size_t>(c)];
        const double ga = gv[static_cast<std::size_t>(c)], be = bv[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < HW; ++i) po[i] = store_value(ga * (p[i] - m) * is + be);
      }
  }
  mark_and_record(out, track, [x, gamma, beta, out, mean, inv_sigma, B, C, HW]() mutable {
    const auto& g = out.grad();
    const auto& gv = gamma.data();
    const auto& xv = x.data();
    for (std::int64_t c = 0; c < C; ++c) {
      const double m = mean[static_cast<std::size_t>(c)], is = inv_sigma[static_cast<std::size_t>(c)];
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        const double* pg = g.data() + (b * C + c) * HW;
        const double* p = xv.data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          sum_g += pg[i];
          sum_gx += pg[i] * (p[i] - m) * is;
        }
      }
      if (gamma.requires_grad()) acc(gamma.grad()[static_cast<std::size_t>(c)], sum_gx);
      if (beta.requires_grad()) acc(beta.grad()[static_cast<std::size_t>(c)], sum_g);
      if (x.requires_grad()) {
        auto& gx = x.grad();
        const double coeff = gv[static_cast<std::size_t>(c)] * is;
        for (std::int64_t b = 0; b < B; ++b) {
          const double* pg = g.data() + (b * C + c) * HW;
          double* pgx = gx.data() + (b * C + c) * HW;
          for (std::int64_t i = 0; i < HW; ++i) acc(pgx[i], coeff * pg[i]);
        }
      }
    }
  });
  return out;
}

Tensor film_apply(const Tensor& h, const Tensor& gamma, const Tensor& beta) {
  if (h.shape().size() != 4) throw DimensionError("film_apply: expected [B,C,H,W]");
  const std::int64_t B = h.dim(0), C = h.dim(1), HW = h.dim(2) * h.dim(3);
  if (gamma.shape() != Shape{B, C} || beta.shape() != Shape{B, C})
    throw DimensionError("film_apply: gamma/beta must be [B,C]");
  const bool track = tracking({&h, &gamma, &beta});
  Tensor out = Tensor::zeros(h.shape());
  {
    auto& o = out.mutable_data();
    const auto& hv = h.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        const double ga = gv[static_cast<std::size_t>(b * C + c)];
        const double be = bv[static_cast<std::size_t>(b * C + c)];
        const double* p = hv.data() + (b * C + c) * HW;
        double* po = o.data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) po[i] = store_value(ga * p[i] + be);
      }
  }
  mark_and_record(out, track, [h, gamma, beta, out, B, C, HW]() mutable {
    const auto& g = out.grad();
    const auto& hv = h.data();
    const auto& gv = gamma.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        const double* pg = g.data() + (b * C + c) * HW;
        if (h.requires_grad()) {
          auto& gh = h.grad();
          const double ga = gv[static_cast<std::size_t>(b * C + c)];
          double* pgh = gh.data() + (b * C + c) * HW;
          for (std::int64_t i = 0; i < HW; ++i) acc(pgh[i], ga * pg[i]);
        }
        if (gamma.requires_grad() || beta.requires_grad()) {
          const double* p = hv.data() + (b * C + c) * HW;
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::int64_t i = 0; i < HW; ++i) {
            sum_g += pg[i];
            sum_gh += pg[i] * p[i];
          }
          if (gamma.requires_grad()) acc(gamma.grad()[static_cast<std::size_t>(b * C + c)], sum_gh);
          if (beta.requires_grad()) acc(beta.grad()[static_cast<std::size_t>(b * C + c)], sum_g);
        }
      }
  });
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.shape().size() != 2) throw DimensionError("argmax_rows: expected [B,c]");
  const std::int64_t B = logits.dim(0), c = logits.dim(1);
  const auto& lv = logits.data();
  std::vector<int> out(static_cast<std::size_t>(B));
  for (std::int64_t i = 0; i < B; ++i) {
    const double* row = lv.data() + i * c;
    int best = 0;
    for (std::int64_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace oatlab
