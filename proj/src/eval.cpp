#include "oatlab/eval.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "oatlab/ops.hpp"
#include "oatlab/rng.hpp"

namespace oatlab {

namespace {

std::vector<std::int64_t> range_rows(std::int64_t lo, std::int64_t hi) {
  std::vector<std::int64_t> rows(static_cast<std::size_t>(hi - lo));
  std::iota(rows.begin(), rows.end(), lo);
  return rows;
}

std::int64_t count_correct(const Tensor& logits, const std::vector<int>& y) {
  const std::vector<int> pred = argmax_rows(logits);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (pred[i] == y[i]) ++correct;
  return correct;
}

}  // namespace

double eval_sa(ConditionalNet& net, const Dataset& ds, double lambda, double width,
               std::int64_t batch_size) {
  if (ds.size() == 0) throw std::invalid_argument("eval_sa: empty dataset");
  NoGradScope no_grad;
  std::int64_t correct = 0;
  for (std::int64_t lo = 0; lo < ds.size(); lo += batch_size) {
    const std::int64_t hi = std::min(ds.size(), lo + batch_size);
    auto [x, y] = ds.batch(range_rows(lo, hi));
    ForwardOptions o;
    o.lambda = lambda;
    o.width = width;
    o.mode = Mode::eval;
    correct += count_correct(net.forward(x, o), y);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

double eval_ra(ConditionalNet& net, const Dataset& ds, double lambda, double width,
               const AttackSpec& attack, std::uint64_t seed, std::int64_t batch_size) {
  if (ds.size() == 0) throw std::invalid_argument("eval_ra: empty dataset");
  std::mt19937_64 rng(derive_seed(seed, 0x7261ULL));
  std::int64_t correct = 0;
  for (std::int64_t lo = 0; lo < ds.size(); lo += batch_size) {
    const std::int64_t hi = std::min(ds.size(), lo + batch_size);
    auto [x, y] = ds.batch(range_rows(lo, hi));
    Tensor x_adv = run_attack(net, x, y, lambda, width, attack, &rng);
    NoGradScope no_grad;
    ForwardOptions o;
    o.lambda = lambda;
    o.width = width;
    o.mode = Mode::eval;
    correct += count_correct(net.forward(x_adv, o), y);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::vector<TradeoffPoint> sweep_tradeoff(ConditionalNet& net, const Dataset& ds,
                                          const std::vector<double>& lambda_list,
                                          const std::vector<double>& width_list,
                                          const AttackSpec& attack, std::uint64_t seed) {
  for (double lam : lambda_list)
    if (lam < 0.0 || lam > 1.0)
      throw std::invalid_argument("sweep_tradeoff: lambda outside [0,1]");
  std::vector<TradeoffPoint> points;
  for (double width : width_list)
    for (double lam : lambda_list) {
      TradeoffPoint p;
      p.lambda = lam;
      p.width = width;
      p.sa = eval_sa(net, ds, lam, width);
      p.ra = eval_ra(net, ds, lam, width, attack, seed);
      p.attack = attack.kind == AttackKind::fgsm    ? "fgsm"
                 : attack.kind == AttackKind::pgd   ? "pgd"
                                                    : "mifgsm";
      p.epsilon = attack.epsilon;
      p.steps = attack.kind == AttackKind::fgsm ? 1 : attack.iters;
      p.seed = seed;
      points.push_back(std::move(p));
    }
  return points;
}

SaliencyMap jacobian_saliency(ConditionalNet& net, const Tensor& x, int label, double lambda,
                              double width) {
  Shape shape = x.shape();
  Tensor batch;
  if (shape.size() == 3) {
    batch = Tensor::zeros({1, shape[0], shape[1], shape[2]});
    batch.mutable_data() = x.data();
  } else if (shape.size() == 4 && shape[0] == 1) {
    batch = x.clone();
  } else {
    throw DimensionError("jacobian_saliency: expected one image");
  }
  batch.set_requires_grad(true);

  ParamFreezeGuard freeze(net);
  TapeScope scope;
  ForwardOptions o;
  o.lambda = lambda;
  o.width = width;
  o.mode = Mode::eval;
  Tensor loss = softmax_xent(net.forward(batch, o), {label});
  scope.tape().backward(loss);

  SaliencyMap map;
  map.lambda = lambda;
  Shape img_shape = shape.size() == 3 ? shape : Shape{shape[1], shape[2], shape[3]};
  map.values = Tensor::zeros(img_shape);
  const auto& g = batch.grad();
  for (double v : g)
    if (std::isnan(v)) throw std::runtime_error("jacobian_saliency: NaN gradient");
  map.values.mutable_data() = g;
  return map;
}

namespace {

std::int64_t conv_out_extent(std::int64_t in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

std::int64_t film_flops(const ModelSpec& spec, double width) {
  if (!spec.conditional) return 0;
  std::int64_t macs = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::int64_t c = scaled_channels(spec.conv_channels[l], width);
    macs += 2 * (static_cast<std::int64_t>(spec.encode_dim) * c + c * c);
  }
  return macs;
}

std::int64_t flops_count(const ModelSpec& spec, double width) {
  spec.width_index(width);  // validates
  std::int64_t macs = 0;
  std::int64_t h = spec.image_size, w = spec.image_size;
  std::int64_t in_c = spec.in_channels;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::int64_t out_c = scaled_channels(spec.conv_channels[l], width);
    const int k = spec.conv_kernels[l];
    h = conv_out_extent(h, k, spec.conv_strides[l], spec.conv_pads[l]);
    w = conv_out_extent(w, k, spec.conv_strides[l], spec.conv_pads[l]);
    macs += h * w * out_c * in_c * k * k;  // conv
    macs += h * w * out_c;                 // normalization affine (FiLM folds in)
    in_c = out_c;
  }
  macs += in_c * spec.classes;  // classifier
  macs += film_flops(spec, width);
  return macs;
}

std::string tradeoff_csv(const std::vector<TradeoffPoint>& points) {
  std::string out = "lambda,width,sa,ra,attack,epsilon,steps,seed\n";
  char line[160];
  for (const auto& p : points) {
    std::snprintf(line, sizeof(line), "%g,%g,%.2f,%.2f,%s,%.9g,%d,%llu\n", p.lambda, p.width,
                  p.sa, p.ra, p.attack.c_str(), p.epsilon, p.steps,
                  static_cast<unsigned long long>(p.seed));
    out += line;
  }
  return out;
}

double saliency_alignment(ConditionalNet& net, const Dataset& ds, double lambda,
                          std::int64_t count) {
  count = std::min(count, ds.size());
  if (count < 1) throw std::invalid_argument("saliency_alignment: empty dataset");
  double total = 0.0;
  for (std::int64_t i = 0; i < count; ++i) {
    auto [x, y] = ds.batch({i});
    SaliencyMap map = jacobian_saliency(net, x, y[0], lambda);
    const auto& s = map.values.data();
    const auto& img = x.data();
    double dot_si = 0.0, ns = 0.0, ni = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double a = std::abs(s[j]);
      dot_si += a * img[j];
      ns += a * a;
      ni += img[j] * img[j];
    }
    if (ns > 0.0 && ni > 0.0) total += dot_si / (std::sqrt(ns) * std::sqrt(ni));
  }
  return total / static_cast<double>(count);
}

}  // namespace oatlab
