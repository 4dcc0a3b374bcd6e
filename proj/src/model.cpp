#include "oatlab/model.hpp"

#include <cmath>
#include <stdexcept>

#include "oatlab/ops.hpp"
#include "oatlab/rng.hpp"

namespace oatlab {

std::size_t ModelSpec::width_index(double width) const {
  for (std::size_t i = 0; i < widths.size(); ++i)
    if (widths[i] == width) return i;
  throw std::invalid_argument("unknown width factor " + std::to_string(width));
}

namespace {

Tensor uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& e : v) e = rand_uniform(rng, -bound, bound);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

ConditionalNet::ConditionalNet(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.conv_channels.size() != spec_.conv_kernels.size() ||
      spec_.conv_channels.size() != spec_.conv_strides.size() ||
      spec_.conv_channels.size() != spec_.conv_pads.size())
    throw std::invalid_argument("ModelSpec: conv layer lists must have equal length");
  if (spec_.widths.empty()) throw std::invalid_argument("ModelSpec: empty width list");

  std::mt19937_64 rng(derive_seed(seed, 0x696e6974ULL));
  if (spec_.conditional)
    encoder_ = LambdaEncoder::make(spec_.encoder, spec_.encode_dim, spec_.lambda_grid,
                                   derive_seed(seed, 0x656e63ULL));

  int in_c = spec_.in_channels;
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    const int out_c = spec_.conv_channels[l];
    const int k = spec_.conv_kernels[l];
    const double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * k * k));
    conv_w_.push_back(uniform_init({out_c, in_c, k, k}, bound, rng));

    NormSite site;
    for (double w : spec_.widths) {
      const std::int64_t ch = scaled_channels(out_c, w);
      if (spec_.bn_style == BnStyle::dual)
        site.dual.push_back(DualBNState::make(ch, spec_.bn_momentum, spec_.bn_eps));
      else
        site.single.push_back(BatchNormState::make(ch, spec_.bn_momentum, spec_.bn_eps));
    }
    norms_.push_back(std::move(site));

    if (spec_.conditional)
      films_.push_back(FiLMBlock::make(spec_.conditional ? encoder_.dim : 1, out_c, rng));
    in_c = out_c;
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(in_c));
  dense_w_ = uniform_init({in_c, spec_.classes}, bound, rng);
  dense_b_ = Tensor::zeros({spec_.classes}, true);
}

Tensor ConditionalNet::encode_batch(const std::vector<double>& lambdas) const {
  if (!spec_.conditional) throw std::logic_error("encode_batch: model is not conditional");
  const std::int64_t B = static_cast<std::int64_t>(lambdas.size());
  Tensor z = Tensor::zeros({B, encoder_.dim});
  auto& zv = z.mutable_data();
  for (std::int64_t i = 0; i < B; ++i) {
    const std::vector<double> e = encoder_.encode(lambdas[static_cast<std::size_t>(i)]);
    for (int k = 0; k < encoder_.dim; ++k)
      zv[static_cast<std::size_t>(i * encoder_.dim + k)] = store_value(e[static_cast<std::size_t>(k)]);
  }
  return z;
}

Tensor ConditionalNet::forward(const Tensor& x, const ForwardOptions& options) {
  const std::size_t wi = spec_.width_index(options.width);
  if (options.lambda < 0.0 || options.lambda > 1.0)
    throw std::invalid_argument("forward: lambda outside [0,1]");

  Tensor z = options.encodings;
  if (spec_.conditional && !z.defined()) {
    std::vector<double> lambdas(static_cast<std::size_t>(x.dim(0)), options.lambda);
    z = encode_batch(lambdas);
  }
  if (options.bn_fallback) *options.bn_fallback = false;

  Tensor h = x;
  std::int64_t in_c = spec_.in_channels;
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    const std::int64_t full = spec_.conv_channels[l];
    const std::int64_t out_c = scaled_channels(full, options.width);
    Tensor w = conv_w_[l];
    if (out_c < full) w = slice_prefix(w, 0, out_c);
    if (in_c < w.dim(1)) w = slice_prefix(w, 1, in_c);
    h = conv2d(h, w, spec_.conv_strides[l], spec_.conv_pads[l]);

    bool fb = false;
    NormSite& site = norms_[l];
    if (spec_.bn_style == BnStyle::dual)
      h = dual_bn_forward(site.dual[wi], h, options.lambda, options.mode, &fb);
    else
      h = batchnorm_forward(site.single[wi], h, options.mode, &fb);
    if (fb && options.bn_fallback) *options.bn_fallback = true;

    if (spec_.conditional) h = film_forward(films_[l], h, z, out_c);
    h = leaky_relu(h, spec_.leaky_slope);
    in_c = out_c;
  }

  h = global_avg_pool(h);
  Tensor dw = dense_w_;
  if (in_c < dw.dim(0)) dw = slice_prefix(dw, 0, in_c);
  return add_rowvec(matmul(h, dw), dense_b_);
}

std::vector<std::pair<std::string, Tensor>> ConditionalNet::parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < conv_w_.size(); ++l)
    out.emplace_back("conv" + std::to_string(l) + ".w", conv_w_[l]);
  for (std::size_t l = 0; l < norms_.size(); ++l) {
    const std::string base = "bn" + std::to_string(l) + ".w";
    for (std::size_t wi = 0; wi < spec_.widths.size(); ++wi) {
      if (spec_.bn_style == BnStyle::dual) {
        auto& d = norms_[l].dual[wi];
        out.emplace_back(base + std::to_string(wi) + ".c.gamma", d.bn_c.gamma);
        out.emplace_back(base + std::to_string(wi) + ".c.beta", d.bn_c.beta);
        out.emplace_back(base + std::to_string(wi) + ".a.gamma", d.bn_a.gamma);
        out.emplace_back(base + std::to_string(wi) + ".a.beta", d.bn_a.beta);
      } else {
        auto& s = norms_[l].single[wi];
        out.emplace_back(base + std::to_string(wi) + ".gamma", s.gamma);
        out.emplace_back(base + std::to_string(wi) + ".beta", s.beta);
      }
    }
  }
  for (std::size_t l = 0; l < films_.size(); ++l) {
    const std::string base = "film" + std::to_string(l);
    const auto add_mlp = [&](const std::string& name, Mlp2& m) {
      out.emplace_back(base + "." + name + ".w1", m.w1);
      out.emplace_back(base + "." + name + ".b1", m.b1);
      out.emplace_back(base + "." + name + ".w2", m.w2);
      out.emplace_back(base + "." + name + ".b2", m.b2);
    };
    add_mlp("g1", films_[l].g1);
    add_mlp("g2", films_[l].g2);
  }
  out.emplace_back("dense.w", dense_w_);
  out.emplace_back("dense.b", dense_b_);
  return out;
}

void ConditionalNet::zero_grads() {
  for (auto& [name, t] : parameters()) t.zero_grad();
}

void ConditionalNet::set_params_requires_grad(bool v) {
  for (auto& [name, t] : parameters()) t.set_requires_grad(v);
}

std::vector<std::pair<std::string, std::vector<double>*>> ConditionalNet::running_stats() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (std::size_t l = 0; l < norms_.size(); ++l) {
    const std::string base = "bn" + std::to_string(l) + ".w";
    for (std::size_t wi = 0; wi < spec_.widths.size(); ++wi) {
      const std::string w = base + std::to_string(wi);
      if (spec_.bn_style == BnStyle::dual) {
        auto& d = norms_[l].dual[wi];
        out.emplace_back(w + ".c.mean", &d.bn_c.running_mean);
        out.emplace_back(w + ".c.var", &d.bn_c.running_var);
        out.emplace_back(w + ".a.mean", &d.bn_a.running_mean);
        out.emplace_back(w + ".a.var", &d.bn_a.running_var);
      } else {
        auto& s = norms_[l].single[wi];
        out.emplace_back(w + ".mean", &s.running_mean);
        out.emplace_back(w + ".var", &s.running_var);
      }
    }
  }
  return out;
}

}  // namespace oatlab
