#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "oatlab/layers.hpp"
#include "oatlab/tensor.hpp"

namespace oatlab {

enum class BnStyle { dual, normal };

/// Architecture description. Each conv layer is followed by a normalization
/// layer (dual and/or per-width as configured), a FiLM block when the model
/// is conditional, and Leaky ReLU; a global average pool and a dense
/// classifier close the network.
struct ModelSpec {
  int in_channels = 1;
  int image_size = 16;
  int classes = 10;
  std::vector<int> conv_channels = {16, 32};
  std::vector<int> conv_kernels = {3, 4};
  std::vector<int> conv_strides = {1, 2};
  std::vector<int> conv_pads = {1, 1};
  double leaky_slope = 0.01;

  bool conditional = true;  // FiLM blocks + lambda encoder present
  BnStyle bn_style = BnStyle::dual;
  std::vector<double> widths = {1.0};

  EncoderScheme encoder = EncoderScheme::ro;
  int encode_dim = 128;
  std::vector<double> lambda_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 1.0};

  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t layer_count() const { return conv_channels.size(); }
  std::size_t width_index(double width) const;  // throws on unknown width
};

struct ForwardOptions {
  double lambda = 1.0;  // BN routing value; also the encoding when `encodings` is empty
  double width = 1.0;
  Mode mode = Mode::eval;
  Tensor encodings;           // optional per-sample [B,d]
  bool* bn_fallback = nullptr;
};

/// One normalization site: a (bn_c, bn_a) pair per configured width, or a
/// single BN per width in the normal-BN ablation.
struct NormSite {
  std::vector<DualBNState> dual;        // indexed like spec.widths
  std::vector<BatchNormState> single;   // normal-BN ablation
};

class ConditionalNet {
 public:
  ConditionalNet(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  const LambdaEncoder& encoder() const { return encoder_; }
  void set_encoder(LambdaEncoder enc) { encoder_ = std::move(enc); }

  /// Logits [B,classes]. Train mode updates the running statistics of the
  /// branch selected by options.lambda.
  Tensor forward(const Tensor& x, const ForwardOptions& options);

  /// [B,d] encoding rows for per-sample lambdas (requires a conditional
  /// model).
  Tensor encode_batch(const std::vector<double>& lambdas) const;

  std::vector<std::pair<std::string, Tensor>> parameters();
  void zero_grads();
  void set_params_requires_grad(bool v);

  /// Named running statistics: ("bn0.w0.c.mean", vector) etc.
  std::vector<std::pair<std::string, std::vector<double>*>> running_stats();

  NormSite& norm_site(std::size_t layer) { return norms_.at(layer); }
  Tensor& conv_weight(std::size_t layer) { return conv_w_.at(layer); }
  FiLMBlock& film(std::size_t layer) { return films_.at(layer); }
  Tensor& dense_weight() { return dense_w_; }
  Tensor& dense_bias() { return dense_b_; }

 private:
  ModelSpec spec_;
  LambdaEncoder encoder_;
  std::vector<Tensor> conv_w_;
  std::vector<NormSite> norms_;
  std::vector<FiLMBlock> films_;
  Tensor dense_w_, dense_b_;
};

}  // namespace oatlab
