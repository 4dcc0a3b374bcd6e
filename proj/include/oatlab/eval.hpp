#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oatlab/attacks.hpp"
#include "oatlab/data.hpp"
#include "oatlab/model.hpp"

namespace oatlab {

struct TradeoffPoint {
  double lambda = 0.0;
  double width = 1.0;
  double sa = 0.0;  // percent
  double ra = 0.0;  // percent
  std::string attack;
  double epsilon = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;
};

/// Gradient of the clean cross-entropy with respect to one input image.
struct SaliencyMap {
  Tensor values;  // input-shaped
  std::int64_t image_id = 0;
  double lambda = 0.0;
};

/// Clean accuracy in percent, eval-mode normalization.
double eval_sa(ConditionalNet& net, const Dataset& ds, double lambda, double width,
               std::int64_t batch_size = 256);

/// Accuracy under fresh white-box attacks conditioned on the same
/// (lambda, width), in percent. The random-start stream starts at `seed`.
double eval_ra(ConditionalNet& net, const Dataset& ds, double lambda, double width,
               const AttackSpec& attack, std::uint64_t seed, std::int64_t batch_size = 256);

/// One point per (lambda, width) pair. Each point restarts the attack RNG at
/// `seed` so points are comparable.
std::vector<TradeoffPoint> sweep_tradeoff(ConditionalNet& net, const Dataset& ds,
                                          const std::vector<double>& lambda_list,
                                          const std::vector<double>& width_list,
                                          const AttackSpec& attack, std::uint64_t seed);

/// x is one image [C,H,W] (or [1,C,H,W]).
SaliencyMap jacobian_saliency(ConditionalNet& net, const Tensor& x, int label, double lambda,
                              double width = 1.0);

/// Analytic per-forward multiply-add count at the given width, conditioning
/// perceptrons included.
std::int64_t flops_count(const ModelSpec& spec, double width);

/// The conditioning overhead alone: the gamma/beta perceptrons. The affine
/// application itself folds into the normalization affine at a fixed lambda,
/// so it is not counted as overhead.
std::int64_t film_flops(const ModelSpec& spec, double width);

/// Mean cosine alignment between |saliency| and the image over `count` test
/// images.
double saliency_alignment(ConditionalNet& net, const Dataset& ds, double lambda,
                          std::int64_t count);

/// Canonical sweep CSV: fixed column order, percentages with two decimals.
std::string tradeoff_csv(const std::vector<TradeoffPoint>& points);

}  // namespace oatlab
