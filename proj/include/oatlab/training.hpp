#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "oatlab/attacks.hpp"
#include "oatlab/data.hpp"
#include "oatlab/model.hpp"

namespace oatlab {

/// Discrete sampling distribution over trade-off weights.
struct LambdaDistribution {
  std::vector<double> support;  // ordered, subset of [0,1]
  std::vector<double> weights;  // same length, sums to 1

  static LambdaDistribution uniform(std::vector<double> support);
  void validate() const;
  double sample(std::mt19937_64& rng) const;
};

enum class TrainMode { standard, pgd_at, oat, pgd_ats, oats };

struct TrainConfig {
  TrainMode mode = TrainMode::oat;
  BnStyle bn_style = BnStyle::dual;
  LambdaDistribution lambda_dist =
      LambdaDistribution::uniform({0.0, 0.1, 0.2, 0.3, 0.4, 1.0});
  double lambda_fixed = 1.0;  // pgd_at / pgd_ats weight
  std::vector<double> width_list = {1.0};
  AttackSpec attack;
  int epochs = 30;
  std::int64_t batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  std::int64_t max_steps = 0;  // 0: epochs * batches per epoch

  void validate() const;
};

/// Momentum-SGD state; velocity buffers mirror the parameter list.
struct OptimizerState {
  std::vector<std::vector<double>> velocity;
  std::int64_t step_count = 0;
};

/// 0.5 * base_lr * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

/// v <- momentum*v + grad*grad_scale + weight_decay*theta;
/// theta <- theta - lr*v. Elementwise, through the active precision.
void sgd_momentum_update(std::vector<double>& theta, const std::vector<double>& grad,
                         std::vector<double>& velocity, double lr, double momentum,
                         double weight_decay, double grad_scale);

/// (1 - lambda) * l_c + lambda * l_a for scalar loss tensors.
Tensor oat_loss(const Tensor& l_c, const Tensor& l_a, double lambda);

struct StepReport {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double l_c = 0.0;        // mean clean cross-entropy over the batch
  double l_a = 0.0;        // mean adversarial cross-entropy over attacked samples
  std::int64_t bn_c_count = 0;
  std::int64_t bn_a_count = 0;
  bool bn_fallback = false;
};

using ReportSink = std::function<void(const StepReport&)>;

/// Drives one model through one training run. Single-threaded: BN statistics
/// make step order significant. Independent runs can execute concurrently on
/// separate Trainer/model pairs.
class Trainer {
 public:
  Trainer(ConditionalNet& net, TrainConfig cfg, std::int64_t steps_per_epoch);

  /// Model-conditional step: per-sample lambdas route BN branches, condition
  /// attacks, and weight the loss terms.
  StepReport oat_train_step(const Tensor& x, const std::vector<int>& y,
                            const std::vector<double>& lambda_batch);

  /// Slimmable variant: per width factor, switch BN, attack and forward with
  /// the slimmed subnet, accumulate gradients; one averaged update at the end.
  StepReport oats_train_step(const Tensor& x, const std::vector<int>& y,
                             const std::vector<double>& lambda_batch);

  /// Dedicated fixed-lambda baseline step (plain BN, no conditioning).
  StepReport pgd_at_step(const Tensor& x, const std::vector<int>& y);

  /// Slimmable fixed-lambda baseline.
  StepReport pgd_ats_step(const Tensor& x, const std::vector<int>& y);

  /// Full run over the dataset; dispatches on cfg.mode per step.
  void run(const Dataset& train, const ReportSink& sink = {});

  /// The width-loop core both conditional modes share: per width, attack +
  /// clean/adv forwards + backward accumulate; one averaged update at the
  /// end. oat_train_step is conditional_step with widths {1.0}.
  StepReport conditional_step(const Tensor& x, const std::vector<int>& y,
                              const std::vector<double>& lambda_batch,
                              const std::vector<double>& widths);
  /// Fixed-lambda counterpart used by the dedicated baselines.
  StepReport fixed_step(const Tensor& x, const std::vector<int>& y,
                        const std::vector<double>& widths);

  std::vector<double> sample_lambda_batch(std::int64_t n);
  std::int64_t total_steps() const { return total_steps_; }
  const OptimizerState& optimizer() const { return opt_; }
  double current_lr() const;

 private:
  void sgd_update(double grad_scale);

  ConditionalNet* net_;
  TrainConfig cfg_;
  std::int64_t total_steps_;
  OptimizerState opt_;
  std::mt19937_64 lambda_rng_;
  std::mt19937_64 attack_rng_;
};

}  // namespace oatlab
