#include "oatlab/training.hpp"

#include <cmath>
#include <stdexcept>

#include "oatlab/ops.hpp"
#include "oatlab/rng.hpp"

namespace oatlab {

LambdaDistribution LambdaDistribution::uniform(std::vector<double> support) {
  LambdaDistribution d;
  d.support = std::move(support);
  d.weights.assign(d.support.size(), 1.0 / static_cast<double>(d.support.size()));
  d.validate();
  return d;
}

void LambdaDistribution::validate() const {
  if (support.empty()) throw std::invalid_argument("LambdaDistribution: empty support");
  if (weights.size() != support.size())
    throw std::invalid_argument("LambdaDistribution: weight count mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("LambdaDistribution: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("LambdaDistribution: weights must sum to 1");
  for (double v : support)
    if (v < 0.0 || v > 1.0)
      throw std::invalid_argument("LambdaDistribution: support outside [0,1]");
}

double LambdaDistribution::sample(std::mt19937_64& rng) const {
  const double u = rand_uniform(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    cum += weights[i];
    if (u < cum) return support[i];
  }
  return support.back();
}

void TrainConfig::validate() const {
  lambda_dist.validate();
  if (mode == TrainMode::oats || mode == TrainMode::pgd_ats) {
    if (width_list.size() < 2)
      throw std::invalid_argument("TrainConfig: slimmable modes need >= 2 widths");
  } else if (width_list != std::vector<double>{1.0}) {
    throw std::invalid_argument("TrainConfig: non-slimmable modes use width_list {1.0}");
  }
  if (lambda_fixed < 0.0 || lambda_fixed > 1.0)
    throw std::invalid_argument("TrainConfig: lambda outside [0,1]");
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("TrainConfig: bad epochs/batch");
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (total_steps < 1 || step < 0 || step > total_steps)
    throw std::invalid_argument("cosine_lr: step outside [0, total_steps]");
  const double pi = 3.14159265358979323846;
  return 0.5 * base_lr *
         (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

Tensor oat_loss(const Tensor& l_c, const Tensor& l_a, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("oat_loss: lambda outside [0,1]");
  if (l_c.size() != 1 || l_a.size() != 1)
    throw std::invalid_argument("oat_loss: loss terms must be scalar");
  return add(scale(l_c, 1.0 - lambda), scale(l_a, lambda));
}

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
  Shape shape = x.shape();
  const std::int64_t stride = x.size() / shape[0];
  shape[0] = static_cast<std::int64_t>(rows.size());
  Tensor out = Tensor::zeros(shape);
  auto& ov = out.mutable_data();
  const auto& xv = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data() + rows[i] * stride, stride,
                ov.data() + static_cast<std::int64_t>(i) * stride);
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<std::int64_t>& rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(v[static_cast<std::size_t>(r)]);
  return out;
}

double vector_sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

}  // namespace

Trainer::Trainer(ConditionalNet& net, TrainConfig cfg, std::int64_t steps_per_epoch)
    : net_(&net), cfg_(std::move(cfg)) {
  cfg_.validate();
  lambda_rng_.seed(derive_seed(cfg_.seed, 0x6c616d6264ULL));
  attack_rng_.seed(derive_seed(cfg_.seed, 0x617474ULL));
  if (steps_per_epoch < 1) throw std::invalid_argument("Trainer: steps_per_epoch must be >= 1");
  total_steps_ = cfg_.max_steps > 0
                     ? cfg_.max_steps
                     : static_cast<std::int64_t>(cfg_.epochs) * steps_per_epoch;
}

double Trainer::current_lr() const {
  return cosine_lr(std::min(opt_.step_count, total_steps_), total_steps_, cfg_.lr);
}

std::vector<double> Trainer::sample_lambda_batch(std::int64_t n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = cfg_.lambda_dist.sample(lambda_rng_);
  return out;
}

StepReport Trainer::conditional_step(const Tensor& x, const std::vector<int>& y,
                                     const std::vector<double>& lambda_batch,
                                     const std::vector<double>& widths) {
  const std::int64_t B = x.defined() ? x.dim(0) : 0;
  if (B == 0) throw std::invalid_argument("train step: empty batch");
  if (static_cast<std::int64_t>(lambda_batch.size()) != B)
    throw std::invalid_argument("train step: lambda batch size mismatch");

  std::vector<std::int64_t> idx0, idx1;
  for (std::int64_t i = 0; i < B; ++i)
    (lambda_batch[static_cast<std::size_t>(i)] == 0.0 ? idx0 : idx1).push_back(i);

  net_->zero_grads();

  const Tensor x0 = idx0.empty() ? Tensor() : gather_rows(x, idx0);
  const Tensor x1 = idx1.empty() ? Tensor() : gather_rows(x, idx1);
  const std::vector<int> y0 = gather(y, idx0);
  const std::vector<int> y1 = gather(y, idx1);
  const std::vector<double> lam1 = gather(lambda_batch, idx1);

  Tensor z0, z1;
  if (!idx0.empty()) z0 = net_->encode_batch(std::vector<double>(idx0.size(), 0.0));
  if (!idx1.empty()) z1 = net_->encode_batch(lam1);

  // Loss weights of Eq-style hybrid objective, normalized by the full batch.
  Tensor w1c, w1a;
  if (!idx1.empty()) {
    std::vector<double> wc(lam1.size()), wa(lam1.size());
    for (std::size_t i = 0; i < lam1.size(); ++i) {
      wc[i] = 1.0 - lam1[i];
      wa[i] = lam1[i];
    }
    w1c = Tensor::from_data({static_cast<std::int64_t>(lam1.size())}, std::move(wc));
    w1a = Tensor::from_data({static_cast<std::int64_t>(lam1.size())}, std::move(wa));
  }

  StepReport report;
  report.bn_c_count = static_cast<std::int64_t>(idx0.size());
  report.bn_a_count = static_cast<std::int64_t>(idx1.size());

  for (double width : widths) {
    // Adversarial examples are conditioned on the same lambda and width the
    // samples train with; generation runs eval-mode on frozen statistics.
    Tensor x1_adv;
    if (!idx1.empty())
      x1_adv = run_attack(*net_, x1, y1, 1.0, width, cfg_.attack, &attack_rng_, z1);

    TapeScope scope;
    bool fb = false;
    Tensor loss;
    Tensor ce0, ce1c, ce1a;
    if (!idx0.empty()) {
      ForwardOptions o;
      o.lambda = 0.0;
      o.width = width;
      o.mode = Mode::train;
      o.encodings = z0;
      o.bn_fallback = &fb;
      ce0 = softmax_xent_per_sample(net_->forward(x0, o), y0);
      loss = sum(ce0);
    }
    if (!idx1.empty()) {
      ForwardOptions o;
      o.lambda = 1.0;  // any nonzero value routes to bn_a
      o.width = width;
      o.mode = Mode::train;
      o.encodings = z1;
      o.bn_fallback = &fb;
      ce1c = softmax_xent_per_sample(net_->forward(x1, o), y1);
      ce1a = softmax_xent_per_sample(net_->forward(x1_adv, o), y1);
      Tensor adv_part = add(dot(ce1c, w1c), dot(ce1a, w1a));
      loss = loss.defined() ? add(loss, adv_part) : adv_part;
    }
    loss = scale(loss, 1.0 / static_cast<double>(B));
    scope.tape().backward(loss);

    report.loss += loss.item();
    report.l_c += (vector_sum(ce0.defined() ? ce0 : Tensor::zeros({1})) +
                   vector_sum(ce1c.defined() ? ce1c : Tensor::zeros({1}))) /
                  static_cast<double>(B);
    if (!idx1.empty()) report.l_a += vector_sum(ce1a) / static_cast<double>(idx1.size());
    report.bn_fallback = report.bn_fallback || fb;
  }

  const double nw = static_cast<double>(widths.size());
  report.loss /= nw;
  report.l_c /= nw;
  report.l_a /= nw;
  report.step = opt_.step_count;
  report.lr = current_lr();
  sgd_update(1.0 / nw);
  return report;
}

StepReport Trainer::fixed_step(const Tensor& x, const std::vector<int>& y,
                               const std::vector<double>& widths) {
  const std::int64_t B = x.defined() ? x.dim(0) : 0;
  if (B == 0) throw std::invalid_argument("train step: empty batch");
  const double lam = cfg_.mode == TrainMode::standard ? 0.0 : cfg_.lambda_fixed;

  net_->zero_grads();
  StepReport report;
  report.bn_c_count = lam == 0.0 ? B : 0;
  report.bn_a_count = B - report.bn_c_count;

  for (double width : widths) {
    Tensor x_adv;
    if (lam > 0.0) x_adv = run_attack(*net_, x, y, lam, width, cfg_.attack, &attack_rng_);

    TapeScope scope;
    bool fb = false;
    Tensor loss;
    ForwardOptions o;
    o.lambda = lam;
    o.width = width;
    o.mode = Mode::train;
    o.bn_fallback = &fb;
    if (lam < 1.0) {
      Tensor l_c = softmax_xent(net_->forward(x, o), y);
      report.l_c += l_c.item();
      loss = lam == 0.0 ? l_c : scale(l_c, 1.0 - lam);
    }
    if (lam > 0.0) {
      Tensor l_a = softmax_xent(net_->forward(x_adv, o), y);
      report.l_a += l_a.item();
      loss = loss.defined() ? add(loss, scale(l_a, lam)) : scale(l_a, lam);
    }
    scope.tape().backward(loss);
    report.loss += loss.item();
    report.bn_fallback = report.bn_fallback || fb;
  }

  const double nw = static_cast<double>(widths.size());
  report.loss /= nw;
  report.l_c /= nw;
  report.l_a /= nw;
  report.step = opt_.step_count;
  report.lr = current_lr();
  sgd_update(1.0 / nw);
  return report;
}

StepReport Trainer::oat_train_step(const Tensor& x, const std::vector<int>& y,
                                   const std::vector<double>& lambda_batch) {
  return conditional_step(x, y, lambda_batch, {1.0});
}

StepReport Trainer::oats_train_step(const Tensor& x, const std::vector<int>& y,
                                    const std::vector<double>& lambda_batch) {
  return conditional_step(x, y, lambda_batch, cfg_.width_list);
}

StepReport Trainer::pgd_at_step(const Tensor& x, const std::vector<int>& y) {
  return fixed_step(x, y, {1.0});
}

StepReport Trainer::pgd_ats_step(const Tensor& x, const std::vector<int>& y) {
  return fixed_step(x, y, cfg_.width_list);
}

void sgd_momentum_update(std::vector<double>& theta, const std::vector<double>& grad,
                         std::vector<double>& velocity, double lr, double momentum,
                         double weight_decay, double grad_scale) {
  for (std::size_t j = 0; j < theta.size(); ++j) {
    velocity[j] =
        store_value(momentum * velocity[j] + grad[j] * grad_scale + weight_decay * theta[j]);
    theta[j] = store_value(theta[j] - lr * velocity[j]);
  }
}

void Trainer::sgd_update(double grad_scale) {
  auto params = net_->parameters();
  if (opt_.velocity.empty()) {
    opt_.velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      opt_.velocity[i].assign(params[i].second.data().size(), 0.0);
  }
  const double lr = current_lr();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    sgd_momentum_update(p.mutable_data(), p.grad(), opt_.velocity[i], lr, cfg_.momentum,
                        cfg_.weight_decay, grad_scale);
  }
  ++opt_.step_count;
}

void Trainer::run(const Dataset& train, const ReportSink& sink) {
  BatchIterator it(train, cfg_.batch_size, derive_seed(cfg_.seed, 0x7368756646ULL));
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    Tensor x;
    std::vector<int> y;
    while (it.next(x, y)) {
      if (opt_.step_count >= total_steps_) return;
      StepReport report;
      switch (cfg_.mode) {
        case TrainMode::standard:
        case TrainMode::pgd_at:
          report = pgd_at_step(x, y);
          break;
        case TrainMode::pgd_ats:
          report = pgd_ats_step(x, y);
          break;
        case TrainMode::oat:
          report = oat_train_step(x, y, sample_lambda_batch(x.dim(0)));
          break;
        case TrainMode::oats:
          report = oats_train_step(x, y, sample_lambda_batch(x.dim(0)));
          break;
      }
      if (sink) sink(report);
    }
    it.advance_epoch();
  }
}

}  // namespace oatlab
