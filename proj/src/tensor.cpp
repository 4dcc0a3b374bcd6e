#include "oatlab/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace oatlab {

namespace {
Precision g_precision = Precision::f32;
thread_local Tape* t_active_tape = nullptr;
}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape");
    n *= e;
  }
  return n;
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

double store_value(double v) {
  return g_precision == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<std::size_t>(numel(t.impl_->shape)), 0.0);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  const double v = store_value(value);
  for (auto& x : t.impl_->data) x = v;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("from_data: value count does not match shape");
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  for (auto& x : t.impl_->data) x = store_value(x);
  t.impl_->requires_grad = requires_grad;
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) throw std::out_of_range("dim index out of range");
  return s[i];
}

std::int64_t Tensor::size() const { return static_cast<std::int64_t>(data().size()); }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) const {
  if (!impl_) throw std::logic_error("undefined tensor");
  impl_->requires_grad = v;
}

const std::vector<double>& Tensor::data() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->data;
}

std::vector<double>& Tensor::mutable_data() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->data;
}

std::vector<double>& Tensor::grad() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

void Tensor::zero_grad() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  impl_->grad.assign(impl_->data.size(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data())
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item(): tensor is not scalar");
  return data()[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  if (impl_) {
    t.impl_ = std::make_shared<Impl>(*impl_);
  }
  return t;
}

void Tape::record(std::function<void()> backward_rule) {
  nodes_.push_back(std::move(backward_rule));
}

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  loss.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

Tape* active_tape() { return t_active_tape; }
void set_active_tape(Tape* tape) { t_active_tape = tape; }

}  // namespace oatlab
