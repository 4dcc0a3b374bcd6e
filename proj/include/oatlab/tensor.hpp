#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace oatlab {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);

/// Engine-wide scalar precision. f32 (the default) stores every produced
/// value rounded to the nearest 32-bit float; f64 keeps full doubles and is
/// the mode gradient verification runs in. Switching while operations are in
/// flight on another thread is not supported.
enum class Precision { f32, f64 };

void set_precision(Precision p);
Precision precision();

struct PrecisionGuard {
  explicit PrecisionGuard(Precision p) : prev_(precision()) { set_precision(p); }
  ~PrecisionGuard() { set_precision(prev_); }
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision prev_;
};

/// Rounds a value through the active precision. Every operator routes its
/// outputs (and gradient accumulations) through this.
double store_value(double v);

/// N-dimensional array with an optional gradient buffer. Copies share
/// storage; operators never mutate their inputs' data, so sharing across
/// threads is read-safe. Use clone() for an independent deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t i) const;
  std::int64_t size() const;
  bool requires_grad() const;

  // Tensor is a handle: const applies to the handle, not the shared
  // storage, so mutators below are const-qualified (as backward rules hold
  // tensors by value).
  void set_requires_grad(bool v) const;

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data() const;

  /// Gradient buffer, allocated (zero-filled) on first access.
  std::vector<double>& grad() const;
  bool has_grad() const;
  void zero_grad() const;

  bool all_finite() const;
  double item() const;
  Tensor clone() const;

  /// True when both handles alias the same storage.
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Records one backward rule per executed operation, in execution order.
/// Execution order is topological by construction, so backward() is a single
/// reverse sweep that visits each node exactly once. A Tape is
/// single-threaded; it must be clear()ed (or discarded) before reuse.
class Tape {
 public:
  void record(std::function<void()> backward_rule);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
  /// accumulate (+=) into every requires-grad tensor involved. The tape is
  /// left intact; call clear() to reset it.
  void backward(Tensor& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

/// The tape new operations record onto; nullptr disables recording.
Tape* active_tape();
void set_active_tape(Tape* tape);

/// Installs a fresh tape for the current scope.
class TapeScope {
 public:
  TapeScope() : prev_(active_tape()) { set_active_tape(&tape_); }
  ~TapeScope() { set_active_tape(prev_); }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* prev_;
};

/// Disables recording for the current scope.
class NoGradScope {
 public:
  NoGradScope() : prev_(active_tape()) { set_active_tape(nullptr); }
  ~NoGradScope() { set_active_tape(prev_); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace oatlab
