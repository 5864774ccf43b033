#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperace {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand extents are incompatible. The message names the
/// operation and the offending dimension.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const std::string& detail)
      : std::invalid_argument(op + ": " + detail) {}
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

/// Dense row-major float64 array with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage. Operations
/// never mutate their inputs; they allocate a fresh result and, when a Tape
/// is recording and any input requires a gradient, record a backward rule.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<const double> data() const { return impl_->data; }
  // Writable view for initializing leaves and applying optimizer updates.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  // Deep copy without gradient tracking.
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor(std::shared_ptr<TensorImpl>);

  std::shared_ptr<TensorImpl> impl_;
};

Tensor make_tensor(std::shared_ptr<TensorImpl> impl);

/// Ordered record of executed differentiable operations.
///
/// Install with TapeScope; every op run while the scope is alive and whose
/// inputs require gradients appends its backward rule here.
class Tape {
 public:
  Tape();

  void record(const std::shared_ptr<TensorImpl>& output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and replays the recorded rules in reverse.
  /// Throws std::invalid_argument if `loss` is not a one-element tensor
  /// produced on this tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  /// Distinct for every tape constructed in the process.
  std::uint64_t serial() const { return serial_; }

 private:
  struct Node {
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  std::uint64_t serial_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Thread-local tally of floating-point operations executed by tensor ops.
/// Counters nest; an inner counter also credits the enclosing one.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t flops() const { return flops_; }

 private:
  friend void add_flops(std::uint64_t);
  FlopCounter* parent_;
  std::uint64_t flops_ = 0;
};

void add_flops(std::uint64_t n);

}  // namespace hyperace
