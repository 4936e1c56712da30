#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace egoattn {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first adjoint arrives
  bool requires_grad = false;
};

/// Dense row-major float64 tensor.
///
/// Tensor is a handle: copies share storage and gradient, which is what the
/// tape needs to route adjoints back to parameters. Use clone() for an
/// independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
  static Tensor normal(Shape shape, Rng& rng, double stddev);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool value = true);

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient view; allocates a zero buffer on first access.
  std::span<double> grad();
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad();

  Tensor clone() const;
  /// Same shape, moved into a fresh buffer with the given shape (numel must match).
  Tensor reshaped_copy(Shape shape) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations executed while the tape is
/// active on this thread. backward() replays the adjoint closures in exact
/// reverse order of recording, then clears the tape.
class Tape {
 public:
  using Adjoint = std::function<void()>;

  void record(Adjoint fn) { nodes_.push_back(std::move(fn)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 (loss must have one element) and propagates.
  /// Parameter gradients accumulate across calls; zero them explicitly.
  void backward(const Tensor& loss);

 private:
  std::vector<Adjoint> nodes_;
};

/// Makes `tape` the active tape of the calling thread for its lifetime.
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

/// True when an op over `inputs` must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);

/// Adds `values` into t's gradient buffer (allocating it if needed).
void accumulate_grad(TensorImpl& t, std::span<const double> values);

}  // namespace egoattn
