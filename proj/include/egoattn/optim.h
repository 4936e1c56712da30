#pragma once

#include <cstddef>
#include <vector>

#include "egoattn/checkpoint.h"
#include "egoattn/tensor.h"

namespace egoattn {

/// Learning rate at (0-based) epoch e: base * decay^(number of thresholds <= e).
double scheduled_lr(double base, double decay, const std::vector<std::size_t>& thresholds,
                    std::size_t epoch);

/// Parameters that currently require a gradient.
std::vector<Tensor> trainable(const ParamList& params);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Applies one update from the accumulated .grad() of each parameter,
  /// then clears the gradients. Parameters without a gradient are skipped.
  virtual void step(double lr) = 0;
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }
  /// L2 penalty coefficient added to every gradient (g + wd * p).
  void set_weight_decay(double wd) { weight_decay_ = wd; }

 protected:
  explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}
  std::vector<Tensor> params_;
  double weight_decay_ = 0.0;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(double lr) override;
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Heavy-ball SGD: v = mu * v + g; p -= lr * v.
class Sgd : public Optimizer {
 public:
  explicit Sgd(std::vector<Tensor> params, double momentum = 0.9);
  void step(double lr) override;

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace egoattn
