#include "egoattn/optim.h"

#include <cmath>
#include <utility>

namespace egoattn {

double scheduled_lr(double base, double decay, const std::vector<std::size_t>& thresholds,
                    std::size_t epoch) {
  double lr = base;
  for (std::size_t t : thresholds) {
    if (t <= epoch) lr *= decay;
  }
  return lr;
}

std::vector<Tensor> trainable(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) {
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  }
  return out;
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : Optimizer(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = std::as_const(p).grad();
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + weight_decay_ * w[i];
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * gi;
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m_[k][i] / c1;
      const double vhat = v_[k][i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
  zero_grad();
}

Sgd::Sgd(std::vector<Tensor> params, double momentum)
    : Optimizer(std::move(params)), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = std::as_const(p).grad();
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      velocity_[k][i] = momentum_ * velocity_[k][i] + g[i] + weight_decay_ * w[i];
      w[i] -= lr * velocity_[k][i];
    }
  }
  zero_grad();
}

}  // namespace egoattn
