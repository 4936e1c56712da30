#include "egoattn/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <vector>

namespace egoattn {

double grad_check(const std::function<Tensor()>& loss, std::span<Tensor> wrt, double h,
                  std::size_t max_coords_per_tensor) {
  std::vector<bool> saved_flags;
  for (auto& t : wrt) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor value;
    {
      TapeScope scope(tape);
      value = loss();
    }
    tape.backward(value);
  }
  double worst = 0.0;
  for (auto& t : wrt) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const std::size_t n = t.numel();
    const std::size_t step =
        max_coords_per_tensor == 0 ? 1 : std::max<std::size_t>(1, n / max_coords_per_tensor);
    for (std::size_t i = 0; i < n; i += step) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = loss().item();
      t[i] = saved - h;
      const double down = loss().item();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    wrt[k].zero_grad();
    wrt[k].set_requires_grad(saved_flags[k]);
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  Tensor wrt[] = {x};
  return grad_check([&] { return f(x); }, wrt, h);
}

}  // namespace egoattn
