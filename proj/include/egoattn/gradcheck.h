#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "egoattn/tensor.h"

namespace egoattn {

/// Central-difference gradient check of a scalar-valued function.
///
/// Runs `loss` once under a tape to obtain analytic gradients for `wrt`, then
/// perturbs every coordinate by +-h. Returns the maximum over coordinates of
/// |a - n| / max(1, |a|, |n|). `max_coords_per_tensor` > 0 restricts the
/// numeric sweep to an evenly strided subset of each tensor.
double grad_check(const std::function<Tensor()>& loss, std::span<Tensor> wrt, double h = 1e-5,
                  std::size_t max_coords_per_tensor = 0);

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5);

}  // namespace egoattn
