#include "egoattn/layers.h"

#include <cmath>

#include "egoattn/ops.h"
#include "egoattn/rng.h"

namespace egoattn {

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Tensor::uniform({out, in}, rng, -bound, bound);
  bias = Tensor({out});
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias); }

}  // namespace egoattn
