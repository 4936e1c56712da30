#pragma once

#include <cstddef>

#include "egoattn/checkpoint.h"
#include "egoattn/tensor.h"

namespace egoattn {

class Rng;

/// Fully connected layer y = W x + b, W[out,in].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  ParamList params() const { return {{"weight", weight}, {"bias", bias}}; }
  Linear clone() const { return Linear{weight.clone(), bias.clone()}; }

 private:
  Linear(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {}
};

}  // namespace egoattn
