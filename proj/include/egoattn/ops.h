#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "egoattn/tensor.h"

namespace egoattn {

class Rng;

// Differentiable primitives. Every op records an adjoint on the active tape
// when at least one operand requires a gradient; otherwise it is a plain
// forward computation.

/// Cross-correlation of x[Cin,H,W] with kernel[Cout,Cin,kH,kW] (odd kH, kW).
/// Output side is floor((H + 2*padding - kH) / stride) + 1. `bias` may be an
/// undefined tensor.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_n(std::span<const Tensor> xs);
/// Elementwise mean of equally shaped tensors.
Tensor mean_of(std::span<const Tensor> xs);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

/// Softmax over all entries of an [H,W] map, with max-subtraction.
Tensor spatial_softmax(const Tensor& m);
/// [C,H,W] -> [C], mean over the spatial plane.
Tensor global_avg_pool(const Tensor& x);
/// W[N,K] x[K] + b[N]. `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Inverted dropout. Identity (same handle) when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

Tensor log_softmax(const Tensor& x);
/// -logp[target], shape [1].
Tensor nll_loss(const Tensor& logp, std::size_t target);
Tensor cross_entropy(const Tensor& logits, std::size_t target);

Tensor sum(const Tensor& x);

/// Weighted channel sum: out(i) = sum_l w[row, l] * f(l, i). f[L,H,W], w[K,L].
Tensor channel_weighted_sum(const Tensor& f, const Tensor& w, std::size_t row);
/// f[L,H,W] times a[H,W] broadcast over channels.
Tensor broadcast_spatial_mul(const Tensor& f, const Tensor& a);

/// Rows [begin, end) of the leading axis.
Tensor slice_leading(const Tensor& x, std::size_t begin, std::size_t end);
/// Concatenation along the leading axis; trailing dims must agree.
Tensor concat_leading(std::span<const Tensor> xs);
Tensor reshape(const Tensor& x, Shape shape);

namespace debug {
enum class Fault { kNone, kConvBackwardSignFlip };
/// Test hook used to demonstrate that the gradient suite catches a broken
/// adjoint. Never set outside verification fixtures.
void set_fault(Fault fault);
Fault active_fault();
}  // namespace debug

}  // namespace egoattn
