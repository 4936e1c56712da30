#include "egoattn/convlstm.h"

#include <algorithm>
#include <cmath>

#include "egoattn/errors.h"
#include "egoattn/ops.h"
#include "egoattn/rng.h"

namespace egoattn {

GateVariant parse_gate_variant(const std::string& name) {
  if (name == "standard") return GateVariant::kStandard;
  if (name == "verbatim") return GateVariant::kVerbatim;
  throw ConfigError("unknown gate variant '" + name + "' (expected standard|verbatim)");
}

std::string to_string(GateVariant v) {
  return v == GateVariant::kStandard ? "standard" : "verbatim";
}

namespace {

bool is_constant_zero(const Tensor& t) {
  return !t.requires_grad() &&
         std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
}

}  // namespace

ConvLSTMCell::ConvLSTMCell(std::size_t input_channels, std::size_t hidden, std::size_t kernel,
                           Rng& rng, GateVariant variant)
    : variant_(variant) {
  if (kernel % 2 == 0) throw ConfigError("convLSTM kernel size must be odd");
  if (variant == GateVariant::kVerbatim && hidden != input_channels) {
    throw ConfigError("verbatim gate variant needs hidden (" + std::to_string(hidden) +
                      ") == input channels (" + std::to_string(input_channels) + ")");
  }
  const double bound =
      1.0 / std::sqrt(static_cast<double>((input_channels + hidden) * kernel * kernel));
  w_x_ = Tensor::uniform({4 * hidden, input_channels, kernel, kernel}, rng, -bound, bound);
  w_h_ = Tensor::uniform({4 * hidden, hidden, kernel, kernel}, rng, -bound, bound);
  b_ = Tensor({4 * hidden});
}

ConvLSTMState ConvLSTMCell::zero_state(std::size_t h, std::size_t w) const {
  return {Tensor({hidden(), h, w}), Tensor({hidden(), h, w})};
}

ConvLSTMState ConvLSTMCell::step(const Tensor& x, const ConvLSTMState& prev) const {
  return step(x, prev, variant_);
}

ConvLSTMState ConvLSTMCell::step(const Tensor& x, const ConvLSTMState& prev, GateVariant variant,
                                 ConvLSTMGates* gates) const {
  const std::size_t hid = hidden();
  if (x.rank() != 3 || x.dim(0) != input_channels()) {
    throw DimensionError("convLSTM input must be [" + std::to_string(input_channels()) +
                         ",H,W], got " + shape_str(x.shape()));
  }
  if (prev.c.shape() != Shape{hid, x.dim(1), x.dim(2)} || prev.h.shape() != prev.c.shape()) {
    throw DimensionError("convLSTM state " + shape_str(prev.c.shape()) +
                         " does not match input spatial axes of " + shape_str(x.shape()));
  }
  if (variant == GateVariant::kVerbatim && hid != input_channels()) {
    throw ConfigError("verbatim gate variant needs hidden == input channels");
  }
  const std::size_t pad = kernel_size() / 2;
  Tensor pre = conv2d(x, w_x_, b_, 1, pad);
  if (!is_constant_zero(prev.h)) pre = add(pre, conv2d(prev.h, w_h_, Tensor(), 1, pad));

  Tensor i = sigmoid(slice_leading(pre, 0, hid));
  Tensor f = sigmoid(slice_leading(pre, hid, 2 * hid));
  Tensor g = tanh(slice_leading(pre, 2 * hid, 3 * hid));
  Tensor o = sigmoid(slice_leading(pre, 3 * hid, 4 * hid));

  Tensor written = variant == GateVariant::kStandard ? hadamard(i, g) : hadamard(g, x);
  ConvLSTMState next;
  next.c = add(written, hadamard(f, prev.c));
  next.h = hadamard(o, tanh(next.c));
  if (gates) *gates = {i, f, g, o};
  return next;
}

ConvLSTMCell ConvLSTMCell::clone() const {
  ConvLSTMCell out;
  out.w_x_ = w_x_.clone();
  out.w_h_ = w_h_.clone();
  out.b_ = b_.clone();
  out.variant_ = variant_;
  return out;
}

Tensor encode_sequence(const ConvLSTMCell& cell, std::span<const Tensor> features,
                       const ConvLSTMState& init) {
  if (features.empty()) throw std::invalid_argument("encode_sequence: empty frame sequence");
  ConvLSTMState state =
      init.c.defined() ? init : cell.zero_state(features[0].dim(1), features[0].dim(2));
  for (const auto& x : features) state = cell.step(x, state);
  return global_avg_pool(state.c);
}

Tensor classify_clip(const Tensor& descriptor, const Linear& classifier, double dropout_rate,
                     Rng& rng, bool training) {
  return classifier.forward(dropout(descriptor, dropout_rate, rng, training));
}

LSTMCell::LSTMCell(std::size_t input_size, std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_x_ = Tensor::uniform({4 * hidden, input_size}, rng, -bound, bound);
  w_h_ = Tensor::uniform({4 * hidden, hidden}, rng, -bound, bound);
  b_ = Tensor({4 * hidden});
}

LSTMState LSTMCell::zero_state() const { return {Tensor({hidden()}), Tensor({hidden()})}; }

LSTMState LSTMCell::step(const Tensor& x, const LSTMState& prev) const {
  const std::size_t hid = hidden();
  if (x.rank() != 1 || x.dim(0) != input_size()) {
    throw DimensionError("LSTM input must be [" + std::to_string(input_size()) + "], got " +
                         shape_str(x.shape()));
  }
  Tensor pre = linear(x, w_x_, b_);
  if (!is_constant_zero(prev.h)) pre = add(pre, linear(prev.h, w_h_, Tensor()));
  Tensor i = sigmoid(slice_leading(pre, 0, hid));
  Tensor f = sigmoid(slice_leading(pre, hid, 2 * hid));
  Tensor g = tanh(slice_leading(pre, 2 * hid, 3 * hid));
  Tensor o = sigmoid(slice_leading(pre, 3 * hid, 4 * hid));
  LSTMState next;
  next.c = add(hadamard(i, g), hadamard(f, prev.c));
  next.h = hadamard(o, tanh(next.c));
  return next;
}

LSTMCell LSTMCell::clone() const {
  LSTMCell out;
  out.w_x_ = w_x_.clone();
  out.w_h_ = w_h_.clone();
  out.b_ = b_.clone();
  return out;
}

}  // namespace egoattn
