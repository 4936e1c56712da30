#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "egoattn/checkpoint.h"
#include "egoattn/layers.h"
#include "egoattn/tensor.h"

namespace egoattn {

class Rng;

/// Memory update rule.
///   kStandard: c_t = i_t * c~_t + f_t * c_{t-1}
///   kVerbatim: c_t = c~_t * x_t + f_t * c_{t-1}, the attended input taking
///              the place of the input gate (needs hidden == input channels).
enum class GateVariant { kStandard, kVerbatim };

GateVariant parse_gate_variant(const std::string& name);
std::string to_string(GateVariant v);

struct ConvLSTMState {
  Tensor c;  // memory, [hidden,H,W]
  Tensor h;  // hidden, [hidden,H,W]
};

struct ConvLSTMGates {
  Tensor input, forget, candidate, output;
};

/// Convolutional LSTM cell. Gate kernels are stored stacked along the output
/// axis in the order (input, forget, candidate, output):
///   w_x[4*hidden, L, k, k], w_h[4*hidden, hidden, k, k], b[4*hidden].
class ConvLSTMCell {
 public:
  ConvLSTMCell() = default;
  ConvLSTMCell(std::size_t input_channels, std::size_t hidden, std::size_t kernel, Rng& rng,
               GateVariant variant = GateVariant::kStandard);

  ConvLSTMState zero_state(std::size_t h, std::size_t w) const;
  ConvLSTMState step(const Tensor& x, const ConvLSTMState& prev) const;
  ConvLSTMState step(const Tensor& x, const ConvLSTMState& prev, GateVariant variant,
                     ConvLSTMGates* gates = nullptr) const;

  std::size_t input_channels() const { return w_x_.dim(1); }
  std::size_t hidden() const { return w_x_.dim(0) / 4; }
  std::size_t kernel_size() const { return w_x_.dim(2); }
  GateVariant variant() const { return variant_; }
  void set_variant(GateVariant v) { variant_ = v; }

  Tensor& input_kernels() { return w_x_; }
  Tensor& hidden_kernels() { return w_h_; }
  Tensor& biases() { return b_; }
  const Tensor& input_kernels() const { return w_x_; }
  const Tensor& hidden_kernels() const { return w_h_; }
  const Tensor& biases() const { return b_; }

  ParamList params() const { return {{"w_x", w_x_}, {"w_h", w_h_}, {"b", b_}}; }
  ConvLSTMCell clone() const;

 private:
  Tensor w_x_, w_h_, b_;
  GateVariant variant_ = GateVariant::kStandard;
};

/// Folds the cell over `features` from `init` (zeros when undefined) and
/// returns global_avg_pool of the final memory c_T. Throws on an empty sequence.
Tensor encode_sequence(const ConvLSTMCell& cell, std::span<const Tensor> features,
                       const ConvLSTMState& init = {});

/// Dropout (training only) followed by the linear classifier.
Tensor classify_clip(const Tensor& descriptor, const Linear& classifier, double dropout_rate,
                     Rng& rng, bool training);

struct LSTMState {
  Tensor c;  // [hidden]
  Tensor h;  // [hidden]
};

/// Fully connected LSTM cell: w_x[4*hidden, D], w_h[4*hidden, hidden], b[4*hidden],
/// gates stacked (input, forget, candidate, output).
class LSTMCell {
 public:
  LSTMCell() = default;
  LSTMCell(std::size_t input_size, std::size_t hidden, Rng& rng);

  LSTMState zero_state() const;
  LSTMState step(const Tensor& x, const LSTMState& prev) const;

  std::size_t input_size() const { return w_x_.dim(1); }
  std::size_t hidden() const { return w_x_.dim(0) / 4; }
  Tensor& input_weights() { return w_x_; }
  Tensor& hidden_weights() { return w_h_; }
  Tensor& biases() { return b_; }

  ParamList params() const { return {{"w_x", w_x_}, {"w_h", w_h_}, {"b", b_}}; }
  LSTMCell clone() const;

 private:
  Tensor w_x_, w_h_, b_;
};

}  // namespace egoattn
