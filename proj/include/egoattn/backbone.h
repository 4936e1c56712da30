#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "egoattn/checkpoint.h"
#include "egoattn/tensor.h"

namespace egoattn {

class Rng;

struct BackboneConfig {
  std::size_t input_size = 112;
  std::size_t in_channels = 3;
  std::vector<std::size_t> channels{16, 32, 64, 64};
  std::vector<std::size_t> strides{2, 2, 2, 2};
  std::size_t kernel_size = 3;
  std::size_t num_pretrain_classes = 8;

  std::size_t feature_channels() const { return channels.empty() ? 0 : channels.back(); }
  /// Side of the final feature map; throws ConfigError when the geometry
  /// does not reduce input_size to an integer side >= 2.
  std::size_t final_side() const;
  void validate() const;
};

/// Small conv+ReLU stack with a global-average-pool and linear head.
///
/// The head weight row c holds the per-channel class weights used to build
/// the class activation map of class c. Inputs are normalized per channel
/// with the stored input statistics before the first block.
class BackboneNet {
 public:
  struct Output {
    Tensor features;  // [L, side, side], post-ReLU output of the last block
    Tensor pooled;    // [L]
    Tensor logits;    // [num_pretrain_classes]
  };

  BackboneNet() = default;
  BackboneNet(BackboneConfig config, Rng& rng);

  Output forward(const Tensor& frame) const;
  Tensor features(const Tensor& frame) const;

  const BackboneConfig& config() const { return config_; }
  std::size_t num_blocks() const { return kernels_.size(); }

  const Tensor& kernel(std::size_t block) const { return kernels_.at(block); }
  const Tensor& bias(std::size_t block) const { return biases_.at(block); }
  const Tensor& head_weight() const { return head_w_; }
  const Tensor& head_bias() const { return head_b_; }
  const Tensor& input_mean() const { return input_mean_; }
  const Tensor& input_std() const { return input_std_; }

  /// Names: input.mean, input.std, block<i>.weight, block<i>.bias, head.weight, head.bias.
  ParamList params() const;
  /// Trainable group "block<i>", "last_block" or "head".
  ParamList group(const std::string& name) const;

  /// Replaces the first block's kernel (input channel count may change).
  void replace_first_kernel(Tensor kernel);
  void set_input_stats(std::vector<double> mean, std::vector<double> stddev);

  BackboneNet clone() const;

 private:
  BackboneConfig config_;
  std::vector<Tensor> kernels_;
  std::vector<Tensor> biases_;
  Tensor head_w_, head_b_;
  Tensor input_mean_, input_std_;
};

/// Argmax with ties broken toward the lowest index.
std::size_t winning_class(const Tensor& logits);

}  // namespace egoattn
