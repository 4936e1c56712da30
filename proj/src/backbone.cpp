#include "egoattn/backbone.h"

#include <cmath>

#include "egoattn/errors.h"
#include "egoattn/ops.h"
#include "egoattn/rng.h"

namespace egoattn {

std::size_t BackboneConfig::final_side() const {
  if (channels.empty() || channels.size() != strides.size()) {
    throw ConfigError("backbone needs one stride per block (channels " +
                      std::to_string(channels.size()) + ", strides " +
                      std::to_string(strides.size()) + ")");
  }
  if (kernel_size % 2 == 0) throw ConfigError("backbone kernel size must be odd");
  std::size_t side = input_size;
  for (auto s : strides) {
    if (s == 0 || side % s != 0) {
      throw ConfigError("input size " + std::to_string(input_size) +
                        " is not divisible by the product of strides");
    }
    side /= s;
  }
  if (side < 2) {
    throw ConfigError("final feature map side " + std::to_string(side) + " is below 2");
  }
  return side;
}

void BackboneConfig::validate() const {
  final_side();
  if (in_channels == 0 || num_pretrain_classes == 0) {
    throw ConfigError("backbone needs positive input channels and classes");
  }
}

BackboneNet::BackboneNet(BackboneConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const std::size_t k = config_.kernel_size;
  std::size_t in = config_.in_channels;
  for (auto out : config_.channels) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
    kernels_.push_back(Tensor::uniform({out, in, k, k}, rng, -bound, bound));
    biases_.push_back(Tensor({out}));
    in = out;
  }
  const double hb = 1.0 / std::sqrt(static_cast<double>(in));
  head_w_ = Tensor::uniform({config_.num_pretrain_classes, in}, rng, -hb, hb);
  head_b_ = Tensor({config_.num_pretrain_classes});
  input_mean_ = Tensor({config_.in_channels}, 0.0);
  input_std_ = Tensor({config_.in_channels}, 1.0);
}

Tensor BackboneNet::features(const Tensor& frame) const {
  const auto& c = config_;
  if (frame.rank() != 3 || frame.dim(0) != c.in_channels || frame.dim(1) != c.input_size ||
      frame.dim(2) != c.input_size) {
    throw DimensionError("backbone expects a frame of shape " +
                         shape_str({c.in_channels, c.input_size, c.input_size}) + ", got " +
                         shape_str(frame.shape()));
  }
  Tensor x(frame.shape());
  const std::size_t plane = c.input_size * c.input_size;
  for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
    const double m = input_mean_[ch], s = input_std_[ch];
    for (std::size_t i = 0; i < plane; ++i) x[ch * plane + i] = (frame[ch * plane + i] - m) / s;
  }
  if (frame.requires_grad()) {
    // Differentiable path for gradient checks through the input.
    Tensor mean_map(frame.shape()), inv_std(frame.shape());
    for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
      for (std::size_t i = 0; i < plane; ++i) {
        mean_map[ch * plane + i] = input_mean_[ch];
        inv_std[ch * plane + i] = 1.0 / input_std_[ch];
      }
    }
    x = hadamard(sub(frame, mean_map), inv_std);
  }
  const std::size_t pad = c.kernel_size / 2;
  for (std::size_t b = 0; b < kernels_.size(); ++b) {
    x = relu(conv2d(x, kernels_[b], biases_[b], c.strides[b], pad));
  }
  return x;
}

BackboneNet::Output BackboneNet::forward(const Tensor& frame) const {
  Output out;
  out.features = features(frame);
  out.pooled = global_avg_pool(out.features);
  out.logits = linear(out.pooled, head_w_, head_b_);
  return out;
}

ParamList BackboneNet::params() const {
  ParamList out{{"input.mean", input_mean_}, {"input.std", input_std_}};
  for (std::size_t b = 0; b < kernels_.size(); ++b) {
    out.push_back({"block" + std::to_string(b) + ".weight", kernels_[b]});
    out.push_back({"block" + std::to_string(b) + ".bias", biases_[b]});
  }
  out.push_back({"head.weight", head_w_});
  out.push_back({"head.bias", head_b_});
  return out;
}

ParamList BackboneNet::group(const std::string& name) const {
  if (name == "head") return {{"head.weight", head_w_}, {"head.bias", head_b_}};
  std::size_t block = kernels_.size();
  if (name == "last_block") {
    block = kernels_.size() - 1;
  } else if (name.rfind("block", 0) == 0) {
    block = std::stoul(name.substr(5));
  }
  if (block >= kernels_.size()) throw ConfigError("unknown backbone parameter group '" + name + "'");
  const std::string p = "block" + std::to_string(block);
  return {{p + ".weight", kernels_[block]}, {p + ".bias", biases_[block]}};
}

void BackboneNet::replace_first_kernel(Tensor kernel) {
  if (kernel.rank() != 4 || kernel.dim(0) != config_.channels.front() ||
      kernel.dim(2) != config_.kernel_size || kernel.dim(3) != config_.kernel_size) {
    throw DimensionError("first-block kernel must be [" + std::to_string(config_.channels.front()) +
                         ",Cin,k,k], got " + shape_str(kernel.shape()));
  }
  config_.in_channels = kernel.dim(1);
  kernels_.front() = std::move(kernel);
  input_mean_ = Tensor({config_.in_channels}, 0.0);
  input_std_ = Tensor({config_.in_channels}, 1.0);
}

void BackboneNet::set_input_stats(std::vector<double> mean, std::vector<double> stddev) {
  if (mean.size() != config_.in_channels || stddev.size() != config_.in_channels) {
    throw DimensionError("input statistics must have one entry per input channel");
  }
  input_mean_ = Tensor({config_.in_channels}, std::move(mean));
  input_std_ = Tensor({config_.in_channels}, std::move(stddev));
}

BackboneNet BackboneNet::clone() const {
  BackboneNet out;
  out.config_ = config_;
  for (const auto& k : kernels_) out.kernels_.push_back(k.clone());
  for (const auto& b : biases_) out.biases_.push_back(b.clone());
  out.head_w_ = head_w_.clone();
  out.head_b_ = head_b_.clone();
  out.input_mean_ = input_mean_.clone();
  out.input_std_ = input_std_.clone();
  return out;
}

std::size_t winning_class(const Tensor& logits) {
  if (logits.numel() == 0) throw DimensionError("winning_class on empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

}  // namespace egoattn
