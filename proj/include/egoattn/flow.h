#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "egoattn/tensor.h"

namespace egoattn {

struct VideoClip;

/// Dense displacement field in pixels: frame a at p matches frame b at p + (u, v).
struct FlowField {
  Tensor u;  // [H,W]
  Tensor v;  // [H,W]
};

/// Duality-based TV-L1 solver settings. lambda is expressed for intensities
/// rescaled to [0,255].
struct TvL1Params {
  double lambda = 0.15;
  double theta = 0.3;
  double tau = 0.25;
  std::size_t warps = 5;
  std::size_t scales = 5;
  double zoom = 0.5;
  std::size_t iterations = 30;
  double epsilon = 0.01;
  std::size_t min_size = 16;
};

/// Coarse-to-fine TV-L1 optical flow between grayscale images a and b
/// ([H,W], values in [0,1]). Throws std::invalid_argument for images smaller
/// than params.min_size or of different shapes.
FlowField tvl1_flow(const Tensor& a, const Tensor& b, const TvL1Params& params = {});

/// Luma of an RGB frame [3,H,W] -> [H,W].
Tensor to_grayscale(const Tensor& rgb);

struct WarpCompensation {
  FlowField flow;               // residual (warp) flow
  std::array<double, 6> model;  // u = m0 + m1 x + m2 y, v = m3 + m4 x + m5 y
  bool degenerate = false;      // normal equations rank-deficient; flow returned unchanged
};

/// Removes global camera motion: least-squares affine fit, one robust refit
/// on pixels whose residual is within 2x the median residual, subtraction.
WarpCompensation warp_compensate(const FlowField& flow);

inline constexpr double kFlowClamp = 20.0;
inline constexpr std::size_t kStackDepth = 5;

/// Stacks the `depth` flows centred on `center` (flow k maps frame k to k+1;
/// flows center - depth/2 ... are used) as [2*depth,H,W] with channels
/// u1,v1,u2,v2,...; values clamped to +-20 px and scaled to [-1,1]. Indices
/// outside the available flows repeat the boundary flow.
Tensor build_flow_stack(std::span<const FlowField> flows, std::size_t center,
                        std::size_t depth = kStackDepth);

/// Computes the needed TV-L1 flows from RGB frames, then stacks them.
Tensor build_flow_stack_from_frames(std::span<const Tensor> frames, std::size_t center,
                                    std::size_t depth = kStackDepth, const TvL1Params& params = {},
                                    bool warp = false);

/// `count` stack centres uniformly spread over the valid range.
std::vector<std::size_t> stack_centers(std::size_t num_flows, std::size_t count,
                                       std::size_t depth = kStackDepth);

/// Every consecutive-pair flow of a clip, optionally warp-compensated.
std::vector<FlowField> clip_flows(const VideoClip& clip, const TvL1Params& params, bool warp);

/// First-layer kernel for a 2S-channel flow input: per output channel, the
/// mean over the RGB input channels replicated target_in_channels times.
Tensor cross_modality_init(const Tensor& rgb_first_layer, std::size_t target_in_channels);

/// Flow cache file: int32 H, int32 W, then H*W float32 u values and H*W
/// float32 v values, all little-endian.
void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

/// On-disk cache keyed by (clip id, pair index, raw|warp).
class FlowCache {
 public:
  explicit FlowCache(std::filesystem::path dir);
  std::filesystem::path path_for(const std::string& clip_id, std::size_t index, bool warp) const;
  std::vector<FlowField> load_or_compute(const VideoClip& clip, const TvL1Params& params, bool warp);

 private:
  std::filesystem::path dir_;
};

}  // namespace egoattn
