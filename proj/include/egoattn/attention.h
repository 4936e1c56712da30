#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "egoattn/backbone.h"
#include "egoattn/tensor.h"

namespace egoattn {

struct AttentionMap {
  Tensor raw;   // class activation map of the selected class, [H,W]
  Tensor prob;  // spatial softmax of raw, [H,W]
  std::size_t class_used = 0;
};

/// Class activation map: cam(i) = sum_l head_w[c,l] * f(l,i).
/// Throws IndexError if c is not a row of head_w.
Tensor compute_cam(const Tensor& f, const Tensor& head_w, std::size_t c);

/// Weights every channel of f[L,H,W] by spatial_softmax(cam).
Tensor apply_spatial_attention(const Tensor& f, const Tensor& cam);

struct AttendedFeature {
  Tensor features;  // f_SA, or f unchanged when attention is disabled
  Tensor backbone_features;
  Tensor backbone_logits;
  AttentionMap map;
};

/// backbone -> winning class -> CAM -> spatial attention for one frame.
/// The class selection is a hard argmax; gradients flow through the CAM
/// values of the chosen class only. With attention disabled the features
/// pass through untouched and the map is uniform.
AttendedFeature attended_frame_feature(const BackboneNet& net, const Tensor& frame,
                                       bool attention_enabled = true);

/// Min-max normalized CAM upsampled (nearest neighbour) to size x size bytes.
std::vector<std::uint8_t> attention_to_gray(const Tensor& cam, std::size_t size);

/// Binary P5 PGM of attention_to_gray(cam, size).
void write_attention_pgm(const std::filesystem::path& path, const Tensor& cam, std::size_t size);

/// Axis-aligned box in frame pixel coordinates, [x0,x1) x [y0,y1).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const;
};

/// Per-cell fraction of each attention cell covered by `box`, for a map of
/// shape [H,W] laid over a frame of frame_size x frame_size pixels.
std::vector<double> box_cell_coverage(const Box& box, std::size_t map_h, std::size_t map_w,
                                      double frame_size);

/// Attention mass inside the box: sum_i prob(i) * coverage(i).
double attention_mass_in_box(const Tensor& prob, const Box& box, double frame_size);

/// Mass a uniform map would place in the box (box area in cells / H*W).
double uniform_mass_in_box(const Box& box, std::size_t map_h, std::size_t map_w, double frame_size);

}  // namespace egoattn
