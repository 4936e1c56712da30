#include "egoattn/attention.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "egoattn/errors.h"
#include "egoattn/ops.h"

namespace egoattn {

Tensor compute_cam(const Tensor& f, const Tensor& head_w, std::size_t c) {
  return channel_weighted_sum(f, head_w, c);
}

Tensor apply_spatial_attention(const Tensor& f, const Tensor& cam) {
  if (f.rank() != 3 || cam.rank() != 2) {
    throw DimensionError("apply_spatial_attention expects f[L,H,W] and cam[H,W], got " +
                         shape_str(f.shape()) + " and " + shape_str(cam.shape()));
  }
  return broadcast_spatial_mul(f, spatial_softmax(cam));
}

AttendedFeature attended_frame_feature(const BackboneNet& net, const Tensor& frame,
                                       bool attention_enabled) {
  auto out = net.forward(frame);
  AttendedFeature r;
  r.backbone_features = out.features;
  r.backbone_logits = out.logits;
  r.map.class_used = winning_class(out.logits);
  const std::size_t h = out.features.dim(1), w = out.features.dim(2);
  if (!attention_enabled) {
    r.features = out.features;
    r.map.raw = Tensor({h, w}, 0.0);
    r.map.prob = Tensor({h, w}, 1.0 / static_cast<double>(h * w));
    return r;
  }
  r.map.raw = compute_cam(out.features, net.head_weight(), r.map.class_used);
  r.map.prob = spatial_softmax(r.map.raw);
  r.features = broadcast_spatial_mul(out.features, r.map.prob);
  return r;
}

std::vector<std::uint8_t> attention_to_gray(const Tensor& cam, std::size_t size) {
  if (cam.rank() != 2) throw DimensionError("attention map must be [H,W], got " + shape_str(cam.shape()));
  const std::size_t h = cam.dim(0), w = cam.dim(1);
  const auto [lo_it, hi_it] = std::minmax_element(cam.data().begin(), cam.data().end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  std::vector<std::uint8_t> cells(h * w, 0);
  for (std::size_t i = 0; i < h * w; ++i) {
    cells[i] = range > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * (cam[i] - lo) / range)) : 0;
  }
  std::vector<std::uint8_t> out(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) out[y * size + x] = cells[(y * h / size) * w + x * w / size];
  }
  return out;
}

void write_attention_pgm(const std::filesystem::path& path, const Tensor& cam, std::size_t size) {
  const auto bytes = attention_to_gray(cam, size);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write attention map: " + path.string());
  os << "P5\n" << size << ' ' << size << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing attention map: " + path.string());
}

double Box::area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }

std::vector<double> box_cell_coverage(const Box& box, std::size_t map_h, std::size_t map_w,
                                      double frame_size) {
  std::vector<double> cov(map_h * map_w, 0.0);
  const double ch = frame_size / static_cast<double>(map_h);
  const double cw = frame_size / static_cast<double>(map_w);
  for (std::size_t r = 0; r < map_h; ++r) {
    const double oy = std::min(box.y1, (r + 1) * ch) - std::max(box.y0, r * ch);
    if (oy <= 0) continue;
    for (std::size_t c = 0; c < map_w; ++c) {
      const double ox = std::min(box.x1, (c + 1) * cw) - std::max(box.x0, c * cw);
      if (ox <= 0) continue;
      cov[r * map_w + c] = (ox * oy) / (ch * cw);
    }
  }
  return cov;
}

double attention_mass_in_box(const Tensor& prob, const Box& box, double frame_size) {
  const auto cov = box_cell_coverage(box, prob.dim(0), prob.dim(1), frame_size);
  double m = 0.0;
  for (std::size_t i = 0; i < cov.size(); ++i) m += prob[i] * cov[i];
  return m;
}

double uniform_mass_in_box(const Box& box, std::size_t map_h, std::size_t map_w, double frame_size) {
  const auto cov = box_cell_coverage(box, map_h, map_w, frame_size);
  double m = 0.0;
  for (double c : cov) m += c;
  return m / static_cast<double>(map_h * map_w);
}

}  // namespace egoattn
