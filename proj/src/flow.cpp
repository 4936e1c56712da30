#include "egoattn/flow.h"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "egoattn/data.h"
#include "egoattn/errors.h"

namespace egoattn {

namespace fs = std::filesystem;

namespace {

struct Image {
  std::size_t w = 0, h = 0;
  std::vector<double> px;

  Image() = default;
  Image(std::size_t w_, std::size_t h_, double fill = 0.0) : w(w_), h(h_), px(w_ * h_, fill) {}
  double& at(std::size_t x, std::size_t y) { return px[y * w + x]; }
  double at(std::size_t x, std::size_t y) const { return px[y * w + x]; }
};

Image from_tensor(const Tensor& t) {
  Image im(t.dim(1), t.dim(0));
  std::copy(t.data().begin(), t.data().end(), im.px.begin());
  return im;
}

Tensor to_tensor(const Image& im) { return Tensor({im.h, im.w}, im.px); }

double sample_bilinear(const Image& im, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(im.w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(im.h - 1));
  const std::size_t x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, im.w - 1), y1 = std::min(y0 + 1, im.h - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  return (1 - fy) * ((1 - fx) * im.at(x0, y0) + fx * im.at(x1, y0)) +
         fy * ((1 - fx) * im.at(x0, y1) + fx * im.at(x1, y1));
}

Image gaussian_smooth(const Image& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return static_cast<std::size_t>(i);
  };
  Image tmp(in.w, in.h), out(in.w, in.h);
  for (std::size_t y = 0; y < in.h; ++y) {
    for (std::size_t x = 0; x < in.w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * in.at(reflect(static_cast<long>(x) + i, in.w), y);
      tmp.at(x, y) = s;
    }
  }
  for (std::size_t y = 0; y < in.h; ++y) {
    for (std::size_t x = 0; x < in.w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(x, reflect(static_cast<long>(y) + i, in.h));
      out.at(x, y) = s;
    }
  }
  return out;
}

Image resize(const Image& in, std::size_t w, std::size_t h) {
  Image out(w, h);
  const double sx = static_cast<double>(in.w) / static_cast<double>(w);
  const double sy = static_cast<double>(in.h) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      out.at(x, y) = sample_bilinear(in, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
    }
  }
  return out;
}

Image zoom_out(const Image& in, double zoom, std::size_t w, std::size_t h) {
  const double sigma = 0.6 * std::sqrt(1.0 / (zoom * zoom) - 1.0);
  return resize(gaussian_smooth(in, sigma), w, h);
}

void centered_gradient(const Image& im, Image& gx, Image& gy) {
  gx = Image(im.w, im.h);
  gy = Image(im.w, im.h);
  for (std::size_t y = 0; y < im.h; ++y) {
    for (std::size_t x = 0; x < im.w; ++x) {
      const std::size_t xm = x > 0 ? x - 1 : x, xp = x + 1 < im.w ? x + 1 : x;
      const std::size_t ym = y > 0 ? y - 1 : y, yp = y + 1 < im.h ? y + 1 : y;
      gx.at(x, y) = (im.at(xp, y) - im.at(xm, y)) / static_cast<double>(xp - xm == 0 ? 1 : xp - xm);
      gy.at(x, y) = (im.at(x, yp) - im.at(x, ym)) / static_cast<double>(yp - ym == 0 ? 1 : yp - ym);
    }
  }
}

void forward_gradient(const Image& f, Image& fx, Image& fy) {
  for (std::size_t y = 0; y < f.h; ++y) {
    for (std::size_t x = 0; x < f.w; ++x) {
      fx.at(x, y) = x + 1 < f.w ? f.at(x + 1, y) - f.at(x, y) : 0.0;
      fy.at(x, y) = y + 1 < f.h ? f.at(x, y + 1) - f.at(x, y) : 0.0;
    }
  }
}

// Adjoint of forward_gradient (negated).
void divergence(const Image& p1, const Image& p2, Image& div) {
  for (std::size_t y = 0; y < p1.h; ++y) {
    for (std::size_t x = 0; x < p1.w; ++x) {
      double d1, d2;
      if (x == 0) d1 = p1.at(x, y);
      else if (x + 1 == p1.w) d1 = -p1.at(x - 1, y);
      else d1 = p1.at(x, y) - p1.at(x - 1, y);
      if (y == 0) d2 = p2.at(x, y);
      else if (y + 1 == p1.h) d2 = -p2.at(x, y - 1);
      else d2 = p2.at(x, y) - p2.at(x, y - 1);
      div.at(x, y) = d1 + d2;
    }
  }
}

void tvl1_single_scale(const Image& i0, const Image& i1, const Image& i1x, const Image& i1y,
                       Image& u1, Image& u2, const TvL1Params& prm) {
  const std::size_t w = i0.w, h = i0.h, n = w * h;
  const double l_t = prm.lambda * prm.theta;
  const double taut = prm.tau / prm.theta;
  Image i1w(w, h), i1wx(w, h), i1wy(w, h), grad(w, h), rho_c(w, h);
  Image v1(w, h), v2(w, h), p11(w, h), p12(w, h), p21(w, h), p22(w, h);
  Image div1(w, h), div2(w, h), u1x(w, h), u1y(w, h), u2x(w, h), u2y(w, h);
  for (std::size_t warp = 0; warp < prm.warps; ++warp) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double sx = x + u1.at(x, y), sy = y + u2.at(x, y);
        i1w.at(x, y) = sample_bilinear(i1, sx, sy);
        i1wx.at(x, y) = sample_bilinear(i1x, sx, sy);
        i1wy.at(x, y) = sample_bilinear(i1y, sx, sy);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      grad.px[i] = i1wx.px[i] * i1wx.px[i] + i1wy.px[i] * i1wy.px[i];
      rho_c.px[i] = i1w.px[i] - i1wx.px[i] * u1.px[i] - i1wy.px[i] * u2.px[i] - i0.px[i];
    }
    double error = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < prm.iterations && error > prm.epsilon * prm.epsilon; ++it) {
      for (std::size_t i = 0; i < n; ++i) {
        const double rho = rho_c.px[i] + i1wx.px[i] * u1.px[i] + i1wy.px[i] * u2.px[i];
        double d1 = 0.0, d2 = 0.0;
        if (rho < -l_t * grad.px[i]) {
          d1 = l_t * i1wx.px[i];
          d2 = l_t * i1wy.px[i];
        } else if (rho > l_t * grad.px[i]) {
          d1 = -l_t * i1wx.px[i];
          d2 = -l_t * i1wy.px[i];
        } else if (grad.px[i] > 1e-10) {
          const double fi = -rho / grad.px[i];
          d1 = fi * i1wx.px[i];
          d2 = fi * i1wy.px[i];
        }
        v1.px[i] = u1.px[i] + d1;
        v2.px[i] = u2.px[i] + d2;
      }
      divergence(p11, p12, div1);
      divergence(p21, p22, div2);
      error = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double a = v1.px[i] + prm.theta * div1.px[i];
        const double b = v2.px[i] + prm.theta * div2.px[i];
        error += (a - u1.px[i]) * (a - u1.px[i]) + (b - u2.px[i]) * (b - u2.px[i]);
        u1.px[i] = a;
        u2.px[i] = b;
      }
      error /= static_cast<double>(n);
      forward_gradient(u1, u1x, u1y);
      forward_gradient(u2, u2x, u2y);
      for (std::size_t i = 0; i < n; ++i) {
        const double g1 = 1.0 + taut * std::hypot(u1x.px[i], u1y.px[i]);
        const double g2 = 1.0 + taut * std::hypot(u2x.px[i], u2y.px[i]);
        p11.px[i] = (p11.px[i] + taut * u1x.px[i]) / g1;
        p12.px[i] = (p12.px[i] + taut * u1y.px[i]) / g1;
        p21.px[i] = (p21.px[i] + taut * u2x.px[i]) / g2;
        p22.px[i] = (p22.px[i] + taut * u2y.px[i]) / g2;
      }
    }
  }
}

}  // namespace

FlowField tvl1_flow(const Tensor& a, const Tensor& b, const TvL1Params& prm) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw std::invalid_argument("tvl1_flow needs two [H,W] images of equal shape, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t h = a.dim(0), w = a.dim(1);
  if (h < prm.min_size || w < prm.min_size) {
    throw std::invalid_argument("tvl1_flow: images of " + std::to_string(h) + "x" +
                                std::to_string(w) + " are below the pyramid minimum of " +
                                std::to_string(prm.min_size) + " px");
  }
  // Joint rescale of both images to [0,255].
  const auto [mn0, mx0] = std::minmax_element(a.data().begin(), a.data().end());
  const auto [mn1, mx1] = std::minmax_element(b.data().begin(), b.data().end());
  const double lo = std::min(*mn0, *mn1), hi = std::max(*mx0, *mx1);
  const double gain = hi > lo ? 255.0 / (hi - lo) : 1.0;
  Image i0 = from_tensor(a), i1 = from_tensor(b);
  for (auto& v : i0.px) v = (v - lo) * gain;
  for (auto& v : i1.px) v = (v - lo) * gain;

  std::vector<Image> pyr0{gaussian_smooth(i0, 0.8)}, pyr1{gaussian_smooth(i1, 0.8)};
  for (std::size_t s = 1; s < std::max<std::size_t>(prm.scales, 1); ++s) {
    const std::size_t nw = static_cast<std::size_t>(std::floor(pyr0.back().w * prm.zoom + 0.5));
    const std::size_t nh = static_cast<std::size_t>(std::floor(pyr0.back().h * prm.zoom + 0.5));
    if (nw < prm.min_size || nh < prm.min_size) break;
    pyr0.push_back(zoom_out(pyr0.back(), prm.zoom, nw, nh));
    pyr1.push_back(zoom_out(pyr1.back(), prm.zoom, nw, nh));
  }

  Image u1(pyr0.back().w, pyr0.back().h), u2(pyr0.back().w, pyr0.back().h);
  for (std::size_t s = pyr0.size(); s-- > 0;) {
    const Image& j0 = pyr0[s];
    const Image& j1 = pyr1[s];
    if (u1.w != j0.w || u1.h != j0.h) {
      const double fx = static_cast<double>(j0.w) / static_cast<double>(u1.w);
      const double fy = static_cast<double>(j0.h) / static_cast<double>(u1.h);
      u1 = resize(u1, j0.w, j0.h);
      u2 = resize(u2, j0.w, j0.h);
      for (auto& v : u1.px) v *= fx;
      for (auto& v : u2.px) v *= fy;
    }
    Image gx, gy;
    centered_gradient(j1, gx, gy);
    tvl1_single_scale(j0, j1, gx, gy, u1, u2, prm);
  }
  return {to_tensor(u1), to_tensor(u2)};
}

Tensor to_grayscale(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw DimensionError("to_grayscale expects [3,H,W], got " + shape_str(rgb.shape()));
  }
  const std::size_t plane = rgb.dim(1) * rgb.dim(2);
  Tensor out({rgb.dim(1), rgb.dim(2)});
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = 0.299 * rgb[i] + 0.587 * rgb[plane + i] + 0.114 * rgb[2 * plane + i];
  }
  return out;
}

namespace {

// Weighted affine least squares; returns false when the 3x3 design is rank deficient.
bool fit_affine(const FlowField& f, const std::vector<char>& keep, std::array<double, 6>& model) {
  const std::size_t h = f.u.dim(0), w = f.u.dim(1);
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atu = Eigen::Vector3d::Zero(), atv = Eigen::Vector3d::Zero();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      if (!keep[i]) continue;
      const Eigen::Vector3d row(1.0, static_cast<double>(x), static_cast<double>(y));
      ata += row * row.transpose();
      atu += row * f.u[i];
      atv += row * f.v[i];
    }
  }
  Eigen::FullPivLU<Eigen::Matrix3d> lu(ata);
  lu.setThreshold(1e-10);
  if (lu.rank() < 3) return false;
  const Eigen::Vector3d mu = lu.solve(atu), mv = lu.solve(atv);
  model = {mu[0], mu[1], mu[2], mv[0], mv[1], mv[2]};
  return true;
}

}  // namespace

WarpCompensation warp_compensate(const FlowField& flow) {
  if (flow.u.rank() != 2 || flow.u.shape() != flow.v.shape()) {
    throw DimensionError("warp_compensate needs u and v of equal [H,W] shape");
  }
  const std::size_t h = flow.u.dim(0), w = flow.u.dim(1), n = h * w;
  WarpCompensation out;
  out.flow = {flow.u.clone(), flow.v.clone()};
  out.model = {};
  std::vector<char> keep(n, 1);
  std::array<double, 6> model{};
  if (!fit_affine(flow, keep, model)) {
    out.degenerate = true;
    return out;
  }
  std::vector<double> resid(n);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const double du = flow.u[i] - (model[0] + model[1] * x + model[2] * y);
      const double dv = flow.v[i] - (model[3] + model[4] * x + model[5] * y);
      resid[i] = std::hypot(du, dv);
    }
  }
  std::vector<double> sorted = resid;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n / 2), sorted.end());
  const double cutoff = 2.0 * sorted[n / 2];
  for (std::size_t i = 0; i < n; ++i) keep[i] = resid[i] <= cutoff;
  std::array<double, 6> refined{};
  if (fit_affine(flow, keep, refined)) model = refined;
  out.model = model;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      out.flow.u[i] -= model[0] + model[1] * x + model[2] * y;
      out.flow.v[i] -= model[3] + model[4] * x + model[5] * y;
    }
  }
  return out;
}

Tensor build_flow_stack(std::span<const FlowField> flows, std::size_t center, std::size_t depth) {
  if (flows.empty()) throw std::invalid_argument("build_flow_stack: no flow fields");
  if (depth == 0) throw std::invalid_argument("build_flow_stack: depth must be positive");
  const std::size_t h = flows[0].u.dim(0), w = flows[0].u.dim(1), plane = h * w;
  Tensor stack({2 * depth, h, w});
  const long start = static_cast<long>(center) - static_cast<long>(depth / 2);
  for (std::size_t j = 0; j < depth; ++j) {
    const long k = std::clamp(start + static_cast<long>(j), 0L, static_cast<long>(flows.size()) - 1);
    const FlowField& f = flows[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < plane; ++i) {
      stack[(2 * j) * plane + i] = std::clamp(f.u[i], -kFlowClamp, kFlowClamp) / kFlowClamp;
      stack[(2 * j + 1) * plane + i] = std::clamp(f.v[i], -kFlowClamp, kFlowClamp) / kFlowClamp;
    }
  }
  return stack;
}

Tensor build_flow_stack_from_frames(std::span<const Tensor> frames, std::size_t center,
                                    std::size_t depth, const TvL1Params& params, bool warp) {
  if (frames.size() < 2) throw std::invalid_argument("build_flow_stack: need at least two frames");
  const std::size_t num_flows = frames.size() - 1;
  const long start = static_cast<long>(center) - static_cast<long>(depth / 2);
  std::vector<FlowField> flows(num_flows);
  std::vector<char> done(num_flows, 0);
  for (std::size_t j = 0; j < depth; ++j) {
    const auto k = static_cast<std::size_t>(
        std::clamp(start + static_cast<long>(j), 0L, static_cast<long>(num_flows) - 1));
    if (done[k]) continue;
    flows[k] = tvl1_flow(to_grayscale(frames[k]), to_grayscale(frames[k + 1]), params);
    if (warp) flows[k] = warp_compensate(flows[k]).flow;
    done[k] = 1;
  }
  // Fill untouched slots so build_flow_stack sees valid shapes; they are never read.
  for (std::size_t k = 0; k < num_flows; ++k) {
    if (!done[k]) flows[k] = flows[static_cast<std::size_t>(std::clamp(start, 0L, static_cast<long>(num_flows) - 1))];
  }
  return build_flow_stack(flows, center, depth);
}

std::vector<std::size_t> stack_centers(std::size_t num_flows, std::size_t count, std::size_t depth) {
  const std::size_t lo = depth / 2;
  const std::size_t span = num_flows >= depth ? num_flows - depth + 1 : 1;
  std::vector<std::size_t> out(count);
  for (std::size_t j = 0; j < count; ++j) out[j] = lo + j * span / count;
  return out;
}

std::vector<FlowField> clip_flows(const VideoClip& clip, const TvL1Params& params, bool warp) {
  std::vector<FlowField> flows;
  for (std::size_t k = 0; k + 1 < clip.frames.size(); ++k) {
    FlowField f = tvl1_flow(to_grayscale(clip.frames[k]), to_grayscale(clip.frames[k + 1]), params);
    if (warp) f = warp_compensate(f).flow;
    flows.push_back(std::move(f));
  }
  return flows;
}

Tensor cross_modality_init(const Tensor& rgb_first_layer, std::size_t target_in_channels) {
  if (rgb_first_layer.rank() != 4) {
    throw DimensionError("cross_modality_init expects [C,Cin,k,k], got " +
                         shape_str(rgb_first_layer.shape()));
  }
  if (target_in_channels == 0) throw std::invalid_argument("target input channels must be >= 1");
  const std::size_t c = rgb_first_layer.dim(0), cin = rgb_first_layer.dim(1);
  const std::size_t taps = rgb_first_layer.dim(2) * rgb_first_layer.dim(3);
  Tensor out({c, target_in_channels, rgb_first_layer.dim(2), rgb_first_layer.dim(3)});
  for (std::size_t o = 0; o < c; ++o) {
    for (std::size_t t = 0; t < taps; ++t) {
      double m = 0.0;
      for (std::size_t i = 0; i < cin; ++i) m += rgb_first_layer[(o * cin + i) * taps + t];
      m /= static_cast<double>(cin);
      for (std::size_t i = 0; i < target_in_channels; ++i) out[(o * target_in_channels + i) * taps + t] = m;
    }
  }
  return out;
}

namespace {

template <class T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& is, const fs::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("truncated flow file: " + path.string());
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void write_flow(const fs::path& path, const FlowField& flow) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write flow file: " + path.string());
  put_le<std::int32_t>(os, static_cast<std::int32_t>(flow.u.dim(0)));
  put_le<std::int32_t>(os, static_cast<std::int32_t>(flow.u.dim(1)));
  for (double v : flow.u.data()) put_le<float>(os, static_cast<float>(v));
  for (double v : flow.v.data()) put_le<float>(os, static_cast<float>(v));
  if (!os) throw IoError("failed writing flow file: " + path.string());
}

FlowField read_flow(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open flow file: " + path.string());
  const auto h = get_le<std::int32_t>(is, path), w = get_le<std::int32_t>(is, path);
  if (h <= 0 || w <= 0 || h > 65536 || w > 65536) throw IoError("corrupt flow header: " + path.string());
  const std::size_t hh = static_cast<std::size_t>(h), ww = static_cast<std::size_t>(w);
  FlowField f{Tensor({hh, ww}), Tensor({hh, ww})};
  for (auto& v : f.u.data()) v = get_le<float>(is, path);
  for (auto& v : f.v.data()) v = get_le<float>(is, path);
  return f;
}

FlowCache::FlowCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path FlowCache::path_for(const std::string& clip_id, std::size_t index, bool warp) const {
  char name[64];
  std::snprintf(name, sizeof name, "_%04zu_%s.flo", index, warp ? "warp" : "raw");
  return dir_ / (clip_id + name);
}

std::vector<FlowField> FlowCache::load_or_compute(const VideoClip& clip, const TvL1Params& params,
                                                  bool warp) {
  std::vector<FlowField> flows;
  const std::size_t n = clip.frames.empty() ? 0 : clip.frames.size() - 1;
  bool complete = true;
  for (std::size_t k = 0; k < n && complete; ++k) complete = fs::exists(path_for(clip.clip_id, k, warp));
  if (complete) {
    for (std::size_t k = 0; k < n; ++k) flows.push_back(read_flow(path_for(clip.clip_id, k, warp)));
    return flows;
  }
  flows = clip_flows(clip, params, warp);
  // Round through float so a cache hit and a miss give identical fields.
  for (std::size_t k = 0; k < n; ++k) {
    write_flow(path_for(clip.clip_id, k, warp), flows[k]);
    for (Tensor* t : {&flows[k].u, &flows[k].v})
      for (std::size_t i = 0; i < t->numel(); ++i) (*t)[i] = static_cast<float>((*t)[i]);
  }
  return flows;
}

}  // namespace egoattn
