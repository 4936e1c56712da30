#pragma once

// Naive loop implementations used as independent references in the tests.

#include <cmath>
#include <cstddef>

#include "egoattn/tensor.h"

namespace oracle {

using egoattn::Tensor;

inline Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out({cout, oh, ow});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = b.defined() ? b[o] : 0.0;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
              const long ix = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              acc += x[(c * h + iy) * w + ix] * k[((o * cin + c) * kh + i) * kw + j];
            }
        out[(o * oh + y) * ow + xx] = acc;
      }
  return out;
}

inline Tensor gap(const Tensor& x) {
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x[ch * plane + i];
    out[ch] = s / static_cast<double>(plane);
  }
  return out;
}

inline Tensor cam(const Tensor& f, const Tensor& w, std::size_t c) {
  const std::size_t l = f.dim(0), plane = f.dim(1) * f.dim(2);
  Tensor out({f.dim(1), f.dim(2)});
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < l; ++ch) s += w[c * l + ch] * f[ch * plane + i];
    out[i] = s;
  }
  return out;
}

inline Tensor softmax(const Tensor& m) {
  Tensor out(m.shape());
  double mx = m[0];
  for (std::size_t i = 0; i < m.numel(); ++i) mx = std::max(mx, m[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < m.numel(); ++i) z += std::exp(m[i] - mx);
  for (std::size_t i = 0; i < m.numel(); ++i) out[i] = std::exp(m[i] - mx) / z;
  return out;
}

inline Tensor attend(const Tensor& f, const Tensor& camv) {
  const Tensor a = softmax(camv);
  const std::size_t plane = a.numel();
  Tensor out(f.shape());
  for (std::size_t ch = 0; ch < f.dim(0); ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = f[ch * plane + i] * a[i];
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace oracle
