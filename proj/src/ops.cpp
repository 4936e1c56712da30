#include "egoattn/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "egoattn/errors.h"
#include "egoattn/rng.h"

namespace egoattn {

namespace debug {
namespace {
Fault g_fault = Fault::kNone;
}
void set_fault(Fault fault) { g_fault = fault; }
Fault active_fault() { return g_fault; }
}  // namespace debug

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ImplPtr = std::shared_ptr<TensorImpl>;

std::vector<double>& grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

void record(Tape::Adjoint fn) { active_tape()->record(std::move(fn)); }

Tensor make_output(Shape shape, bool tracked) {
  Tensor out(std::move(shape));
  if (tracked) out.set_requires_grad(true);
  return out;
}

void debug_check_finite([[maybe_unused]] const Tensor& out,
                        [[maybe_unused]] std::initializer_list<const Tensor*> inputs,
                        [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  auto finite = [](const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(),
                       [](double v) { return std::isfinite(v); });
  };
  for (const Tensor* in : inputs) {
    if (in && in->defined() && !finite(*in)) return;
  }
  if (!finite(out)) throw std::logic_error(std::string(op) + " produced a non-finite value");
#endif
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return;
  std::size_t axis = 0;
  while (axis < std::min(a.rank(), b.rank()) && a.shape()[axis] == b.shape()[axis]) ++axis;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " differ at axis " + std::to_string(axis));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got shape " + shape_str(t.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const bool tracked = should_record({&x});
  Tensor out = make_output(x.shape(), tracked);
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  debug_check_finite(out, {&x}, name);
  if (tracked) {
    ImplPtr xi = x.impl(), oi = out.impl();
    record([xi, oi, deriv] {
      if (oi->grad.empty()) return;
      auto& g = grad_buffer(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * deriv(xi->data[i], oi->data[i]);
    });
  }
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 3, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: axis 1 of kernel " + shape_str(kernel.shape()) +
                         " must equal input channels (axis 0 of input " + shape_str(x.shape()) +
                         ")");
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw DimensionError("conv2d: kernel spatial axes 2,3 must be odd, got " +
                         shape_str(kernel.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " larger than padded input " + shape_str(x.shape()) + " along axis " +
                         (h + 2 * padding < kh ? "1" : "2"));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("conv2d: bias axis 0 must have " + std::to_string(cout) +
                         " entries, got shape " + shape_str(bias.shape()));
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t rows = cin * kh * kw, plane = ho * wo;

  auto cols = std::make_shared<std::vector<double>>(rows * plane, 0.0);
  const double* xd = x.data().data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        double* row = cols->data() + ((c * kh + ky) * kw + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            row[oy * wo + ox] = xd[(c * h + iy) * w + ix];
          }
        }
      }
    }
  }

  const bool tracked = should_record({&x, &kernel, &bias});
  Tensor out = make_output({cout, ho, wo}, tracked);
  Eigen::Map<const RowMat> k_mat(kernel.data().data(), cout, rows);
  Eigen::Map<const RowMat> c_mat(cols->data(), rows, plane);
  Eigen::Map<RowMat> o_mat(out.data().data(), cout, plane);
  o_mat.noalias() = k_mat * c_mat;
  if (bias.defined()) {
    for (std::size_t o = 0; o < cout; ++o) o_mat.row(o).array() += bias[o];
  }
  debug_check_finite(out, {&x, &kernel, &bias}, "conv2d");

  if (tracked) {
    ImplPtr xi = x.impl(), ki = kernel.impl(), oi = out.impl();
    ImplPtr bi = bias.defined() ? bias.impl() : nullptr;
    record([=] {
      if (oi->grad.empty()) return;
      const double sign = debug::active_fault() == debug::Fault::kConvBackwardSignFlip ? -1.0 : 1.0;
      Eigen::Map<const RowMat> g_out(oi->grad.data(), cout, plane);
      Eigen::Map<const RowMat> cm(cols->data(), rows, plane);
      if (ki->requires_grad) {
        Eigen::Map<RowMat> gk(grad_buffer(*ki).data(), cout, rows);
        gk.noalias() += sign * (g_out * cm.transpose());
      }
      if (bi && bi->requires_grad) {
        auto& gb = grad_buffer(*bi);
        for (std::size_t o = 0; o < cout; ++o) gb[o] += sign * g_out.row(o).sum();
      }
      if (xi->requires_grad) {
        Eigen::Map<const RowMat> km(ki->data.data(), cout, rows);
        RowMat g_cols = sign * (km.transpose() * g_out);
        auto& gx = grad_buffer(*xi);
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const double* row = g_cols.data() + ((c * kh + ky) * kw + kx) * plane;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                            static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  gx[(c * h + iy) * w + ix] += row[oy * wo + ox];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool tracked = should_record({&a, &b});
  Tensor out = make_output(a.shape(), tracked);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  debug_check_finite(out, {&a, &b}, "add");
  if (tracked) {
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) accumulate_grad(*ai, oi->grad);
      if (bi->requires_grad) accumulate_grad(*bi, oi->grad);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool tracked = should_record({&a, &b});
  Tensor out = make_output(a.shape(), tracked);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  debug_check_finite(out, {&a, &b}, "sub");
  if (tracked) {
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) accumulate_grad(*ai, oi->grad);
      if (bi->requires_grad) {
        auto& g = grad_buffer(*bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  const bool tracked = should_record({&a, &b});
  Tensor out = make_output(a.shape(), tracked);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  debug_check_finite(out, {&a, &b}, "hadamard");
  if (tracked) {
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      const auto& go = oi->grad;
      if (ai->requires_grad) {
        auto& g = grad_buffer(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& g = grad_buffer(*bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Tensor add_n(std::span<const Tensor> xs) {
  if (xs.empty()) throw DimensionError("add_n: empty operand list");
  bool tracked = false;
  for (const auto& x : xs) {
    require_same_shape(xs[0], x, "add_n");
    tracked = tracked || should_record({&x});
  }
  Tensor out = make_output(xs[0].shape(), tracked);
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += x[i];
  }
  if (tracked) {
    std::vector<ImplPtr> ins;
    for (const auto& x : xs) ins.push_back(x.impl());
    ImplPtr oi = out.impl();
    record([ins, oi] {
      if (oi->grad.empty()) return;
      for (const auto& in : ins) {
        if (in->requires_grad) accumulate_grad(*in, oi->grad);
      }
    });
  }
  return out;
}

Tensor mean_of(std::span<const Tensor> xs) {
  return scale(add_n(xs), 1.0 / static_cast<double>(xs.size()));
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor spatial_softmax(const Tensor& m) {
  require_rank(m, 2, "spatial_softmax", "map");
  const bool tracked = should_record({&m});
  Tensor out = make_output(m.shape(), tracked);
  const double peak = *std::max_element(m.data().begin(), m.data().end());
  double total = 0.0;
  for (std::size_t i = 0; i < m.numel(); ++i) {
    out[i] = std::exp(m[i] - peak);
    total += out[i];
  }
  for (auto& v : out.data()) v /= total;
  debug_check_finite(out, {&m}, "spatial_softmax");
  if (tracked) {
    ImplPtr mi = m.impl(), oi = out.impl();
    record([mi, oi] {
      if (oi->grad.empty()) return;
      const auto& y = oi->data;
      const auto& gy = oi->grad;
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += gy[i] * y[i];
      auto& g = grad_buffer(*mi);
      for (std::size_t i = 0; i < y.size(); ++i) g[i] += y[i] * (gy[i] - dot);
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool", "input");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  if (plane == 0) throw DimensionError("global_avg_pool: empty spatial plane");
  const bool tracked = should_record({&x});
  Tensor out = make_output({c}, tracked);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x[ch * plane + i];
    out[ch] = s / static_cast<double>(plane);
  }
  if (tracked) {
    ImplPtr xi = x.impl(), oi = out.impl();
    record([xi, oi, c, plane] {
      if (oi->grad.empty()) return;
      auto& g = grad_buffer(*xi);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = oi->grad[ch] / static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) g[ch * plane + i] += v;
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 1, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  const std::size_t n = w.dim(0), k = w.dim(1);
  if (x.dim(0) != k) {
    throw DimensionError("linear: axis 1 of weight " + shape_str(w.shape()) +
                         " must equal input length " + std::to_string(x.dim(0)));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != n)) {
    throw DimensionError("linear: bias axis 0 must have " + std::to_string(n) +
                         " entries, got shape " + shape_str(b.shape()));
  }
  const bool tracked = should_record({&x, &w, &b});
  Tensor out = make_output({n}, tracked);
  Eigen::Map<const RowMat> wm(w.data().data(), n, k);
  Eigen::Map<const Eigen::VectorXd> xv(x.data().data(), k);
  Eigen::Map<Eigen::VectorXd> ov(out.data().data(), n);
  ov.noalias() = wm * xv;
  if (b.defined()) {
    for (std::size_t i = 0; i < n; ++i) out[i] += b[i];
  }
  debug_check_finite(out, {&x, &w, &b}, "linear");
  if (tracked) {
    ImplPtr xi = x.impl(), wi = w.impl(), oi = out.impl();
    ImplPtr bi = b.defined() ? b.impl() : nullptr;
    record([=] {
      if (oi->grad.empty()) return;
      Eigen::Map<const Eigen::VectorXd> go(oi->grad.data(), n);
      if (wi->requires_grad) {
        Eigen::Map<RowMat> gw(grad_buffer(*wi).data(), n, k);
        Eigen::Map<const Eigen::VectorXd> xv2(xi->data.data(), k);
        gw.noalias() += go * xv2.transpose();
      }
      if (bi && bi->requires_grad) accumulate_grad(*bi, oi->grad);
      if (xi->requires_grad) {
        Eigen::Map<const RowMat> wm2(wi->data.data(), n, k);
        Eigen::Map<Eigen::VectorXd> gx(grad_buffer(*xi).data(), k);
        gx.noalias() += wm2.transpose() * go;
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  const bool tracked = should_record({&x});
  Tensor out = make_output(x.shape(), tracked);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * (*mask)[i];
  if (tracked) {
    ImplPtr xi = x.impl(), oi = out.impl();
    record([xi, oi, mask] {
      if (oi->grad.empty()) return;
      auto& g = grad_buffer(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  require_rank(x, 1, "log_softmax", "input");
  const bool tracked = should_record({&x});
  Tensor out = make_output(x.shape(), tracked);
  const double peak = *std::max_element(x.data().begin(), x.data().end());
  double total = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) total += std::exp(x[i] - peak);
  const double lse = peak + std::log(total);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] - lse;
  debug_check_finite(out, {&x}, "log_softmax");
  if (tracked) {
    ImplPtr xi = x.impl(), oi = out.impl();
    record([xi, oi] {
      if (oi->grad.empty()) return;
      double gsum = 0.0;
      for (double g : oi->grad) gsum += g;
      auto& g = grad_buffer(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] - std::exp(oi->data[i]) * gsum;
    });
  }
  return out;
}

Tensor nll_loss(const Tensor& logp, std::size_t target) {
  require_rank(logp, 1, "nll_loss", "log-probabilities");
  if (target >= logp.dim(0)) {
    throw IndexError("nll_loss: target " + std::to_string(target) + " out of range for " +
                     std::to_string(logp.dim(0)) + " classes");
  }
  const bool tracked = should_record({&logp});
  Tensor out = make_output({1}, tracked);
  out[0] = -logp[target];
  if (tracked) {
    ImplPtr li = logp.impl(), oi = out.impl();
    record([li, oi, target] {
      if (oi->grad.empty()) return;
      grad_buffer(*li)[target] -= oi->grad[0];
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  return nll_loss(log_softmax(logits), target);
}

Tensor sum(const Tensor& x) {
  const bool tracked = should_record({&x});
  Tensor out = make_output({1}, tracked);
  for (double v : x.data()) out[0] += v;
  if (tracked) {
    ImplPtr xi = x.impl(), oi = out.impl();
    record([xi, oi] {
      if (oi->grad.empty()) return;
      auto& g = grad_buffer(*xi);
      for (auto& v : g) v += oi->grad[0];
    });
  }
  return out;
}

Tensor channel_weighted_sum(const Tensor& f, const Tensor& w, std::size_t row) {
  require_rank(f, 3, "channel_weighted_sum", "feature map");
  require_rank(w, 2, "channel_weighted_sum", "weights");
  const std::size_t l = f.dim(0), h = f.dim(1), wd = f.dim(2), plane = h * wd;
  if (w.dim(1) != l) {
    throw DimensionError("channel_weighted_sum: axis 1 of weights " + shape_str(w.shape()) +
                         " must equal feature channels (axis 0 of " + shape_str(f.shape()) + ")");
  }
  if (row >= w.dim(0)) {
    throw IndexError("class index " + std::to_string(row) + " out of range for " +
                     std::to_string(w.dim(0)) + " classes");
  }
  const bool tracked = should_record({&f, &w});
  Tensor out = make_output({h, wd}, tracked);
  const double* wr = w.data().data() + row * l;
  for (std::size_t c = 0; c < l; ++c) {
    const double* fc = f.data().data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) out[i] += wr[c] * fc[i];
  }
  debug_check_finite(out, {&f, &w}, "channel_weighted_sum");
  if (tracked) {
    ImplPtr fi = f.impl(), wi = w.impl(), oi = out.impl();
    record([=] {
      if (oi->grad.empty()) return;
      const auto& go = oi->grad;
      if (fi->requires_grad) {
        auto& gf = grad_buffer(*fi);
        for (std::size_t c = 0; c < l; ++c) {
          const double wc = wi->data[row * l + c];
          for (std::size_t i = 0; i < plane; ++i) gf[c * plane + i] += wc * go[i];
        }
      }
      if (wi->requires_grad) {
        auto& gw = grad_buffer(*wi);
        for (std::size_t c = 0; c < l; ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += fi->data[c * plane + i] * go[i];
          gw[row * l + c] += s;
        }
      }
    });
  }
  return out;
}

Tensor broadcast_spatial_mul(const Tensor& f, const Tensor& a) {
  require_rank(f, 3, "broadcast_spatial_mul", "feature map");
  require_rank(a, 2, "broadcast_spatial_mul", "weight map");
  if (f.dim(1) != a.dim(0) || f.dim(2) != a.dim(1)) {
    throw DimensionError("broadcast_spatial_mul: spatial axes of " + shape_str(f.shape()) +
                         " and " + shape_str(a.shape()) + " differ at axis " +
                         (f.dim(1) != a.dim(0) ? "1" : "2"));
  }
  const std::size_t l = f.dim(0), plane = a.numel();
  const bool tracked = should_record({&f, &a});
  Tensor out = make_output(f.shape(), tracked);
  for (std::size_t c = 0; c < l; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = f[c * plane + i] * a[i];
  }
  debug_check_finite(out, {&f, &a}, "broadcast_spatial_mul");
  if (tracked) {
    ImplPtr fi = f.impl(), ai = a.impl(), oi = out.impl();
    record([=] {
      if (oi->grad.empty()) return;
      const auto& go = oi->grad;
      if (fi->requires_grad) {
        auto& gf = grad_buffer(*fi);
        for (std::size_t c = 0; c < l; ++c) {
          for (std::size_t i = 0; i < plane; ++i) gf[c * plane + i] += go[c * plane + i] * ai->data[i];
        }
      }
      if (ai->requires_grad) {
        auto& ga = grad_buffer(*ai);
        for (std::size_t c = 0; c < l; ++c) {
          for (std::size_t i = 0; i < plane; ++i) ga[i] += go[c * plane + i] * fi->data[c * plane + i];
        }
      }
    });
  }
  return out;
}

Tensor slice_leading(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_leading: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for axis 0 of " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  const std::size_t inner = x.numel() / shape[0];
  shape[0] = end - begin;
  const bool tracked = should_record({&x});
  Tensor out = make_output(shape, tracked);
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(begin * inner), out.numel(),
              out.data().begin());
  if (tracked) {
    ImplPtr xi = x.impl(), oi = out.impl();
    const std::size_t offset = begin * inner;
    record([xi, oi, offset] {
      if (oi->grad.empty()) return;
      auto& g = grad_buffer(*xi);
      for (std::size_t i = 0; i < oi->grad.size(); ++i) g[offset + i] += oi->grad[i];
    });
  }
  return out;
}

Tensor concat_leading(std::span<const Tensor> xs) {
  if (xs.empty()) throw DimensionError("concat_leading: empty operand list");
  Shape shape = xs[0].shape();
  std::size_t lead = 0;
  bool tracked = false;
  for (const auto& x : xs) {
    if (x.rank() != shape.size() ||
        !std::equal(shape.begin() + 1, shape.end(), x.shape().begin() + 1)) {
      throw DimensionError("concat_leading: trailing axes of " + shape_str(x.shape()) +
                           " differ from " + shape_str(shape));
    }
    lead += x.dim(0);
    tracked = tracked || should_record({&x});
  }
  shape[0] = lead;
  Tensor out = make_output(shape, tracked);
  std::size_t offset = 0;
  for (const auto& x : xs) {
    std::copy(x.data().begin(), x.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += x.numel();
  }
  if (tracked) {
    std::vector<ImplPtr> ins;
    for (const auto& x : xs) ins.push_back(x.impl());
    ImplPtr oi = out.impl();
    record([ins, oi] {
      if (oi->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& in : ins) {
        if (in->requires_grad) {
          auto& g = grad_buffer(*in);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[off + i];
        }
        off += in->data.size();
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  const bool tracked = should_record({&x});
  Tensor out = make_output(std::move(shape), tracked);
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (tracked) {
    ImplPtr xi = x.impl(), oi = out.impl();
    record([xi, oi] {
      if (oi->grad.empty()) return;
      accumulate_grad(*xi, oi->grad);
    });
  }
  return out;
}

}  // namespace egoattn
