#include "egoattn/verify.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>

#include "egoattn/attention.h"
#include "egoattn/backbone.h"
#include "egoattn/convlstm.h"
#include "egoattn/errors.h"
#include "egoattn/flow.h"
#include "egoattn/gradcheck.h"
#include "egoattn/layers.h"
#include "egoattn/ops.h"
#include "egoattn/rng.h"

namespace egoattn {

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kOracleTol = 1e-12;

CheckResult check(const char* suite, std::string name, double value, double tol, std::string detail = {}) {
  return {suite, std::move(name), value < tol && std::isfinite(value), value, tol, std::move(detail)};
}

Tensor param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::uniform(std::move(shape), rng, lo, hi);
  t.set_requires_grad();
  return t;
}

// Values bounded away from zero so relu stays differentiable under +-h.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = Tensor::uniform(std::move(shape), rng, 0.1, 1.0);
  for (auto& v : t.data()) v = rng.bernoulli(0.5) ? v : -v;
  t.set_requires_grad();
  return t;
}

// Scalar probe of a tensor-valued function: sum(out * R) for a fixed random R.
double grad_of(const std::function<Tensor(const std::vector<Tensor>&)>& op, std::vector<Tensor> inputs,
               std::uint64_t seed) {
  Rng probe(seed, 99);
  Tensor weights;
  auto loss = [&]() {
    Tensor out = op(inputs);
    if (!weights.defined()) weights = Tensor::uniform(out.shape(), probe, -1.0, 1.0);
    return sum(hadamard(out, weights));
  };
  return grad_check(loss, inputs);
}

struct SmallNet {
  BackboneNet net;
  ConvLSTMCell cell;
  Linear cls;
  std::vector<Tensor> frames;
};

SmallNet small_net(Rng& rng, GateVariant variant) {
  BackboneConfig bc;
  bc.input_size = 12;
  bc.channels = {4, 5};
  bc.strides = {2, 2};
  bc.num_pretrain_classes = 3;
  SmallNet s;
  s.net = BackboneNet(bc, rng);
  // Non-zero biases and head bias so every parameter influences the loss.
  for (std::size_t b = 0; b < s.net.num_blocks(); ++b) {
    Tensor bias = s.net.bias(b);
    for (auto& v : bias.data()) v = rng.uniform(0.0, 0.2);
  }
  s.cell = ConvLSTMCell(5, variant == GateVariant::kVerbatim ? 5 : 3, 3, rng, variant);
  Tensor b = s.cell.biases();
  for (auto& v : b.data()) v = rng.uniform(-0.3, 0.3);
  s.cls = Linear(s.cell.hidden(), 4, rng);
  for (int t = 0; t < 3; ++t) s.frames.push_back(Tensor::uniform({3, 12, 12}, rng, 0.0, 1.0));
  return s;
}

Tensor composed_loss(const SmallNet& s) {
  std::vector<Tensor> feats;
  for (const auto& f : s.frames) feats.push_back(attended_frame_feature(s.net, f, true).features);
  const Tensor desc = encode_sequence(s.cell, feats);
  Rng drop(5, 5);
  return cross_entropy(classify_clip(desc, s.cls, 0.3, drop, true), 2);
}

}  // namespace

std::vector<CheckResult> run_grad_suite() {
  const char* S = "grad";
  std::vector<CheckResult> out;
  Rng rng(2024, 1);
  auto add_check = [&](std::string name, double err) { out.push_back(check(S, std::move(name), err, kGradTol)); };

  add_check("conv2d stride1 pad1", grad_of([](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
                                           {param({2, 6, 5}, rng), param({3, 2, 3, 3}, rng), param({3}, rng)}, 1));
  add_check("conv2d stride2 pad1", grad_of([](const auto& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
                                           {param({3, 7, 8}, rng), param({4, 3, 3, 3}, rng), param({4}, rng)}, 2));
  add_check("conv2d 1x1 no bias", grad_of([](const auto& in) { return conv2d(in[0], in[1], Tensor(), 1, 0); },
                                          {param({3, 4, 4}, rng), param({2, 3, 1, 1}, rng)}, 3));
  add_check("add", grad_of([](const auto& in) { return add(in[0], in[1]); }, {param({3, 4}, rng), param({3, 4}, rng)}, 4));
  add_check("sub", grad_of([](const auto& in) { return sub(in[0], in[1]); }, {param({5}, rng), param({5}, rng)}, 5));
  add_check("hadamard",
            grad_of([](const auto& in) { return hadamard(in[0], in[1]); }, {param({2, 3, 3}, rng), param({2, 3, 3}, rng)}, 6));
  add_check("scale", grad_of([](const auto& in) { return scale(in[0], -1.7); }, {param({6}, rng)}, 7));
  add_check("add_n", grad_of([](const auto& in) { return add_n(in); }, {param({4}, rng), param({4}, rng), param({4}, rng)}, 8));
  add_check("mean_of", grad_of([](const auto& in) { return mean_of(in); }, {param({2, 2}, rng), param({2, 2}, rng)}, 9));
  add_check("sigmoid", grad_of([](const auto& in) { return sigmoid(in[0]); }, {param({7}, rng, -4, 4)}, 10));
  add_check("tanh", grad_of([](const auto& in) { return tanh(in[0]); }, {param({7}, rng, -3, 3)}, 11));
  add_check("relu", grad_of([](const auto& in) { return relu(in[0]); }, {away_from_zero({9}, rng)}, 12));
  add_check("spatial_softmax", grad_of([](const auto& in) { return spatial_softmax(in[0]); }, {param({4, 5}, rng, -3, 3)}, 13));
  add_check("global_avg_pool", grad_of([](const auto& in) { return global_avg_pool(in[0]); }, {param({3, 4, 5}, rng)}, 14));
  add_check("linear", grad_of([](const auto& in) { return linear(in[0], in[1], in[2]); },
                              {param({5}, rng), param({3, 5}, rng), param({3}, rng)}, 15));
  add_check("dropout (training)", grad_of(
                                      [](const auto& in) {
                                        Rng mask(77, 1);
                                        return dropout(in[0], 0.5, mask, true);
                                      },
                                      {param({12}, rng)}, 16));
  add_check("log_softmax", grad_of([](const auto& in) { return log_softmax(in[0]); }, {param({6}, rng, -3, 3)}, 17));
  add_check("nll_loss", grad_of([](const auto& in) { return nll_loss(log_softmax(in[0]), 2); }, {param({5}, rng)}, 18));
  add_check("cross_entropy", grad_of([](const auto& in) { return cross_entropy(in[0], 1); }, {param({4}, rng, -2, 2)}, 19));
  add_check("sum", grad_of([](const auto& in) { return sum(in[0]); }, {param({3, 3}, rng)}, 20));
  add_check("channel_weighted_sum (CAM)", grad_of([](const auto& in) { return channel_weighted_sum(in[0], in[1], 1); },
                                                  {param({4, 3, 3}, rng), param({3, 4}, rng)}, 21));
  add_check("broadcast_spatial_mul", grad_of([](const auto& in) { return broadcast_spatial_mul(in[0], in[1]); },
                                             {param({3, 4, 4}, rng), param({4, 4}, rng)}, 22));
  add_check("slice_leading", grad_of([](const auto& in) { return slice_leading(in[0], 1, 3); }, {param({4, 2}, rng)}, 23));
  add_check("concat_leading", grad_of([](const auto& in) { return concat_leading(in); },
                                      {param({2, 3}, rng), param({1, 3}, rng)}, 24));
  add_check("reshape", grad_of([](const auto& in) { return reshape(in[0], {6}); }, {param({2, 3}, rng)}, 25));
  add_check("cam + spatial attention",
            grad_of([](const auto& in) { return apply_spatial_attention(in[0], compute_cam(in[0], in[1], 0)); },
                    {param({3, 4, 4}, rng), param({2, 3}, rng)}, 26));

  for (GateVariant v : {GateVariant::kStandard, GateVariant::kVerbatim}) {
    const std::size_t hid = v == GateVariant::kVerbatim ? 3 : 2;
    ConvLSTMCell cell(3, hid, 3, rng, v);
    Tensor b = cell.biases();
    for (auto& x : b.data()) x = rng.uniform(-0.5, 0.5);
    std::vector<Tensor> wrt = {cell.input_kernels(), cell.hidden_kernels(), cell.biases(), param({3, 4, 4}, rng),
                               param({3, 4, 4}, rng)};
    for (auto& t : wrt) t.set_requires_grad();
    auto loss = [&]() {
      ConvLSTMState s = cell.zero_state(4, 4);
      s = cell.step(wrt[3], s, v);
      s = cell.step(wrt[4], s, v);
      s = cell.step(wrt[3], s, v);
      return sum(hadamard(s.h, s.h));
    };
    add_check("convLSTM 3-step unroll (" + to_string(v) + ")", grad_check(loss, wrt));
  }
  {
    LSTMCell lstm(6, 4, rng);
    std::vector<Tensor> wrt = {lstm.input_weights(), lstm.hidden_weights(), lstm.biases(), param({6}, rng),
                               param({6}, rng), param({6}, rng)};
    for (auto& t : wrt) t.set_requires_grad();
    auto loss = [&]() {
      LSTMState s = lstm.zero_state();
      for (int t = 3; t < 6; ++t) s = lstm.step(wrt[t], s);
      return cross_entropy(s.h, 1);
    };
    add_check("LRCN LSTM 3-step unroll", grad_check(loss, wrt));
  }
  for (GateVariant v : {GateVariant::kStandard, GateVariant::kVerbatim}) {
    SmallNet s = small_net(rng, v);
    std::vector<Tensor> wrt;
    for (const auto& p : s.net.params()) {
      if (p.name.rfind("input.", 0) != 0) wrt.push_back(p.tensor);
    }
    for (const auto& p : s.cell.params()) wrt.push_back(p.tensor);
    for (const auto& p : s.cls.params()) wrt.push_back(p.tensor);
    wrt.push_back(s.frames[1]);
    for (auto& t : wrt) t.set_requires_grad();
    add_check("frame->CAM->attention->convLSTM x3->GAP->classifier->loss (" + to_string(v) + ")",
              grad_check([&] { return composed_loss(s); }, wrt));
  }
  return out;
}

std::vector<CheckResult> run_oracle_suite() {
  const char* S = "oracle";
  std::vector<CheckResult> out;
  double conv_err = 0, gap_err = 0, cam_err = 0, att_err = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed, 7);
    const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(4), h = 5 + rng.below(4), w = 5 + rng.below(4);
    const std::size_t k = rng.bernoulli(0.5) ? 3 : 1, stride = 1 + rng.below(2), pad = k / 2;
    Tensor x = Tensor::uniform({cin, h, w}, rng, -1, 1), ker = Tensor::uniform({cout, cin, k, k}, rng, -1, 1);
    Tensor bias = Tensor::uniform({cout}, rng, -1, 1);
    Tensor y = conv2d(x, ker, bias, stride, pad);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
          double acc = bias[o];
          for (std::size_t i = 0; i < cin; ++i) {
            for (std::size_t a = 0; a < k; ++a) {
              for (std::size_t b = 0; b < k; ++b) {
                const long yy = static_cast<long>(r * stride + a) - static_cast<long>(pad);
                const long xx = static_cast<long>(c * stride + b) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                acc += ker[((o * cin + i) * k + a) * k + b] * x[(i * h + yy) * w + xx];
              }
            }
          }
          conv_err = std::max(conv_err, std::abs(acc - y[(o * oh + r) * ow + c]));
        }
      }
    }
    const std::size_t l = 2 + rng.below(5), cls = 2 + rng.below(4);
    Tensor f = Tensor::uniform({l, 7, 7}, rng, -1, 1), wt = Tensor::uniform({cls, l}, rng, -1, 1);
    Tensor gap = global_avg_pool(f);
    for (std::size_t ch = 0; ch < l; ++ch) {
      double m = 0;
      for (std::size_t i = 0; i < 49; ++i) m += f[ch * 49 + i];
      gap_err = std::max(gap_err, std::abs(m / 49.0 - gap[ch]));
    }
    const std::size_t c = rng.below(cls);
    Tensor cam = compute_cam(f, wt, c);
    Tensor sa = apply_spatial_attention(f, cam);
    std::vector<double> ref(49, 0.0);
    double zmax = -1e300;
    for (std::size_t i = 0; i < 49; ++i) {
      for (std::size_t ch = 0; ch < l; ++ch) ref[i] += wt[c * l + ch] * f[ch * 49 + i];
      cam_err = std::max(cam_err, std::abs(ref[i] - cam[i]));
      zmax = std::max(zmax, ref[i]);
    }
    double z = 0;
    for (double v : ref) z += std::exp(v - zmax);
    for (std::size_t ch = 0; ch < l; ++ch) {
      for (std::size_t i = 0; i < 49; ++i) {
        att_err = std::max(att_err, std::abs(f[ch * 49 + i] * std::exp(ref[i] - zmax) / z - sa[ch * 49 + i]));
      }
    }
  }
  out.push_back(check(S, "conv2d vs loop oracle (5 seeds)", conv_err, kOracleTol));
  out.push_back(check(S, "global_avg_pool vs loop oracle (5 seeds)", gap_err, kOracleTol));
  out.push_back(check(S, "CAM vs loop oracle (5 seeds)", cam_err, kOracleTol));
  out.push_back(check(S, "spatial attention vs loop oracle (5 seeds)", att_err, kOracleTol));

  {
    Rng rng(1, 1);
    ConvLSTMCell cell(1, 1, 1, rng);
    std::fill(cell.input_kernels().data().begin(), cell.input_kernels().data().end(), 1.0);
    std::fill(cell.hidden_kernels().data().begin(), cell.hidden_kernels().data().end(), 1.0);
    std::fill(cell.biases().data().begin(), cell.biases().data().end(), 0.0);
    ConvLSTMGates g;
    const ConvLSTMState s = cell.step(Tensor({1, 1, 1}, 0.5), cell.zero_state(1, 1), GateVariant::kStandard, &g);
    const double sig = 1.0 / (1.0 + std::exp(-0.5));
    const double c_t = sig * std::tanh(0.5);
    const double h_t = sig * std::tanh(c_t);
    double gate_err = std::max({std::abs(g.input[0] - 0.62246), std::abs(g.forget[0] - 0.62246),
                                std::abs(g.output[0] - 0.62246), std::abs(g.candidate[0] - 0.46212),
                                std::abs(s.c[0] - 0.28765)});
    out.push_back(check(S, "convLSTM scalar step: i,f,o,c~,c_t vs hand values", gate_err, 1e-5));
    out.push_back(check(S, "convLSTM scalar step: h_t = o*tanh(c_t)", std::abs(s.h[0] - h_t), 1e-12,
                        "h_t = " + std::to_string(s.h[0])));
    out.push_back(check(S, "convLSTM scalar step: c_t = i*tanh(0.5)", std::abs(s.c[0] - c_t), 1e-12));

    LSTMCell lstm(1, 1, rng);
    std::fill(lstm.input_weights().data().begin(), lstm.input_weights().data().end(), 1.0);
    std::fill(lstm.hidden_weights().data().begin(), lstm.hidden_weights().data().end(), 1.0);
    std::fill(lstm.biases().data().begin(), lstm.biases().data().end(), 0.0);
    const LSTMState ls = lstm.step(Tensor({1}, 0.5), lstm.zero_state());
    out.push_back(check(S, "LSTM scalar step matches convLSTM scalar step",
                        std::max(std::abs(ls.c[0] - c_t), std::abs(ls.h[0] - h_t)), 1e-12));
  }

  {
    Rng rng(3, 3);
    double worst = 0.0;
    bool finite = true, positive = true;
    for (int n = 0; n < 1000; ++n) {
      Tensor cam = Tensor::normal({7, 7}, rng, n % 3 == 0 ? 30.0 : 3.0);
      const bool extreme = n % 4 == 1;
      if (extreme) {
        for (int e = 0; e < 3; ++e) cam[rng.below(49)] = rng.bernoulli(0.5) ? 1000.0 : -1000.0;
      }
      Tensor p = spatial_softmax(cam);
      double total = 0;
      for (double v : p.data()) {
        finite = finite && std::isfinite(v);
        if (!extreme && n % 3 != 0) positive = positive && v > 0.0;
        total += v;
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
    out.push_back(check(S, "attention maps sum to 1 (1000 CAMs incl. +-1000)", finite ? worst : INFINITY, 1e-9));
    out.push_back(check(S, "attention maps strictly positive on moderate CAMs", positive ? 0.0 : 1.0, 0.5));
  }
  return out;
}

namespace {

double texture(double x, double y, const std::vector<double>& p) {
  double v = 0.5;
  for (std::size_t k = 0; k + 3 < p.size(); k += 4) v += 0.12 * std::sin(p[k] * x + p[k + 1] * y + p[k + 2]) * p[k + 3];
  return v;
}

double interior_mee(const FlowField& f, double u, double v, std::size_t margin) {
  const std::size_t h = f.u.dim(0), w = f.u.dim(1);
  double e = 0.0;
  std::size_t n = 0;
  for (std::size_t y = margin; y + margin < h; ++y) {
    for (std::size_t x = margin; x + margin < w; ++x) {
      e += std::hypot(f.u[y * w + x] - u, f.v[y * w + x] - v);
      ++n;
    }
  }
  return e / static_cast<double>(n);
}

double mean_magnitude(const FlowField& f, std::size_t margin = 0) {
  return interior_mee(f, 0.0, 0.0, margin);
}

}  // namespace

std::vector<CheckResult> run_flow_suite() {
  const char* S = "flow";
  std::vector<CheckResult> out;
  Rng rng(11, 4);
  std::vector<double> p;
  for (int k = 0; k < 6; ++k) {
    const double freq = rng.uniform(0.15, 0.5), angle = rng.uniform(0.0, 6.28);
    p.push_back(freq * std::cos(angle));
    p.push_back(freq * std::sin(angle));
    p.push_back(rng.uniform(0.0, 6.28));
    p.push_back(rng.uniform(0.5, 1.0));
  }
  const std::size_t n = 48;
  const std::pair<int, int> shifts[] = {{0, 0}, {1, 0}, {0, -1}, {2, 0}, {-1, 3}, {3, -2}, {-3, -3}, {2, 2}};
  double worst = 0.0;
  std::string worst_name;
  for (auto [dx, dy] : shifts) {
    Tensor a({n, n}), b({n, n});
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        a[y * n + x] = texture(x, y, p);
        b[y * n + x] = texture(static_cast<double>(x) - dx, static_cast<double>(y) - dy, p);
      }
    }
    const double mee = interior_mee(tvl1_flow(a, b), dx, dy, 6);
    if (mee >= worst) {
      worst = mee;
      worst_name = "(" + std::to_string(dx) + "," + std::to_string(dy) + ")";
    }
  }
  out.push_back(check(S, "TV-L1 integer translations |d|<=3: worst interior MEE", worst, 0.3, "worst at " + worst_name));

  {
    FlowField pan{Tensor({n, n}), Tensor({n, n})};
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        pan.u[y * n + x] = 2.5 + 0.01 * x - 0.02 * y;
        pan.v[y * n + x] = -1.25 + 0.015 * x + 0.005 * y;
      }
    }
    const double before = mean_magnitude(pan);
    const double after = mean_magnitude(warp_compensate(pan).flow);
    out.push_back(check(S, "warp compensation on analytic pan: residual/original", after / before, 0.1));

    Tensor a({n, n}), b({n, n});
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        a[y * n + x] = texture(x, y, p);
        b[y * n + x] = texture(x - 1.6, y + 0.8, p);
      }
    }
    const FlowField est = tvl1_flow(a, b);
    const double est_after = mean_magnitude(warp_compensate(est).flow, 6) / mean_magnitude(est, 6);
    out.push_back(check(S, "warp compensation on TV-L1 flow of a pan (interior): residual/original", est_after, 0.1));
  }

  {
    Tensor rgb = Tensor::uniform({8, 3, 3, 3}, rng, -1, 1);
    Tensor init = cross_modality_init(rgb, 10);
    double err = 0.0;
    for (std::size_t o = 0; o < 8; ++o) {
      for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t t = 0; t < 9; ++t) {
          const double m = (rgb[(o * 3 + 0) * 9 + t] + rgb[(o * 3 + 1) * 9 + t] + rgb[(o * 3 + 2) * 9 + t]) / 3.0;
          err = std::max(err, std::abs(init[(o * 10 + i) * 9 + t] - m));
        }
      }
    }
    out.push_back(check(S, "cross-modality init vs direct recomputation", err, 1e-15 + 1e-300));
  }
  return out;
}

std::vector<CheckResult> run_suite(const std::string& suite) {
  if (suite == "grad") return run_grad_suite();
  if (suite == "oracle") return run_oracle_suite();
  if (suite == "flow") return run_flow_suite();
  if (suite == "all") {
    auto all = run_grad_suite();
    for (auto& c : run_oracle_suite()) all.push_back(std::move(c));
    for (auto& c : run_flow_suite()) all.push_back(std::move(c));
    return all;
  }
  throw ConfigError("unknown verification suite '" + suite + "' (expected grad|oracle|flow|all)");
}

void print_checks(std::ostream& os, const std::vector<CheckResult>& checks) {
  std::size_t width = 0;
  for (const auto& c : checks) width = std::max(width, c.name.size());
  for (const auto& c : checks) {
    os << (c.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(7) << c.suite << std::setw(static_cast<int>(width) + 2)
       << c.name << std::right << std::scientific << std::setprecision(3) << c.value << " < " << c.tolerance
       << std::defaultfloat;
    if (!c.detail.empty()) os << "  [" << c.detail << "]";
    os << '\n';
  }
}

bool all_passed(const std::vector<CheckResult>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

}  // namespace egoattn
