#include <doctest.h>

#include <cmath>

#include "egoattn/attention.h"
#include "egoattn/backbone.h"
#include "egoattn/convlstm.h"
#include "egoattn/errors.h"
#include "egoattn/gradcheck.h"
#include "egoattn/layers.h"
#include "egoattn/ops.h"
#include "egoattn/rng.h"
#include "oracles.h"

using namespace egoattn;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig c;
  c.input_size = 28;
  c.channels = {4, 4};
  c.strides = {2, 2};
  return c;
}

void fill(const Tensor& t, double v) {
  Tensor h = t;
  for (auto& x : h.data()) x = v;
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("feature map shape follows stride arithmetic") {
  Rng rng(1);
  BackboneNet net(tiny_config(), rng);
  Rng frames(2);
  auto out = net.forward(Tensor::uniform({3, 28, 28}, frames, 0, 1));
  CHECK(out.features.shape() == Shape{4, 7, 7});
  CHECK(out.logits.shape() == Shape{8});
  CHECK_THROWS_AS(net.forward(Tensor({3, 32, 32})), DimensionError);
}

TEST_CASE("default config yields 64x7x7 features") {
  BackboneConfig c;
  Rng rng(0);
  BackboneNet net(c, rng);
  CHECK(c.final_side() == 7);
  Rng f(1);
  CHECK(net.features(Tensor::uniform({3, 112, 112}, f, 0, 1)).shape() == Shape{64, 7, 7});
}

TEST_CASE("zero weights give logits equal to the bias") {
  Rng rng(3);
  BackboneNet net(tiny_config(), rng);
  for (std::size_t b = 0; b < net.num_blocks(); ++b) fill(net.kernel(b), 0.0);
  fill(net.head_weight(), 0.0);
  Tensor bias = net.head_bias();
  for (std::size_t k = 0; k < bias.numel(); ++k) bias[k] = 0.1 * static_cast<double>(k);
  Rng f(4);
  auto out = net.forward(Tensor::uniform({3, 28, 28}, f, 0, 1));
  for (std::size_t k = 0; k < 8; ++k) CHECK(out.logits[k] == bias[k]);
}

TEST_CASE("fresh net: finite logits and nonzero head gradient") {
  Rng rng(5);
  BackboneNet net(tiny_config(), rng);
  Tensor w = net.head_weight();
  w.set_requires_grad();
  Rng f(6);
  Tape tape;
  {
    TapeScope scope(tape);
    auto out = net.forward(Tensor::uniform({3, 28, 28}, f, 0, 1));
    for (double v : out.logits.data()) CHECK(std::isfinite(v));
    tape.backward(cross_entropy(out.logits, 2));
  }
  double norm = 0.0;
  for (double g : w.grad()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("winning class") {
  CHECK(winning_class(Tensor({3}, std::vector<double>{0.1, 2.0, -1.0})) == 1);
  CHECK(winning_class(Tensor({3}, std::vector<double>{5, 5, 3})) == 0);
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = Tensor::uniform({6}, rng, -3, 3);
    CHECK(winning_class(scale(x, rng.uniform(0.01, 100.0))) == winning_class(x));
  }
}

TEST_CASE("clone is deep and group names resolve") {
  Rng rng(8);
  BackboneNet net(tiny_config(), rng);
  BackboneNet copy = net.clone();
  CHECK(param_checksum(copy.params()) == param_checksum(net.params()));
  fill(copy.kernel(0), 0.5);
  CHECK(param_checksum(copy.params()) != param_checksum(net.params()));
  CHECK(net.group("last_block")[0].tensor.same_storage(net.kernel(1)));
  CHECK_THROWS_AS(net.group("block9"), ConfigError);
}

}  // TEST_SUITE

TEST_SUITE("attention") {

TEST_CASE("CAM examples") {
  Rng rng(1);
  Tensor f = Tensor::uniform({5, 3, 3}, rng, -1, 1);
  Tensor w({2, 5}, 0.0);
  w[1 * 5 + 3] = 1.0;
  Tensor cam = compute_cam(f, w, 1);
  for (std::size_t i = 0; i < 9; ++i) CHECK(cam[i] == f[3 * 9 + i]);

  Tensor f2({2, 1, 2}, std::vector<double>{1, 3, 2, 4});  // fibers (1,2) and (3,4)
  Tensor w2({1, 2}, std::vector<double>{10, 1});
  Tensor c2 = compute_cam(f2, w2, 0);
  CHECK(c2[0] == 12.0);
  CHECK(c2[1] == 34.0);

  CHECK_THROWS_AS(compute_cam(f, w, 2), IndexError);
}

TEST_CASE("CAM and attention match loop oracles") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed, 4);
    Tensor f = Tensor::uniform({6, 7, 7}, rng, -2, 2);
    Tensor w = Tensor::uniform({4, 6}, rng, -1, 1);
    const std::size_t c = rng.below(4);
    Tensor cam = compute_cam(f, w, c);
    CHECK(oracle::max_abs_diff(cam, oracle::cam(f, w, c)) <= 1e-12);
    CHECK(oracle::max_abs_diff(apply_spatial_attention(f, cam), oracle::attend(f, cam)) <= 1e-12);
  }
}

TEST_CASE("attention special cases") {
  Rng rng(2);
  Tensor f = Tensor::uniform({3, 4, 4}, rng, -1, 1);
  Tensor flat({4, 4}, 2.5);
  Tensor sa = apply_spatial_attention(f, flat);
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(sa[i] == doctest::Approx(f[i] / 16).epsilon(1e-13));

  Tensor spike({4, 4}, 0.0);
  spike[5] = 1000.0;
  Tensor sp = apply_spatial_attention(f, spike);
  for (std::size_t l = 0; l < 3; ++l) {
    for (std::size_t i = 0; i < 16; ++i) {
      if (i == 5) {
        CHECK(sp[l * 16 + i] == doctest::Approx(f[l * 16 + i]));
      } else {
        CHECK(std::abs(sp[l * 16 + i]) < 1e-300);
      }
    }
  }
  CHECK_THROWS_AS(apply_spatial_attention(f, Tensor({3, 4})), DimensionError);
}

TEST_CASE("attention preserves sign pattern") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor f = Tensor::uniform({4, 5, 5}, rng, -1, 1);
    Tensor cam = Tensor::uniform({5, 5}, rng, -20, 20);
    Tensor sa = apply_spatial_attention(f, cam);
    for (std::size_t i = 0; i < f.numel(); ++i) CHECK(std::signbit(sa[i]) == std::signbit(f[i]));
  }
}

TEST_CASE("attended frame feature composition") {
  Rng rng(4);
  BackboneNet net(tiny_config(), rng);
  Rng fr(5);
  Tensor frame = Tensor::uniform({3, 28, 28}, fr, 0, 1);

  AttendedFeature off = attended_frame_feature(net, frame, false);
  CHECK(off.features.same_storage(off.backbone_features));
  for (double v : off.map.prob.data()) CHECK(v == 1.0 / 49);

  AttendedFeature on = attended_frame_feature(net, frame, true);
  const std::size_t c = winning_class(on.backbone_logits);
  CHECK(on.map.class_used == c);
  Tensor ref = oracle::attend(on.backbone_features, oracle::cam(on.backbone_features, net.head_weight(), c));
  CHECK(oracle::max_abs_diff(on.features, ref) <= 1e-12);
  const Tensor a = global_avg_pool(on.features), b = global_avg_pool(on.backbone_features);
  CHECK(oracle::max_abs_diff(a, b) > 0.0);
}

TEST_CASE("box coverage and uniform mass") {
  Box whole{0, 0, 28, 28};
  CHECK(uniform_mass_in_box(whole, 7, 7, 28) == doctest::Approx(1.0));
  Box cell{4, 4, 8, 8};
  auto cov = box_cell_coverage(cell, 7, 7, 28);
  CHECK(cov[1 * 7 + 1] == doctest::Approx(1.0));
  CHECK(uniform_mass_in_box(cell, 7, 7, 28) == doctest::Approx(1.0 / 49));
  Tensor prob({7, 7}, 0.0);
  prob[8] = 1.0;
  CHECK(attention_mass_in_box(prob, cell, 28) == doctest::Approx(1.0));
  Box half{4, 4, 6, 8};
  CHECK(attention_mass_in_box(prob, half, 28) == doctest::Approx(0.5));
}

TEST_CASE("attention export is nearest-neighbour and min-max scaled") {
  Tensor cam({2, 2}, std::vector<double>{0, 1, 2, 4});
  auto g = attention_to_gray(cam, 4);
  CHECK(g[0] == 0);
  CHECK(g[3] == 64);
  CHECK(g[15] == 255);
  CHECK(g[1] == g[0]);
}

}  // TEST_SUITE

TEST_SUITE("convlstm") {

TEST_CASE("zero cell gives zero state") {
  Rng rng(1);
  ConvLSTMCell cell(3, 2, 3, rng);
  fill(cell.input_kernels(), 0.0);
  fill(cell.hidden_kernels(), 0.0);
  ConvLSTMGates g;
  Rng x(2);
  ConvLSTMState s = cell.step(Tensor::uniform({3, 4, 4}, x, -1, 1), cell.zero_state(4, 4),
                              GateVariant::kStandard, &g);
  for (double v : g.input.data()) CHECK(v == 0.5);
  for (double v : s.c.data()) CHECK(v == 0.0);
  for (double v : s.h.data()) CHECK(v == 0.0);
}

TEST_CASE("scalar step against an independent scalar computation") {
  Rng rng(0);
  ConvLSTMCell cell(1, 1, 1, rng);
  fill(cell.input_kernels(), 1.0);
  fill(cell.hidden_kernels(), 1.0);
  ConvLSTMGates g;
  ConvLSTMState s = cell.step(Tensor({1, 1, 1}, 0.5), cell.zero_state(1, 1), GateVariant::kStandard, &g);
  const double gate = oracle::sigmoid(0.5), cand = std::tanh(0.5);
  const double c = gate * cand, h = gate * std::tanh(c);
  CHECK(g.input[0] == doctest::Approx(0.62246).epsilon(1e-5));
  CHECK(g.forget[0] == doctest::Approx(gate).epsilon(1e-15));
  CHECK(g.candidate[0] == doctest::Approx(0.46212).epsilon(1e-5));
  CHECK(s.c[0] == doctest::Approx(0.28765).epsilon(1e-5));
  CHECK(std::abs(s.c[0] - c) <= 1e-15);
  CHECK(std::abs(s.h[0] - h) <= 1e-15);
  // o * tanh(c) evaluates to 0.174270 (not the 0.17405 sometimes quoted).
  CHECK(s.h[0] == doctest::Approx(0.1742697).epsilon(1e-6));
}

TEST_CASE("forget-only passthrough keeps memory") {
  Rng rng(3);
  ConvLSTMCell cell(2, 2, 3, rng);
  fill(cell.input_kernels(), 0.0);
  fill(cell.hidden_kernels(), 0.0);
  Tensor b = cell.biases();
  for (std::size_t k = 0; k < 2; ++k) {
    b[k] = -40.0;     // input gate -> 0
    b[2 + k] = 40.0;  // forget gate -> 1
  }
  Rng s(4);
  ConvLSTMState prev{Tensor::uniform({2, 3, 3}, s, -1, 1), Tensor::uniform({2, 3, 3}, s, -0.5, 0.5)};
  ConvLSTMState next = cell.step(Tensor({2, 3, 3}, 0.0), prev);
  CHECK(oracle::max_abs_diff(next.c, prev.c) <= 1e-6);
}

TEST_CASE("verbatim variant") {
  Rng rng(5);
  CHECK_THROWS_AS(ConvLSTMCell(3, 2, 3, rng, GateVariant::kVerbatim), ConfigError);
  ConvLSTMCell cell(2, 2, 3, rng, GateVariant::kVerbatim);
  Rng x(6);
  Tensor in = Tensor::uniform({2, 3, 3}, x, -1, 1);
  ConvLSTMGates g;
  ConvLSTMState s = cell.step(in, cell.zero_state(3, 3), GateVariant::kVerbatim, &g);
  for (std::size_t i = 0; i < in.numel(); ++i) CHECK(s.c[i] == doctest::Approx(g.candidate[i] * in[i]));
  CHECK(parse_gate_variant("verbatim") == GateVariant::kVerbatim);
  CHECK_THROWS_AS(parse_gate_variant("peephole"), ConfigError);
}

TEST_CASE("encode_sequence folds steps and pools the final memory") {
  Rng rng(7);
  ConvLSTMCell cell(3, 4, 3, rng);
  Tensor b = cell.biases();
  for (auto& v : b.data()) v = rng.uniform(-0.5, 0.5);
  Rng x(8);
  std::vector<Tensor> seq;
  for (int t = 0; t < 3; ++t) seq.push_back(Tensor::uniform({3, 5, 5}, x, -1, 1));

  ConvLSTMState one = cell.step(seq[0], cell.zero_state(5, 5));
  CHECK(oracle::max_abs_diff(encode_sequence(cell, std::span(seq).first(1)), oracle::gap(one.c)) == 0.0);

  ConvLSTMState s = cell.zero_state(5, 5);
  for (const auto& f : seq) s = cell.step(f, s);
  CHECK(oracle::max_abs_diff(encode_sequence(cell, seq), oracle::gap(s.c)) <= 1e-12);
  CHECK_THROWS_AS(encode_sequence(cell, std::span<const Tensor>()), std::invalid_argument);

  ConvLSTMCell zero = cell.clone();
  fill(zero.input_kernels(), 0.0);
  fill(zero.hidden_kernels(), 0.0);
  fill(zero.biases(), 0.0);
  const Tensor zd = encode_sequence(zero, seq);
  for (double v : zd.data()) CHECK(v == 0.0);
}

TEST_CASE("state stays bounded and shape-preserving over long sequences") {
  Rng rng(9);
  ConvLSTMCell cell(2, 3, 3, rng);
  ConvLSTMState s = cell.zero_state(4, 4);
  Rng x(10);
  for (int t = 0; t < 60; ++t) {
    ConvLSTMGates g;
    s = cell.step(Tensor::uniform({2, 4, 4}, x, -10, 10), s, GateVariant::kStandard, &g);
    CHECK(s.c.shape() == Shape{3, 4, 4});
    for (double v : s.h.data()) CHECK(std::abs(v) < 1.0);
    for (double v : g.forget.data()) CHECK((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("BPTT through three steps passes the gradient check") {
  Rng rng(11);
  ConvLSTMCell cell(2, 2, 3, rng);
  std::vector<Tensor> wrt = {cell.input_kernels(), cell.hidden_kernels(), cell.biases()};
  for (auto& t : wrt) t.set_requires_grad();
  Rng x(12);
  std::vector<Tensor> seq;
  for (int t = 0; t < 3; ++t) seq.push_back(Tensor::uniform({2, 3, 3}, x, -1, 1));
  Linear cls(2, 3, rng);
  auto loss = [&] {
    Rng drop(1);
    return cross_entropy(classify_clip(encode_sequence(cell, seq), cls, 0.0, drop, true), 1);
  };
  CHECK(grad_check(loss, wrt) < 1e-4);
  for (auto& t : wrt) t.set_requires_grad(false);
}

TEST_CASE("classify_clip dropout behaviour") {
  Rng rng(13);
  Linear cls(6, 3, rng);
  Tensor d = Tensor::uniform({6}, rng, -1, 1);
  Rng r1(1), r2(2);
  CHECK(oracle::max_abs_diff(classify_clip(d, cls, 0.7, r1, false), classify_clip(d, cls, 0.7, r2, false)) == 0.0);
  Rng r3(3), r4(3);
  CHECK(oracle::max_abs_diff(classify_clip(d, cls, 0.0, r3, true), classify_clip(d, cls, 0.7, r4, false)) == 0.0);
  Rng r5(4), r6(4);
  CHECK(oracle::max_abs_diff(classify_clip(d, cls, 0.7, r5, true), classify_clip(d, cls, 0.7, r6, true)) == 0.0);
}

TEST_CASE("fully connected LSTM scalar step") {
  Rng rng(14);
  LSTMCell cell(1, 1, rng);
  fill(cell.input_weights(), 1.0);
  fill(cell.hidden_weights(), 1.0);
  LSTMState s = cell.step(Tensor({1}, 0.5), cell.zero_state());
  const double gate = oracle::sigmoid(0.5), c = gate * std::tanh(0.5);
  CHECK(std::abs(s.c[0] - c) <= 1e-15);
  CHECK(std::abs(s.h[0] - gate * std::tanh(c)) <= 1e-15);
  // Second step exercises the recurrent weights: pre-activation 0.5 + h1.
  LSTMState s2 = cell.step(Tensor({1}, 0.5), s);
  const double pre = 0.5 + s.h[0], g2 = oracle::sigmoid(pre);
  const double c2 = g2 * std::tanh(pre) + g2 * c;
  CHECK(std::abs(s2.c[0] - c2) <= 1e-15);
}

}  // TEST_SUITE
