#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "egoattn/checkpoint.h"
#include "egoattn/errors.h"
#include "egoattn/gradcheck.h"
#include "egoattn/ops.h"
#include "egoattn/optim.h"
#include "egoattn/rng.h"
#include "oracles.h"

using namespace egoattn;
namespace fs = std::filesystem;

TEST_SUITE("tensor-core") {

TEST_CASE("tensor shape invariants") {
  Tensor t({2, 3, 4}, 1.5);
  CHECK(t.numel() == 24);
  CHECK(shape_numel(t.shape()) == t.numel());
  CHECK(t.dim(2) == 4);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  t.grad()[3] = 2.0;
  CHECK(t.grad().size() == t.numel());
  Tensor c = t.clone();
  c[0] = -1.0;
  CHECK(t[0] == 1.5);
  Tensor alias = t;
  alias[0] = 9.0;
  CHECK(t[0] == 9.0);
}

TEST_CASE("rng streams are reproducible and split independently") {
  Rng a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng parent(42, 7);
  const auto before = parent.counter();
  Rng child = parent.split(3);
  CHECK(parent.counter() == before);
  CHECK(child.next_u64() != Rng(42, 7).next_u64());
  Rng u(1);
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = u.uniform();
    CHECK((x >= 0.0 && x < 1.0));
    mean += x;
  }
  CHECK(mean / 20000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("tape accumulates adjoints of a reused tensor") {
  Tensor x({3}, std::vector<double>{1, 2, 3});
  x.set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    // y = sum(x*x + 3x): dy/dx = 2x + 3
    Tensor y = sum(add(hadamard(x, x), scale(x, 3.0)));
    tape.backward(y);
  }
  CHECK(x.grad()[0] == 5.0);
  CHECK(x.grad()[1] == 7.0);
  CHECK(x.grad()[2] == 9.0);
  CHECK(tape.size() == 0);
}

TEST_CASE("ops without a tape or without grad inputs record nothing") {
  Tensor x({2}, 1.0);
  Tape tape;
  TapeScope scope(tape);
  sigmoid(x);
  CHECK(tape.size() == 0);
  x.set_requires_grad();
  sigmoid(x);
  CHECK(tape.size() == 1);
}

TEST_CASE("conv2d examples") {
  SUBCASE("1x1 kernel scales") {
    Tensor x({1, 3, 3}, 1.0);
    Tensor out = conv2d(x, Tensor({1, 1, 1, 1}, 2.0), Tensor({1}, 0.0), 1, 0);
    CHECK(out.shape() == Shape{1, 3, 3});
    for (double v : out.data()) CHECK(v == 2.0);
  }
  SUBCASE("identity centre kernel is bit-exact identity") {
    Rng rng(3);
    Tensor x = Tensor::uniform({1, 3, 3}, rng, -5, 5);
    Tensor k({1, 1, 3, 3}, 0.0);
    k[4] = 1.0;
    Tensor out = conv2d(x, k, Tensor({1}, 0.0), 1, 1);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(out[i] == x[i]);
  }
  SUBCASE("random strided instance matches loop oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      Tensor x = Tensor::uniform({2, 5, 5}, rng, -1, 1);
      Tensor k = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
      Tensor b = Tensor::uniform({3}, rng, -1, 1);
      Tensor out = conv2d(x, k, b, 2, 1);
      Tensor ref = oracle::conv2d(x, k, b, 2, 1);
      REQUIRE(out.shape() == ref.shape());
      CHECK(oracle::max_abs_diff(out, ref) <= 1e-12);
    }
  }
  SUBCASE("shape errors name the axis") {
    Tensor x({2, 5, 5});
    try {
      conv2d(x, Tensor({1, 3, 3, 3}), Tensor(), 1, 1);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
    }
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 2, 2}), Tensor(), 1, 0), DimensionError);
  }
}

TEST_CASE("spatial softmax examples") {
  const Tensor uniform = spatial_softmax(Tensor({7, 7}, 3.0));
  for (double v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 49).epsilon(1e-14));

  // exp gives (1,1,1,3), so the normalized map is (1/6,1/6,1/6,1/2).
  Tensor m({2, 2}, std::vector<double>{0, 0, 0, std::log(3.0)});
  Tensor p = spatial_softmax(m);
  CHECK(p[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(p[3] == doctest::Approx(0.5).epsilon(1e-12));

  Tensor spike({7, 7}, 0.0);
  spike[10] = 1000.0;
  Tensor s = spatial_softmax(spike);
  CHECK(s[10] == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 49; ++i) {
    CHECK(std::isfinite(s[i]));
    if (i != 10) CHECK(s[i] < 1e-300);
  }
}

TEST_CASE("spatial softmax property: normalized, positive on moderate maps") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    Tensor m = Tensor::uniform({h, w}, rng, -30, 30);
    Tensor p = spatial_softmax(m);
    double total = 0.0;
    for (double v : p.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0 + 1e-15);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
    CHECK(oracle::max_abs_diff(p, oracle::softmax(m)) <= 1e-12);
  }
}

TEST_CASE("global average pool") {
  const Tensor pooled = global_avg_pool(Tensor({2, 3, 3}, 7.0));
  for (double v : pooled.data()) CHECK(v == 7.0);
  Tensor x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(global_avg_pool(x)[0] == 2.5);
  Rng rng(5);
  Tensor r = Tensor::uniform({64, 7, 7}, rng, -1, 1);
  CHECK(oracle::max_abs_diff(global_avg_pool(r), oracle::gap(r)) <= 1e-12);
}

TEST_CASE("pointwise ops") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  Tensor h = hadamard(Tensor({2}, std::vector<double>{1, 2}), Tensor({2}, std::vector<double>{3, 4}));
  CHECK(h[0] == 3.0);
  CHECK(h[1] == 8.0);
  Tensor nll = nll_loss(log_softmax(Tensor({3}, 0.0)), 1);
  CHECK(nll.item() == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), DimensionError);
  CHECK_THROWS_AS(nll_loss(log_softmax(Tensor({3}, 0.0)), 3), IndexError);

  Tensor lin = linear(Tensor({2}, std::vector<double>{1, -1}), Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}),
                      Tensor({2}, std::vector<double>{0.5, 0}));
  CHECK(lin[0] == -0.5);
  CHECK(lin[1] == -1.0);
}

TEST_CASE("dropout is inverted, identity in eval, rejects bad rates") {
  Tensor x({10000}, 1.0);
  Rng rng(8);
  Tensor y = dropout(x, 0.7, rng, true);
  std::size_t kept = 0;
  for (double v : y.data()) {
    if (v != 0.0) {
      CHECK(v == doctest::Approx(1.0 / 0.3));
      ++kept;
    }
  }
  CHECK(static_cast<double>(kept) / 10000 == doctest::Approx(0.3).epsilon(0.05));
  CHECK(dropout(x, 0.7, rng, false).same_storage(x));
  CHECK(dropout(x, 0.0, rng, true).same_storage(x));
  CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ConfigError);
}

TEST_CASE("grad_check examples") {
  Rng rng(0);
  Tensor x = Tensor::uniform({6}, rng, -2, 2);
  CHECK(grad_check([](const Tensor& v) { return sum(sigmoid(v)); }, x) < 1e-6);

  Tensor in = Tensor::uniform({2, 5, 5}, rng, -1, 1);
  Tensor k = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
  std::vector<Tensor> wrt = {in, k};
  CHECK(grad_check([&] { return sum(conv2d(wrt[0], wrt[1], Tensor(), 1, 1)); }, wrt) < 1e-5);
}

TEST_CASE("grad_check detects a wrong adjoint") {
  Rng rng(1);
  Tensor x = Tensor::uniform({2, 4, 4}, rng, -1, 1);
  Tensor k = Tensor::uniform({2, 2, 3, 3}, rng, -1, 1);
  std::vector<Tensor> wrt = {x, k};
  auto loss = [&] {
    Tensor y = conv2d(wrt[0], wrt[1], Tensor(), 1, 1);
    return sum(hadamard(y, y));
  };
  CHECK(grad_check(loss, wrt) < 1e-6);
  debug::set_fault(debug::Fault::kConvBackwardSignFlip);
  const double broken = grad_check(loss, wrt);
  debug::set_fault(debug::Fault::kNone);
  CHECK(broken > 1e-2);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(12);
  ParamList params = {{"a.weight", Tensor::normal({3, 4}, rng, 1.0)}, {"b", Tensor({1}, std::vector<double>{-0.0})}};
  params[0].tensor[0] = 1e-310;  // subnormal survives
  const fs::path path = fs::temp_directory_path() / "egoattn_unit_ckpt.bin";
  save_checkpoint(path, params);
  ParamList back = load_checkpoint(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a.weight");
  CHECK(param_checksum(back) == param_checksum(params));
  CHECK(std::signbit(back[1].tensor[0]));

  ParamList target = {{"a.weight", Tensor({3, 4})}, {"b", Tensor({1})}};
  assign_params(target, back);
  CHECK(param_checksum(target) == param_checksum(params));
  ParamList wrong = {{"a.weight", Tensor({4, 3})}};
  CHECK_THROWS_AS(assign_params(wrong, back), ConfigError);

  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "EGOATTN1";
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("learning rate schedule") {
  const std::vector<std::size_t> at = {2, 5};
  CHECK(scheduled_lr(1.0, 0.1, at, 0) == 1.0);
  CHECK(scheduled_lr(1.0, 0.1, at, 1) == 1.0);
  CHECK(scheduled_lr(1.0, 0.1, at, 2) == doctest::Approx(0.1));
  CHECK(scheduled_lr(1.0, 0.1, at, 7) == doctest::Approx(0.01));
}

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  Tensor p({3}, std::vector<double>{1, 1, 1});
  p.set_requires_grad();
  Adam opt({p});
  p.grad()[0] = 4.0;
  p.grad()[1] = -0.01;
  p.grad()[2] = 0.0;
  opt.step(0.1);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-8));
  CHECK(p[1] == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(p[2] == 1.0);
  CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("sgd with momentum matches a hand recurrence") {
  Tensor p({1}, 0.0);
  p.set_requires_grad();
  Sgd opt({p}, 0.9);
  double v = 0.0, ref = 0.0;
  for (int k = 0; k < 5; ++k) {
    const double g = 1.0 + k;
    p.grad()[0] = g;
    opt.step(0.01);
    v = 0.9 * v + g;
    ref -= 0.01 * v;
    CHECK(p[0] == doctest::Approx(ref).epsilon(1e-14));
  }
}

}  // TEST_SUITE
