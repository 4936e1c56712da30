#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "egoattn/data.h"
#include "egoattn/errors.h"
#include "egoattn/rng.h"
#include "oracles.h"

using namespace egoattn;
namespace fs = std::filesystem;

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.num_verbs = 2;
  s.num_objects = 3;
  s.clips_per_class = 4;
  s.frames_per_clip = 26;
  s.seed = 5;
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("egoattn_unit_" + name);
  fs::remove_all(p);
  return p;
}

bool pixel_in_box(const Box& b, std::size_t x, std::size_t y, double pad) {
  return x + 1 > b.x0 - pad && x < b.x1 + pad && y + 1 > b.y0 - pad && y < b.y1 + pad;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("take carries the target out of frame") {
  DatasetSpec s;
  s.distractors = 0;
  Rng rng(3);
  VideoClip clip = generate_clip(s, 0, 2, rng);
  const std::size_t t = clip.frames.size();
  for (std::size_t k = t * 3 / 4; k < t; ++k) CHECK(clip.target_boxes[k].area() == 0.0);
  CHECK(clip.target_boxes[0].area() > 0.0);
}

TEST_CASE("generation is deterministic") {
  Rng a(9, 4), b(9, 4);
  VideoClip x = generate_clip(small_spec(), 1, 2, a);
  VideoClip y = generate_clip(small_spec(), 1, 2, b);
  REQUIRE(x.frames.size() == y.frames.size());
  for (std::size_t k = 0; k < x.frames.size(); ++k) CHECK(oracle::max_abs_diff(x.frames[k], y.frames[k]) == 0.0);
  CHECK_THROWS_AS(generate_clip(small_spec(), 2, 0, a), IndexError);
}

TEST_CASE("static camera keeps the background constant outside moving content") {
  DatasetSpec s;
  s.distractors = 1;
  Rng rng(21);
  VideoClip clip = generate_clip(s, 2, 1, rng);  // stir: target never moves
  const std::size_t n = s.frame_size, plane = n * n;
  // Pixels that differ between frames must lie under the hand/arm, whose
  // track stays in the lower part of the frame or near the target.
  std::size_t constant = 0, total = 0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      if (pixel_in_box(clip.target_boxes[0], x, y, 1.0)) continue;
      bool same = true;
      for (std::size_t k = 1; k < clip.frames.size() && same; ++k) {
        for (std::size_t c = 0; c < 3; ++c) same = same && clip.frames[k][c * plane + y * n + x] == clip.frames[0][c * plane + y * n + x];
      }
      constant += same;
      ++total;
    }
  }
  CHECK(static_cast<double>(constant) / total > 0.6);
}

TEST_CASE("camera jitter moves the background") {
  DatasetSpec s;
  s.camera_jitter = 2.0;
  Rng rng(22);
  VideoClip clip = generate_clip(s, 2, 1, rng);
  CHECK(oracle::max_abs_diff(clip.frames[0], clip.frames[10]) > 0.05);
}

TEST_CASE("dataset is class balanced with disjoint splits") {
  Dataset ds = generate_dataset(small_spec());
  std::vector<std::size_t> per_class(6, 0);
  for (const auto& c : ds.clips) ++per_class[c.activity_label];
  for (auto n : per_class) CHECK(n == 4);
  std::set<std::size_t> train(ds.split("train").begin(), ds.split("train").end());
  for (auto i : ds.split("test")) CHECK(train.count(i) == 0);
  CHECK(train.size() + ds.split("test").size() == ds.clips.size());

  DatasetSpec loso = small_spec();
  loso.split = SplitPolicy::kLeaveOneSubjectOut;
  Dataset dl = generate_dataset(loso);
  std::set<std::size_t> seen;
  for (const auto& [name, idx] : dl.splits) {
    for (auto i : idx) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == dl.clips.size());
  CHECK_THROWS(ds.split("subject0"));
}

TEST_CASE("sample_indices formula") {
  auto id = sample_indices(25, 25);
  for (std::size_t j = 0; j < 25; ++j) CHECK(id[j] == j);
  auto half = sample_indices(50, 25);
  for (std::size_t j = 0; j < 25; ++j) CHECK(half[j] == 2 * j);
  auto odd = sample_indices(26, 25);
  for (std::size_t j = 0; j < 25; ++j) CHECK(odd[j] == static_cast<std::size_t>(std::floor(j * 26.0 / 25.0)));
  CHECK_THROWS_AS(sample_indices(10, 25), std::invalid_argument);
}

TEST_CASE("augmentation geometry") {
  Rng rng(4);
  Tensor frame = Tensor::uniform({3, 32, 32}, rng, 0, 1);
  AugmentDraw eval;
  CHECK(oracle::max_abs_diff(apply_augment(frame, eval, 32), frame) == 0.0);
  Rng e1(1), e2(2);
  CHECK(oracle::max_abs_diff(augment(frame, 28, e1, Mode::kEval), augment(frame, 28, e2, Mode::kEval)) == 0.0);

  AugmentDraw flip;
  flip.flip = true;
  Tensor twice = apply_augment(apply_augment(frame, flip, 32), flip, 32);
  CHECK(oracle::max_abs_diff(twice, frame) <= 1e-12);

  for (int k = 0; k < 50; ++k) {
    AugmentDraw d = draw_augment(rng, Mode::kTrain);
    CHECK(d.corner < 5);
    CHECK(std::find(std::begin(kCropScales), std::end(kCropScales), d.scale) != std::end(kCropScales));
    CHECK(apply_augment(frame, d, 28).shape() == Shape{3, 28, 28});
  }
}

TEST_CASE("flow augmentation negates u on flip and rescales with the crop") {
  Tensor stack({4, 16, 16}, 0.0);
  for (std::size_t i = 0; i < 256; ++i) {
    stack[i] = 0.25;           // u1
    stack[256 + i] = -0.5;     // v1
  }
  AugmentDraw d;
  d.flip = true;
  d.scale = 0.5;
  Tensor out = apply_augment_flow(stack, d, 16);
  CHECK(out[0] == doctest::Approx(-0.5));
  CHECK(out[256] == doctest::Approx(-1.0));
}

TEST_CASE("augment_box follows the crop and flip") {
  Box b{4, 8, 12, 16};
  AugmentDraw d;
  d.corner = 1;
  d.scale = 0.5;
  d.flip = true;
  Box o = augment_box(b, d, 32, 32, 16);
  CHECK(o.x0 == doctest::Approx(4));
  CHECK(o.x1 == doctest::Approx(12));
  CHECK(o.y0 == doctest::Approx(8));
  CHECK(o.y1 == doctest::Approx(16));
}

TEST_CASE("clip round trip and error handling") {
  Rng rng(6);
  VideoClip clip = generate_clip(small_spec(), 1, 1, rng);
  clip.clip_id = "c00042";
  const fs::path dir = scratch("clip");
  write_clip(dir, clip);
  VideoClip back = read_clip(dir);
  CHECK(back.clip_id == clip.clip_id);
  CHECK(back.activity_label == clip.activity_label);
  CHECK(back.verb == 1);
  REQUIRE(back.frames.size() == clip.frames.size());
  for (std::size_t k = 0; k < clip.frames.size(); ++k) {
    CHECK(oracle::max_abs_diff(back.frames[k], clip.frames[k]) <= 0.5 / 255 + 1e-12);
  }

  const fs::path empty = scratch("empty");
  fs::create_directories(empty);
  CHECK_THROWS_AS(read_clip(empty), IoError);

  {
    std::ofstream os(dir / "label.txt", std::ios::trunc);
    os << "clip_id c00042\nverb 1\n";
  }
  CHECK_THROWS_AS(read_clip(dir), IoError);
  fs::remove_all(dir);
  fs::remove_all(empty);
}

TEST_CASE("dataset round trip preserves splits") {
  const Dataset ds = generate_dataset(small_spec());
  const fs::path root = scratch("dataset");
  write_dataset(root, ds);
  const Dataset back = read_dataset(root);
  CHECK(back.clips.size() == ds.clips.size());
  CHECK(back.split("test") == ds.split("test"));
  CHECK(back.spec.num_objects == 3);
  fs::remove_all(root);
}

TEST_CASE("stills cover each kind equally") {
  StillDataset s = generate_stills(small_spec(), 8, 3, 1);
  CHECK(s.images.size() == 24);
  for (std::size_t k = 0; k < 8; ++k) CHECK(std::count(s.labels.begin(), s.labels.end(), k) == 3);
  CHECK_THROWS_AS(generate_stills(small_spec(), 9, 1, 1), ConfigError);
}

}  // TEST_SUITE
