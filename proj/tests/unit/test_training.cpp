#include <doctest.h>

#include <cmath>
#include <limits>

#include "egoattn/checkpoint.h"
#include "egoattn/config.h"
#include "egoattn/errors.h"
#include "egoattn/ops.h"
#include "egoattn/rng.h"
#include "egoattn/training.h"
#include "oracles.h"

using namespace egoattn;

namespace {

DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.num_verbs = 2;
  s.num_objects = 2;
  s.clips_per_class = 3;
  s.frames_per_clip = 26;
  s.distractors = 1;
  s.seed = 3;
  return s;
}

BackboneConfig tiny_backbone() {
  BackboneConfig b;
  b.input_size = 28;
  b.channels = {4, 6};
  b.strides = {2, 2};
  return b;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.epochs_factor = 1;
  c.frames = 4;
  c.hidden = 3;
  c.lrcn_hidden = 5;
  c.eval_stacks = 5;
  c.val_every = 0;
  c.stage1 = {2, 1e-2, 0.1, {}, OptimizerKind::kAdam, 4};
  c.stage2 = {2, 1e-2, 0.1, {}, OptimizerKind::kAdam, 4};
  c.flow = {2, 1e-2, 0.5, {}, OptimizerKind::kSgd, 4};
  c.joint = {1, 1e-3, 0.1, {}, OptimizerKind::kSgd, 4};
  return c;
}

const Dataset& tiny_data() {
  static const Dataset d = generate_dataset(tiny_spec());
  return d;
}

const FlowBank& tiny_bank() {
  static const FlowBank b = compute_flow_bank(tiny_data(), FlowKind::kWarp);
  return b;
}

RgbModel tiny_rgb(bool attention = true, Recurrent rec = Recurrent::kConvLSTM) {
  TrainConfig c = tiny_train();
  c.attention = attention;
  c.recurrent = rec;
  Rng rng(1);
  BackboneNet net(tiny_backbone(), rng);
  return RgbModel(net, c, tiny_spec().num_classes(), rng);
}

std::uint64_t checksum(const ParamList& p) { return param_checksum(p); }

}  // namespace

TEST_SUITE("training") {

TEST_CASE("epoch and decay scaling") {
  TrainConfig c;
  CHECK(c.scaled_epochs(c.stage1) == 20);
  CHECK(c.scaled_decays(c.stage1) == std::vector<std::size_t>{3, 8, 15});
  CHECK(c.scaled_epochs(c.flow) == 75);
  c.epochs_factor = 1000;
  CHECK(c.scaled_epochs(c.stage2) == 1);
  StageConfig none{0, 1e-3, 0.1, {}, OptimizerKind::kAdam, 1};
  CHECK(c.scaled_epochs(none) == 0);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.stage1.decay_epochs = {75, 25};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.stage1.decay_epochs = {25, 250};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.stage2.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.flow.weight_decay = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("object merging folds labels onto the first listed object") {
  TrainConfig c;
  c.merge_objects = {1, 3};
  DatasetSpec s;
  VideoClip clip;
  clip.verb = 2;
  clip.object = 3;
  CHECK(clip_label(clip, s, c) == 2 * s.num_objects + 1);
  clip.object = 2;
  CHECK(clip_label(clip, s, c) == 2 * s.num_objects + 2);
}

TEST_CASE("stage 1 leaves the backbone bit-unchanged") {
  RgbModel m = tiny_rgb();
  const auto before_bb = checksum(m.backbone.params());
  const auto before_cell = checksum(m.cell.params());
  Metrics r = train_stage1(m, tiny_data(), tiny_train());
  CHECK(r.epochs.size() == 2);
  CHECK(checksum(m.backbone.params()) == before_bb);
  CHECK(checksum(m.cell.params()) != before_cell);
}

TEST_CASE("zero epochs leave the model unchanged") {
  RgbModel m = tiny_rgb();
  const auto before = checksum(m.params());
  TrainConfig c = tiny_train();
  c.stage1.epochs = 0;
  Metrics r = train_stage1(m, tiny_data(), c);
  CHECK(r.epochs.empty());
  CHECK(checksum(m.params()) == before);
}

TEST_CASE("stage 2 trains the last block and head only, and moves attention") {
  RgbModel m = tiny_rgb();
  train_stage1(m, tiny_data(), tiny_train());
  const auto block0 = checksum(m.backbone.group("block0"));
  const auto last = checksum(m.backbone.group("last_block"));
  const auto head = checksum(m.backbone.group("head"));
  const VideoClip& probe = tiny_data().clips[0];
  const auto frames = prepare_frames(probe, 4, AugmentDraw{}, 28);
  const auto maps_before = m.encode(frames).maps;

  train_stage2(m, tiny_data(), tiny_train());
  CHECK(checksum(m.backbone.group("block0")) == block0);
  CHECK(checksum(m.backbone.group("last_block")) != last);
  CHECK(checksum(m.backbone.group("head")) != head);
  const auto maps_after = m.encode(frames).maps;
  double drift = 0.0;
  for (std::size_t k = 0; k < maps_before.size(); ++k) drift += oracle::max_abs_diff(maps_before[k].prob, maps_after[k].prob);
  CHECK(drift > 0.0);
}

TEST_CASE("the loss gradient reaches the head weights through attention") {
  RgbModel m = tiny_rgb();
  set_trainable(m.backbone.group("head"), true);
  const auto frames = prepare_frames(tiny_data().clips[1], 4, AugmentDraw{}, 28);
  Rng drop(0);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = cross_entropy(classify_clip(m.encode(frames).descriptor, m.classifier, 0.0, drop, false), 1);
  }
  tape.backward(loss);
  double norm = 0.0;
  for (double g : m.backbone.head_weight().grad()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("training aborts on divergence and restores the epoch start") {
  RgbModel m = tiny_rgb();
  m.classifier.weight[0] = std::numeric_limits<double>::quiet_NaN();
  const auto before = checksum(m.params());
  CHECK_THROWS_AS(train_stage1(m, tiny_data(), tiny_train()), DivergenceError);
  CHECK(checksum(m.params()) == before);
}

TEST_CASE("evaluation is deterministic and consistent with its confusion matrix") {
  RgbModel m = tiny_rgb();
  const auto& test = tiny_data().split("test");
  const Evaluation a = evaluate_rgb(m, tiny_data(), test, tiny_train());
  const Evaluation b = evaluate_rgb(m, tiny_data(), test, tiny_train());
  CHECK(a.predictions == b.predictions);
  CHECK(a.loss == b.loss);
  for (std::size_t k = 0; k < a.logits.size(); ++k) CHECK(oracle::max_abs_diff(a.logits[k], b.logits[k]) == 0.0);
  std::size_t trace = 0, total = 0;
  for (std::size_t i = 0; i < a.confusion.size(); ++i) {
    for (std::size_t j = 0; j < a.confusion[i].size(); ++j) total += a.confusion[i][j];
    trace += a.confusion[i][i];
  }
  CHECK(total == test.size());
  CHECK(static_cast<double>(trace) / total == a.accuracy());
}

TEST_CASE("a random backbone is near chance on balanced stills") {
  Rng rng(12);
  BackboneNet net(tiny_backbone(), rng);
  const StillDataset stills = generate_stills(tiny_spec(), 8, 40, 4);
  const double acc = evaluate_stills(net, stills).accuracy();
  const double n = 320.0, p = 1.0 / 8.0;
  CHECK(std::abs(acc - p) <= 3.0 * std::sqrt(p * (1 - p) / n) + 1e-12);
}

TEST_CASE("flow evaluation averages five stacks") {
  Rng rng(2);
  BackboneNet net(tiny_backbone(), rng);
  FlowModel fm(net, 5, tiny_spec().num_classes(), rng);
  const auto& flows = tiny_bank().flows[0];
  TrainConfig c = tiny_train();
  const Tensor avg = flow_logits(fm, flows, c);
  Tensor manual(avg.shape(), 0.0);
  for (std::size_t center : stack_centers(flows.size(), 5, 5)) {
    const Tensor s = prepare_stack(flows, center, 5, AugmentDraw{}, 28);
    const Tensor l = linear(fm.descriptor(s), fm.classifier.weight, fm.classifier.bias);
    for (std::size_t i = 0; i < manual.numel(); ++i) manual[i] += l[i] / 5.0;
  }
  CHECK(oracle::max_abs_diff(avg, manual) <= 1e-12);
}

TEST_CASE("flow training normalises its input from training statistics") {
  Rng rng(2);
  BackboneNet net(tiny_backbone(), rng);
  FlowModel fm(net, 5, tiny_spec().num_classes(), rng);
  train_flow_stream(fm, tiny_data(), tiny_bank(), tiny_train());
  const auto p = fm.net.params();
  const Tensor sd = p[1].tensor;
  CHECK(p[1].name == "input.std");
  CHECK(sd.numel() == 10);
  for (double v : sd.data()) CHECK(v != 1.0);
}

TEST_CASE("average fusion") {
  const Tensor a({2}, std::vector<double>{2, 0}), b({2}, std::vector<double>{0, 2});
  const Tensor f = fuse_average(a, b);
  CHECK(f[0] == 1.0);
  CHECK(f[1] == 1.0);
  CHECK(oracle::max_abs_diff(fuse_average(a, a), a) == 0.0);
  CHECK_THROWS_AS(fuse_average(a, Tensor({3})), DimensionError);

  // Search a small grid for a pair whose fused argmax differs from both.
  bool witness = false;
  for (int x0 = -2; x0 <= 2 && !witness; ++x0)
    for (int x1 = -2; x1 <= 2 && !witness; ++x1)
      for (int y0 = -2; y0 <= 2 && !witness; ++y0)
        for (int y1 = -2; y1 <= 2 && !witness; ++y1) {
          const Tensor r({3}, std::vector<double>{static_cast<double>(x0), static_cast<double>(x1), 1.5});
          const Tensor s({3}, std::vector<double>{static_cast<double>(y0), static_cast<double>(y1), 1.5});
          const std::size_t w = winning_class(fuse_average(r, s));
          witness = w != winning_class(r) && w != winning_class(s);
        }
  CHECK(witness);
}

TEST_CASE("joint model starts as average fusion") {
  RgbModel rgb = tiny_rgb();
  Rng rng(5);
  FlowModel fm(rgb.backbone, 5, tiny_spec().num_classes(), rng);
  JointModel jm(rgb.clone(), fm.clone());
  CHECK(jm.head.in_features() == rgb.descriptor_size() + fm.descriptor_size());
  CHECK(jm.head.in_features() == 3 + 6);
  const TrainConfig c = tiny_train();
  const VideoClip& clip = tiny_data().clips[2];
  const auto& flows = tiny_bank().flows[2];
  const Tensor expect = fuse_average(rgb_logits(rgb, clip, c), flow_logits(fm, flows, c));
  CHECK(oracle::max_abs_diff(joint_logits(jm, clip, flows, c), expect) <= 1e-12);

  TrainConfig z = c;
  z.joint.epochs = 0;
  Metrics m = train_joint(jm, tiny_data(), tiny_bank(), z);
  CHECK(m.epochs.empty());
}

TEST_CASE("LRCN model trains and evaluates") {
  RgbModel m = tiny_rgb(false, Recurrent::kLrcn);
  CHECK(m.descriptor_size() == 5);
  Metrics r = train_stage1(m, tiny_data(), tiny_train());
  CHECK(std::isfinite(r.epochs.back().train_loss));
}

}  // TEST_SUITE

TEST_SUITE("config") {

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(parse_run_config("stage1.epoch = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("stage1.epochs = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("stage1.epochs\n"), ConfigError);
  RunConfig c;
  CHECK_THROWS_AS(set_config_value(c, "train.recurrent", "gru"), ConfigError);
}

TEST_CASE("values, comments and overrides") {
  RunConfig c = parse_run_config("# desk\nstage1.epochs = 7\n\ntrain.attention = false\nbackbone.channels = 4,8\n");
  CHECK(c.train.stage1.epochs == 7);
  CHECK(!c.train.attention);
  CHECK(c.backbone.channels == std::vector<std::size_t>{4, 8});
  set_config_value(c, "stage1.epochs", "9");
  CHECK(c.train.stage1.epochs == 9);
}

TEST_CASE("resolved text round-trips") {
  RunConfig c;
  set_config_value(c, "stage2.lr", "0.000123456789");
  set_config_value(c, "train.merge_objects", "0,1,2");
  set_config_value(c, "tvl1.lambda", "0.1");
  const std::string text = to_text(c);
  const RunConfig back = parse_run_config(text);
  CHECK(to_text(back) == text);
  CHECK(back.train.stage2.lr == 0.000123456789);
  CHECK(back.train.merge_objects == std::vector<std::size_t>{0, 1, 2});
}

}  // TEST_SUITE
