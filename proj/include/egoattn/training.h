#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "egoattn/attention.h"
#include "egoattn/backbone.h"
#include "egoattn/checkpoint.h"
#include "egoattn/convlstm.h"
#include "egoattn/data.h"
#include "egoattn/flow.h"
#include "egoattn/layers.h"

namespace egoattn {

class Rng;

enum class Recurrent { kConvLSTM, kLrcn };
enum class FlowKind { kRaw, kWarp };
enum class Fusion { kAverage, kJoint };
enum class OptimizerKind { kAdam, kSgd };

Recurrent parse_recurrent(const std::string& name);
FlowKind parse_flow_kind(const std::string& name);
Fusion parse_fusion(const std::string& name);
OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(Recurrent v);
std::string to_string(FlowKind v);
std::string to_string(Fusion v);
std::string to_string(OptimizerKind v);

/// One training phase. Epoch counts and decay thresholds are in paper units;
/// TrainConfig::epochs_factor rescales them.
struct StageConfig {
  std::size_t epochs = 0;
  double lr = 1e-3;
  double decay = 0.1;
  std::vector<std::size_t> decay_epochs;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t batch = 32;
  bool decay_every_epoch = false;  // multiply by `decay` after every epoch
  double weight_decay = 0.0;
};

struct TrainConfig {
  StageConfig pretrain{100, 1e-3, 0.1, {}, OptimizerKind::kAdam, 32};
  StageConfig stage1{200, 1e-3, 0.1, {25, 75, 150}, OptimizerKind::kAdam, 32};
  StageConfig stage2{150, 1e-4, 0.1, {25, 75}, OptimizerKind::kAdam, 32};
  StageConfig flow{750, 1e-2, 0.5, {150, 300, 500}, OptimizerKind::kSgd, 32};
  StageConfig joint{250, 1e-2, 0.1, {50, 100, 150, 200}, OptimizerKind::kSgd, 32};

  double epochs_factor = 10.0;
  double dropout = 0.7;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  std::size_t frames = 25;       // frames sampled uniformly per clip
  std::size_t eval_stacks = 5;   // flow stacks averaged at evaluation
  std::size_t stack_depth = kStackDepth;
  std::size_t hidden = 64;       // convLSTM hidden channels
  std::size_t lstm_kernel = 3;
  std::size_t lrcn_hidden = 64;
  std::size_t pretrain_per_class = 200;

  bool attention = true;
  Recurrent recurrent = Recurrent::kConvLSTM;
  FlowKind flow_kind = FlowKind::kWarp;
  Fusion fusion = Fusion::kJoint;
  GateVariant gate = GateVariant::kStandard;

  /// Object indices folded into one meta-object (the first listed) when labels are formed.
  std::vector<std::size_t> merge_objects;
  std::uint64_t seed = 0;
  std::size_t val_every = 1;  // evaluate the validation split every n epochs (0: never)
  std::string val_split = "test";
  std::string train_split = "train";

  std::size_t scaled_epochs(const StageConfig& s) const;
  std::vector<std::size_t> scaled_decays(const StageConfig& s) const;
  double lr_at(const StageConfig& s, std::size_t epoch) const;
  void validate() const;
};

/// Activity label after object merging.
std::size_t clip_label(const VideoClip& clip, const DatasetSpec& spec, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;      // NaN when not evaluated this epoch
  double val_accuracy = 0.0;  // NaN when not evaluated this epoch
};

struct Evaluation {
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double loss = 0.0;
  std::vector<std::size_t> predictions;
  std::vector<Tensor> logits;

  std::size_t total() const;
  std::size_t correct() const;
  double accuracy() const;
  std::vector<double> per_class_accuracy() const;  // NaN for classes without samples
};

struct Metrics {
  std::vector<EpochRecord> epochs;
  Evaluation final;
};

void write_metrics_csv(const std::filesystem::path& path, const Metrics& m);
void write_confusion_csv(const std::filesystem::path& path, const Evaluation& e);
void write_summary_json(const std::filesystem::path& path, const std::string& stage, const Metrics& m);

// --- models ---------------------------------------------------------------

/// Appearance stream: backbone -> (optional) spatial attention -> convLSTM or
/// LRCN -> dropout -> linear classifier.
struct RgbModel {
  BackboneNet backbone;
  ConvLSTMCell cell;
  LSTMCell lstm;
  Linear classifier;
  bool attention = true;
  Recurrent recurrent = Recurrent::kConvLSTM;

  RgbModel() = default;
  RgbModel(BackboneNet net, const TrainConfig& cfg, std::size_t num_classes, Rng& rng);

  struct Encoded {
    Tensor descriptor;
    std::vector<AttentionMap> maps;
  };
  /// Frames already cropped to the backbone input size.
  Encoded encode(std::span<const Tensor> frames) const;
  std::size_t descriptor_size() const;
  ParamList params() const;
  RgbModel clone() const;
};

/// Temporal stream: backbone over a stacked-flow input, GAP, linear classifier.
struct FlowModel {
  BackboneNet net;
  Linear classifier;

  FlowModel() = default;
  FlowModel(const BackboneNet& rgb, std::size_t stack_depth, std::size_t num_classes, Rng& rng);

  Tensor descriptor(const Tensor& stack) const;
  std::size_t descriptor_size() const { return net.config().feature_channels(); }
  ParamList params() const;
  FlowModel clone() const;
};

/// Two streams whose descriptors are concatenated under a new linear head.
struct JointModel {
  RgbModel rgb;
  FlowModel flow;
  Linear head;

  JointModel() = default;
  /// The head starts as [W_rgb/2, W_flow/2] with the mean bias, so before any
  /// training its logits equal average fusion of the two streams.
  JointModel(RgbModel rgb_model, FlowModel flow_model);
  ParamList params() const;
};

void set_trainable(const ParamList& params, bool value);

// --- data plumbing --------------------------------------------------------

/// Sampled, cropped frames of a clip at the backbone input size.
std::vector<Tensor> prepare_frames(const VideoClip& clip, std::size_t n, const AugmentDraw& draw,
                                   std::size_t size);

/// All consecutive-frame flows of every clip in a dataset.
struct FlowBank {
  FlowKind kind = FlowKind::kRaw;
  std::vector<std::vector<FlowField>> flows;  // indexed like Dataset::clips
};

/// Computes (or, with a cache directory, loads) the flows of every clip.
FlowBank compute_flow_bank(const Dataset& data, FlowKind kind, const TvL1Params& params = {},
                           const std::filesystem::path& cache_dir = {});

Tensor prepare_stack(const std::vector<FlowField>& flows, std::size_t center, std::size_t depth,
                     const AugmentDraw& draw, std::size_t size);

// --- stages ---------------------------------------------------------------

/// Supervised pretraining of the backbone head and blocks on sprite stills;
/// sets the input normalization from the training images.
Metrics pretrain_backbone(BackboneNet& net, const StillDataset& train, const StillDataset& val,
                          const TrainConfig& cfg);

/// Trains convLSTM (or LSTM) and classifier; backbone frozen.
Metrics train_stage1(RgbModel& model, const Dataset& data, const TrainConfig& cfg);
/// As stage 1, with the backbone's last block and head also trained.
Metrics train_stage2(RgbModel& model, const Dataset& data, const TrainConfig& cfg);
Metrics train_flow_stream(FlowModel& model, const Dataset& data, const FlowBank& bank,
                          const TrainConfig& cfg);
Metrics train_joint(JointModel& model, const Dataset& data, const FlowBank& bank,
                    const TrainConfig& cfg);

Tensor fuse_average(const Tensor& rgb_logits, const Tensor& flow_logits);

// --- evaluation -----------------------------------------------------------

Tensor rgb_logits(const RgbModel& model, const VideoClip& clip, const TrainConfig& cfg);
/// Mean of the classifier scores over cfg.eval_stacks uniformly spread stacks.
Tensor flow_logits(const FlowModel& model, const std::vector<FlowField>& flows, const TrainConfig& cfg);
Tensor joint_logits(const JointModel& model, const VideoClip& clip,
                    const std::vector<FlowField>& flows, const TrainConfig& cfg);

Evaluation evaluate_rgb(const RgbModel& model, const Dataset& data, const std::vector<std::size_t>& idx,
                        const TrainConfig& cfg);
Evaluation evaluate_flow(const FlowModel& model, const Dataset& data, const FlowBank& bank,
                         const std::vector<std::size_t>& idx, const TrainConfig& cfg);
Evaluation evaluate_average_fusion(const RgbModel& rgb, const FlowModel& flow, const Dataset& data,
                                   const FlowBank& bank, const std::vector<std::size_t>& idx,
                                   const TrainConfig& cfg);
Evaluation evaluate_joint(const JointModel& model, const Dataset& data, const FlowBank& bank,
                          const std::vector<std::size_t>& idx, const TrainConfig& cfg);
Evaluation evaluate_stills(const BackboneNet& net, const StillDataset& stills);

/// Mean attention mass inside the target box over the sampled frames in
/// which the target is visible (evaluation crop). NaN if never visible.
double attention_in_box(const RgbModel& model, const VideoClip& clip, const TrainConfig& cfg);
/// Same frames, uniform map.
double uniform_in_box(const RgbModel& model, const VideoClip& clip, const TrainConfig& cfg);

}  // namespace egoattn
