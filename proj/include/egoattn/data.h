#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "egoattn/attention.h"
#include "egoattn/tensor.h"

namespace egoattn {

class Rng;

enum class SplitPolicy { kFixed, kLeaveOneSubjectOut };

SplitPolicy parse_split_policy(const std::string& name);
std::string to_string(SplitPolicy p);

/// Synthetic egocentric activity benchmark: every class is a (verb, object)
/// pair, rendered as a hand manipulating one target sprite among distractor
/// sprites over a textured background.
struct DatasetSpec {
  std::size_t num_verbs = 4;    // take, put, stir, shake
  std::size_t num_objects = 6;  // sprite kinds used as activity objects
  std::size_t clips_per_class = 20;
  std::size_t distractors = 2;
  std::size_t frame_size = 32;
  std::size_t frames_per_clip = 30;
  double camera_jitter = 0.0;  // amplitude of the global camera motion, px
  std::uint64_t seed = 0;
  SplitPolicy split = SplitPolicy::kFixed;
  std::size_t num_subjects = 4;  // generator sub-seeds ("subjects")
  std::size_t test_subject = 1;  // held-out subject of the fixed split

  std::size_t num_classes() const { return num_verbs * num_objects; }
  void validate() const;
};

inline constexpr std::size_t kNumSpriteKinds = 8;
inline constexpr std::size_t kMaxVerbs = 4;

std::string verb_name(std::size_t verb);
std::string object_name(std::size_t object);
std::string class_name(const DatasetSpec& spec, std::size_t activity);

struct VideoClip {
  std::vector<Tensor> frames;  // [3,H,W], values in [0,1]
  std::size_t activity_label = 0;
  std::size_t verb = 0;
  std::size_t object = 0;
  std::size_t subject = 0;
  std::string clip_id;
  double fps = 15.0;
  std::vector<Box> target_boxes;  // per frame, frame pixel coordinates; empty when off-frame
};

/// Renders one clip. Deterministic in (spec, verb, object, rng state).
VideoClip generate_clip(const DatasetSpec& spec, std::size_t verb, std::size_t object, Rng& rng,
                        std::size_t subject = 0);

/// Still image of a single sprite kind for backbone pretraining.
Tensor generate_still(const DatasetSpec& spec, std::size_t kind, Rng& rng);

struct StillDataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
};

StillDataset generate_stills(const DatasetSpec& spec, std::size_t num_kinds, std::size_t per_class,
                             std::uint64_t seed);

struct Dataset {
  DatasetSpec spec;
  std::vector<VideoClip> clips;
  /// Named splits -> clip indices. Fixed policy: "train", "test".
  /// Leave-one-subject-out: "subject<k>" for every k.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> splits;

  const std::vector<std::size_t>& split(const std::string& name) const;
  bool has_split(const std::string& name) const;
};

/// Generates clips_per_class clips for every (verb, object); clip i of the
/// dataset is rendered from Rng(spec.seed, i) and belongs to subject i % num_subjects.
Dataset generate_dataset(const DatasetSpec& spec);

/// Indices floor(j*T/n), j = 0..n-1. Throws if T < n.
std::vector<std::size_t> sample_indices(std::size_t num_frames, std::size_t n);
std::vector<Tensor> sample_frames(const VideoClip& clip, std::size_t n);

enum class Mode { kTrain, kEval };

inline constexpr double kCropScales[] = {1.0, 0.875, 0.75, 0.66};

/// One clip-level augmentation draw, applied identically to every frame.
struct AugmentDraw {
  std::size_t corner = 0;  // 0 center, 1 top-left, 2 top-right, 3 bottom-left, 4 bottom-right
  double scale = 1.0;
  bool flip = false;
};

AugmentDraw draw_augment(Rng& rng, Mode mode);

/// Crops the drawn region of frame[C,H,W], resizes it to size x size
/// (bilinear), then mirrors horizontally when flip is set.
Tensor apply_augment(const Tensor& frame, const AugmentDraw& draw, std::size_t size);

/// Same geometry for a flow stack [2S,H,W]: displacements are rescaled with
/// the crop and u channels (even indices) are negated on flip.
Tensor apply_augment_flow(const Tensor& stack, const AugmentDraw& draw, std::size_t size);

Tensor augment(const Tensor& frame, std::size_t size, Rng& rng, Mode mode);

/// Maps a frame-pixel box through the augmentation geometry.
Box augment_box(const Box& box, const AugmentDraw& draw, std::size_t frame_h, std::size_t frame_w,
                std::size_t size);

// --- on-disk format -------------------------------------------------------

void write_ppm(const std::filesystem::path& path, const Tensor& frame);
Tensor read_ppm(const std::filesystem::path& path);

/// frame_%04d.ppm files plus label.txt.
void write_clip(const std::filesystem::path& dir, const VideoClip& clip);
VideoClip read_clip(const std::filesystem::path& dir);

/// <root>/<split>/<class_name>/<clip_id>/ plus manifest files listing clip
/// ids per split and a dataset.txt with the generating spec.
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& root);

}  // namespace egoattn
