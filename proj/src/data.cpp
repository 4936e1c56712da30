#include "egoattn/data.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "egoattn/errors.h"
#include "egoattn/rng.h"

namespace egoattn {

namespace fs = std::filesystem;

SplitPolicy parse_split_policy(const std::string& name) {
  if (name == "fixed") return SplitPolicy::kFixed;
  if (name == "loso") return SplitPolicy::kLeaveOneSubjectOut;
  throw ConfigError("unknown split policy '" + name + "' (expected fixed|loso)");
}

std::string to_string(SplitPolicy p) { return p == SplitPolicy::kFixed ? "fixed" : "loso"; }

void DatasetSpec::validate() const {
  if (num_verbs == 0 || num_verbs > kMaxVerbs) {
    throw ConfigError("num_verbs must lie in [1," + std::to_string(kMaxVerbs) + "]");
  }
  if (num_objects == 0 || num_objects > kNumSpriteKinds) {
    throw ConfigError("num_objects must lie in [1," + std::to_string(kNumSpriteKinds) + "]");
  }
  if (distractors + 1 > num_objects && distractors > 0) {
    throw ConfigError("distractors must be fewer than num_objects");
  }
  if (frames_per_clip < 26) throw ConfigError("frames_per_clip must be at least 26");
  if (frame_size < 16) throw ConfigError("frame_size must be at least 16");
  if (num_subjects == 0 || test_subject >= num_subjects) {
    throw ConfigError("test_subject must name one of num_subjects subjects");
  }
  if (clips_per_class == 0) throw ConfigError("clips_per_class must be positive");
}

std::string verb_name(std::size_t verb) {
  static const std::array<const char*, kMaxVerbs> names = {"take", "put", "stir", "shake"};
  return verb < names.size() ? names[verb] : "verb" + std::to_string(verb);
}

std::string object_name(std::size_t object) {
  static const std::array<const char*, kNumSpriteKinds> names = {
      "block", "ball", "cone", "cross", "ring", "gem", "bar", "frame"};
  return object < names.size() ? names[object] : "object" + std::to_string(object);
}

std::string class_name(const DatasetSpec& spec, std::size_t activity) {
  return verb_name(activity / spec.num_objects) + "_" + object_name(activity % spec.num_objects);
}

namespace {

struct Rgb {
  double r, g, b;
};

constexpr std::array<Rgb, kNumSpriteKinds> kSpriteColors = {{
    {0.90, 0.15, 0.15},
    {0.15, 0.80, 0.20},
    {0.20, 0.30, 0.95},
    {0.95, 0.90, 0.15},
    {0.10, 0.85, 0.90},
    {0.85, 0.20, 0.85},
    {1.00, 0.55, 0.05},
    {0.95, 0.95, 0.95},
}};

constexpr Rgb kSkin{0.96, 0.76, 0.62};
constexpr double kObjectRadius = 3.5;
// The manipulated object is nearer the camera than the rest of the scene.
constexpr double kTargetScale = 1.3;
constexpr double kDistractorScale = 0.8;
constexpr double kHandRadius = 2.4;
constexpr double kArmHalfWidth = 1.2;
constexpr int kSuper = 3;  // supersampling per axis

bool sprite_contains(std::size_t kind, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (kind) {
    case 0: return ax <= r && ay <= r;
    case 1: return dx * dx + dy * dy <= r * r;
    case 2: return dy >= -r && dy <= r && ax <= (dy + r) / 2.0;
    case 3: return (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r);
    case 4: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    case 5: return ax + ay <= r * 1.2;
    case 6: return ax <= r && ay <= r / 2.5;
    case 7: {
      const double m = std::max(ax, ay);
      return m <= r && m >= 0.55 * r;
    }
    default: return false;
  }
}

struct Point {
  double x = 0, y = 0;
};

double smoothstep(double a, double b, double s) {
  if (s <= a) return 0.0;
  if (s >= b) return 1.0;
  const double t = (s - a) / (b - a);
  return t * t * (3.0 - 2.0 * t);
}

Point lerp(Point a, Point b, double t) { return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t}; }

struct Background {
  Rgb base;
  std::array<double, 3> phase;
  std::array<double, 3> amp;
  std::array<double, 6> freq;

  static Background draw(Rng& rng, std::size_t subject) {
    Background b;
    const double level = 0.34 + 0.05 * static_cast<double>(subject % 4);
    b.base = {level + 0.04, level, level - 0.05};
    for (auto& p : b.phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    b.amp = {rng.uniform(0.06, 0.10), rng.uniform(0.04, 0.08), rng.uniform(0.02, 0.05)};
    b.freq = {rng.uniform(0.35, 0.55), rng.uniform(0.20, 0.40),  rng.uniform(-0.35, -0.15),
              rng.uniform(0.45, 0.65), rng.uniform(0.60, 0.90), rng.uniform(-0.80, -0.50)};
    return b;
  }

  double value(double x, double y) const {
    return amp[0] * std::sin(freq[0] * x + freq[1] * y + phase[0]) +
           amp[1] * std::sin(freq[2] * x + freq[3] * y + phase[1]) +
           amp[2] * std::sin(freq[4] * x + freq[5] * y + phase[2]);
  }
};

struct SpriteInstance {
  std::size_t kind;
  Point center;
  double radius;
  bool visible = true;
};

struct HandPose {
  bool visible = false;
  Point hand;
  Point shoulder;
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Renders world content sampled at pixel + camera offset.
Tensor render(std::size_t size, const Background& bg, std::span<const SpriteInstance> sprites,
              const HandPose& hand, Point camera) {
  Tensor frame({3, size, size});
  const std::size_t plane = size * size;
  const double inv = 1.0 / (kSuper * kSuper);
  for (std::size_t py = 0; py < size; ++py) {
    for (std::size_t px = 0; px < size; ++px) {
      double acc[3] = {0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double wx = px + (sx + 0.5) / kSuper + camera.x;
          const double wy = py + (sy + 0.5) / kSuper + camera.y;
          const double t = bg.value(wx, wy);
          Rgb c{bg.base.r + t, bg.base.g + t, bg.base.b + t};
          for (const auto& s : sprites) {
            if (s.visible && sprite_contains(s.kind, wx - s.center.x, wy - s.center.y, s.radius)) {
              c = kSpriteColors[s.kind];
            }
          }
          if (hand.visible) {
            const double dx = wx - hand.hand.x, dy = wy - hand.hand.y;
            if (dx * dx + dy * dy <= kHandRadius * kHandRadius ||
                segment_distance({wx, wy}, hand.hand, hand.shoulder) <= kArmHalfWidth) {
              c = kSkin;
            }
          }
          acc[0] += c.r;
          acc[1] += c.g;
          acc[2] += c.b;
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        frame[ch * plane + py * size + px] = std::clamp(acc[ch] * inv, 0.0, 1.0);
      }
    }
  }
  return frame;
}

std::vector<Point> place_objects(std::size_t count, double size, Rng& rng) {
  const double lo = 7.0, hi = size - 7.0, min_sep = 10.0;
  std::vector<Point> pts;
  for (int attempt = 0; pts.size() < count && attempt < 10000; ++attempt) {
    Point p{rng.uniform(lo, hi), rng.uniform(lo, hi * 0.85)};
    bool ok = true;
    for (const auto& q : pts) {
      if (std::hypot(p.x - q.x, p.y - q.y) < min_sep) ok = false;
    }
    if (ok || attempt > 5000) pts.push_back(p);
  }
  return pts;
}

Point camera_offset(const std::array<double, 8>& params, double amplitude, double t) {
  if (amplitude == 0.0) return {0.0, 0.0};
  const double tau = 2.0 * std::numbers::pi;
  return {amplitude * (0.6 * std::sin(tau * t / params[0] + params[1]) +
                       0.4 * std::sin(tau * t / params[2] + params[3])),
          amplitude * (0.6 * std::sin(tau * t / params[4] + params[5]) +
                       0.4 * std::sin(tau * t / params[6] + params[7]))};
}

}  // namespace

VideoClip generate_clip(const DatasetSpec& spec, std::size_t verb, std::size_t object, Rng& rng,
                        std::size_t subject) {
  spec.validate();
  if (verb >= spec.num_verbs || object >= spec.num_objects) {
    throw IndexError("verb/object (" + std::to_string(verb) + "," + std::to_string(object) +
                     ") outside dataset spec");
  }
  const double size = static_cast<double>(spec.frame_size);
  const std::size_t T = spec.frames_per_clip;
  const Background bg = Background::draw(rng, subject);

  std::vector<std::size_t> others;
  for (std::size_t k = 0; k < spec.num_objects; ++k) {
    if (k != object) others.push_back(k);
  }
  for (std::size_t k = others.size(); k > 1; --k) std::swap(others[k - 1], others[rng.below(k)]);
  const auto pts = place_objects(spec.distractors + 1, size, rng);

  std::vector<SpriteInstance> sprites;
  for (std::size_t d = 0; d < spec.distractors; ++d) {
    sprites.push_back({others[d], pts[d + 1], kObjectRadius * kDistractorScale * rng.uniform(0.9, 1.1)});
  }
  const Point home = pts[0];
  sprites.push_back({object, home, kObjectRadius * kTargetScale * rng.uniform(0.95, 1.1)});
  SpriteInstance& target = sprites.back();

  const double margin = kObjectRadius * kTargetScale + spec.camera_jitter + 3.0;
  const Point rest{rng.uniform(0.35, 0.75) * size, size + 8.0 + spec.camera_jitter};
  const Point shoulder{rng.uniform(0.45, 0.65) * size, size + 14.0 + spec.camera_jitter};
  const double speed = 1.0 + 0.06 * static_cast<double>(subject % 4);  // subject style
  const double approach_end = 0.3 / speed;

  // Exit / entry point: straight off the nearest of the top, left and right edges.
  const double to_left = home.x, to_right = size - home.x, to_top = home.y;
  Point exit = home;
  if (to_top <= std::min(to_left, to_right)) {
    exit.y = -margin;
  } else if (to_left < to_right) {
    exit.x = -margin;
  } else {
    exit.x = size + margin;
  }
  const Point entry{home.x, size + margin};

  std::array<double, 8> cam{};
  for (std::size_t k = 0; k < cam.size(); k += 2) {
    cam[k] = rng.uniform(k % 4 == 0 ? 8.0 : 4.0, k % 4 == 0 ? 14.0 : 7.0);
    cam[k + 1] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double stir_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double grip = target.radius + 0.5;

  VideoClip clip;
  clip.verb = verb;
  clip.object = object;
  clip.subject = subject;
  clip.activity_label = verb * spec.num_objects + object;
  for (std::size_t t = 0; t < T; ++t) {
    const double s = static_cast<double>(t) / static_cast<double>(T - 1);
    HandPose hand;
    hand.visible = true;
    hand.shoulder = shoulder;
    Point obj = home;
    switch (verb) {
      case 0: {  // take: approach, grasp, carry off-frame by s = 0.72
        const Point grasp{home.x, home.y + grip};
        hand.hand = lerp(rest, grasp, smoothstep(0.0, approach_end, s));
        const double carry = smoothstep(0.42, 0.72, s);
        obj = lerp(home, exit, carry);
        if (s > 0.42) hand.hand = {obj.x, obj.y + grip};
        target.visible = s <= 0.72;
        hand.visible = s <= 0.72;
        break;
      }
      case 1: {  // put: carry in from below, release, withdraw
        const double carry = smoothstep(0.0, 0.45, s);
        obj = lerp(entry, home, carry);
        const Point grasp{obj.x, obj.y + grip};
        hand.hand = s < 0.55 ? grasp : lerp(grasp, rest, smoothstep(0.55, 0.85, s));
        break;
      }
      case 2: {  // stir: approach, then circle over the object
        const double theta = stir_phase + 2.0 * std::numbers::pi * 3.0 *
                                               std::max(0.0, s - approach_end) /
                                               (1.0 - approach_end);
        const Point orbit{home.x + 3.5 * std::cos(theta), home.y + 3.5 * std::sin(theta)};
        hand.hand = s < approach_end ? lerp(rest, orbit, smoothstep(0.0, approach_end, s)) : orbit;
        break;
      }
      default: {  // shake: approach, grasp, oscillate vertically
        const double phase = std::max(0.0, s - approach_end) / (0.9 - approach_end);
        const double dy = s < 0.9 ? 3.0 * std::sin(2.0 * std::numbers::pi * 4.0 * phase) : 0.0;
        obj = {home.x, home.y + dy};
        const Point grasp{obj.x, obj.y + grip};
        hand.hand = s < approach_end ? lerp(rest, grasp, smoothstep(0.0, approach_end, s)) : grasp;
        break;
      }
    }
    target.center = obj;
    const Point camera = camera_offset(cam, spec.camera_jitter, static_cast<double>(t));
    clip.frames.push_back(render(spec.frame_size, bg, sprites, hand, camera));

    Box box;
    if (target.visible) {
      const double r = target.radius;
      box = {std::max(0.0, obj.x - r - camera.x), std::max(0.0, obj.y - r - camera.y),
             std::min(size, obj.x + r - camera.x), std::min(size, obj.y + r - camera.y)};
      if (box.x1 <= box.x0 || box.y1 <= box.y0) box = Box{};
    }
    clip.target_boxes.push_back(box);
  }
  return clip;
}

Tensor generate_still(const DatasetSpec& spec, std::size_t kind, Rng& rng) {
  if (kind >= kNumSpriteKinds) throw IndexError("sprite kind " + std::to_string(kind) + " out of range");
  const double size = static_cast<double>(spec.frame_size);
  const Background bg = Background::draw(rng, rng.below(4));
  std::vector<SpriteInstance> sprites{
      {kind, {rng.uniform(6.0, size - 6.0), rng.uniform(6.0, size - 6.0)},
       kObjectRadius * rng.uniform(0.7, 1.45)}};
  HandPose hand;
  if (rng.bernoulli(0.5)) {
    hand.visible = true;
    hand.hand = {rng.uniform(4.0, size - 4.0), rng.uniform(8.0, size - 2.0)};
    hand.shoulder = {rng.uniform(0.3, 0.7) * size, size + 14.0};
  }
  return render(spec.frame_size, bg, sprites, hand, {0.0, 0.0});
}

StillDataset generate_stills(const DatasetSpec& spec, std::size_t num_kinds, std::size_t per_class,
                             std::uint64_t seed) {
  if (num_kinds == 0 || num_kinds > kNumSpriteKinds) {
    throw ConfigError("still dataset needs between 1 and " + std::to_string(kNumSpriteKinds) +
                      " sprite kinds");
  }
  StillDataset out;
  std::size_t index = 0;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t k = 0; k < num_kinds; ++k) {
      Rng rng(seed ^ 0x5715ULL, index++);
      out.images.push_back(generate_still(spec, k, rng));
      out.labels.push_back(k);
    }
  }
  return out;
}

const std::vector<std::size_t>& Dataset::split(const std::string& name) const {
  for (const auto& [n, idx] : splits) {
    if (n == name) return idx;
  }
  throw ConfigError("dataset has no split named '" + name + "'");
}

bool Dataset::has_split(const std::string& name) const {
  return std::any_of(splits.begin(), splits.end(), [&](const auto& s) { return s.first == name; });
}

namespace {

void assign_splits(Dataset& ds) {
  const auto& spec = ds.spec;
  ds.splits.clear();
  if (spec.split == SplitPolicy::kFixed) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < ds.clips.size(); ++i) {
      (ds.clips[i].subject == spec.test_subject ? test : train).push_back(i);
    }
    ds.splits = {{"train", train}, {"test", test}};
  } else {
    for (std::size_t s = 0; s < spec.num_subjects; ++s) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < ds.clips.size(); ++i) {
        if (ds.clips[i].subject == s) idx.push_back(i);
      }
      ds.splits.push_back({"subject" + std::to_string(s), idx});
    }
  }
}

std::string make_clip_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "c%05zu", index);
  return buf;
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  std::size_t index = 0;
  for (std::size_t cls = 0; cls < spec.num_classes(); ++cls) {
    for (std::size_t k = 0; k < spec.clips_per_class; ++k, ++index) {
      Rng rng(spec.seed, index);
      VideoClip clip = generate_clip(spec, cls / spec.num_objects, cls % spec.num_objects, rng,
                                     k % spec.num_subjects);
      clip.clip_id = make_clip_id(index);
      ds.clips.push_back(std::move(clip));
    }
  }
  assign_splits(ds);
  return ds;
}

std::vector<std::size_t> sample_indices(std::size_t num_frames, std::size_t n) {
  if (n == 0 || num_frames < n) {
    throw std::invalid_argument("cannot sample " + std::to_string(n) + " frames from a clip of " +
                                std::to_string(num_frames));
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t j = 0; j < n; ++j) idx[j] = j * num_frames / n;
  return idx;
}

std::vector<Tensor> sample_frames(const VideoClip& clip, std::size_t n) {
  std::vector<Tensor> out;
  for (auto i : sample_indices(clip.frames.size(), n)) out.push_back(clip.frames[i]);
  return out;
}

AugmentDraw draw_augment(Rng& rng, Mode mode) {
  AugmentDraw d;
  if (mode == Mode::kEval) return d;
  d.corner = rng.below(5);
  d.scale = kCropScales[rng.below(std::size(kCropScales))];
  d.flip = rng.bernoulli(0.5);
  return d;
}

namespace {

struct CropWindow {
  double x0, y0, side;
};

CropWindow crop_window(const AugmentDraw& d, std::size_t h, std::size_t w) {
  const double short_side = static_cast<double>(std::min(h, w));
  const double side = std::round(d.scale * short_side);
  const double H = static_cast<double>(h), W = static_cast<double>(w);
  switch (d.corner) {
    case 1: return {0.0, 0.0, side};
    case 2: return {W - side, 0.0, side};
    case 3: return {0.0, H - side, side};
    case 4: return {W - side, H - side, side};
    default: return {std::floor((W - side) / 2.0), std::floor((H - side) / 2.0), side};
  }
}

Tensor resample(const Tensor& src, const CropWindow& win, bool flip, std::size_t size) {
  const std::size_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  Tensor out({c, size, size});
  const double ratio = win.side / static_cast<double>(size);
  for (std::size_t oy = 0; oy < size; ++oy) {
    const double sy = std::clamp(win.y0 + (oy + 0.5) * ratio - 0.5, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < size; ++ox) {
      const double sx = std::clamp(win.x0 + (ox + 0.5) * ratio - 0.5, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      const std::size_t dx = flip ? size - 1 - ox : ox;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = src.data().data() + ch * h * w;
        double v = (1 - fy) * ((1 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
                   fy * ((1 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
        if (fx == 0.0 && fy == 0.0) v = p[y0 * w + x0];
        out[(ch * size + oy) * size + dx] = v;
      }
    }
  }
  return out;
}

}  // namespace

Tensor apply_augment(const Tensor& frame, const AugmentDraw& draw, std::size_t size) {
  if (frame.rank() != 3) throw DimensionError("augment expects [C,H,W], got " + shape_str(frame.shape()));
  const auto win = crop_window(draw, frame.dim(1), frame.dim(2));
  return resample(frame, win, draw.flip, size);
}

Tensor apply_augment_flow(const Tensor& stack, const AugmentDraw& draw, std::size_t size) {
  if (stack.rank() != 3 || stack.dim(0) % 2 != 0) {
    throw DimensionError("flow augment expects [2S,H,W], got " + shape_str(stack.shape()));
  }
  const auto win = crop_window(draw, stack.dim(1), stack.dim(2));
  Tensor out = resample(stack, win, draw.flip, size);
  const double gain = static_cast<double>(size) / win.side;
  const std::size_t plane = size * size;
  for (std::size_t ch = 0; ch < out.dim(0); ++ch) {
    const double s = (draw.flip && ch % 2 == 0) ? -gain : gain;
    if (s == 1.0) continue;
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] *= s;
  }
  return out;
}

Tensor augment(const Tensor& frame, std::size_t size, Rng& rng, Mode mode) {
  return apply_augment(frame, draw_augment(rng, mode), size);
}

Box augment_box(const Box& box, const AugmentDraw& draw, std::size_t frame_h, std::size_t frame_w,
                std::size_t size) {
  if (box.area() <= 0.0) return Box{};
  const auto win = crop_window(draw, frame_h, frame_w);
  const double g = static_cast<double>(size) / win.side;
  const double sz = static_cast<double>(size);
  Box b{std::clamp((box.x0 - win.x0) * g, 0.0, sz), std::clamp((box.y0 - win.y0) * g, 0.0, sz),
        std::clamp((box.x1 - win.x0) * g, 0.0, sz), std::clamp((box.y1 - win.y0) * g, 0.0, sz)};
  if (draw.flip) b = {sz - b.x1, b.y0, sz - b.x0, b.y1};
  if (b.area() <= 0.0) return Box{};
  return b;
}

// --- on-disk format -------------------------------------------------------

void write_ppm(const fs::path& path, const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw DimensionError("PPM frames must be [3,H,W], got " + shape_str(frame.shape()));
  }
  const std::size_t h = frame.dim(1), w = frame.dim(2), plane = h * w;
  std::vector<unsigned char> bytes(plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      bytes[i * 3 + c] =
          static_cast<unsigned char>(std::lround(std::clamp(frame[c * plane + i], 0.0, 1.0) * 255.0));
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write frame: " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing frame: " + path.string());
}

namespace {

std::string next_token(std::istream& is) {
  std::string tok;
  while (is >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(is, rest);
  }
  return {};
}

}  // namespace

Tensor read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open frame: " + path.string());
  if (next_token(is) != "P6") throw IoError("not a binary PPM (P6): " + path.string());
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token(is));
    h = std::stoul(next_token(is));
    maxval = std::stoul(next_token(is));
  } catch (const std::exception&) {
    throw IoError("corrupt PPM header: " + path.string());
  }
  if (maxval != 255 || w == 0 || h == 0) throw IoError("unsupported PPM header: " + path.string());
  is.get();
  std::vector<unsigned char> bytes(w * h * 3);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw IoError("truncated PPM data: " + path.string());
  }
  Tensor frame({3, h, w});
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) frame[c * plane + i] = bytes[i * 3 + c] / 255.0;
  }
  return frame;
}

void write_clip(const fs::path& dir, const VideoClip& clip) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.ppm", t);
    write_ppm(dir / name, clip.frames[t]);
  }
  std::ofstream os(dir / "label.txt", std::ios::trunc);
  if (!os) throw IoError("cannot write label file: " + (dir / "label.txt").string());
  os << "clip_id " << clip.clip_id << "\nverb " << clip.verb << "\nobject " << clip.object
     << "\nactivity " << clip.activity_label << "\nsubject " << clip.subject << "\nfps "
     << clip.fps << "\nframes " << clip.frames.size() << '\n';
  os.precision(17);
  for (std::size_t t = 0; t < clip.target_boxes.size(); ++t) {
    const auto& b = clip.target_boxes[t];
    os << "box " << t << ' ' << b.x0 << ' ' << b.y0 << ' ' << b.x1 << ' ' << b.y1 << '\n';
  }
  if (!os) throw IoError("failed writing label file: " + (dir / "label.txt").string());
}

VideoClip read_clip(const fs::path& dir) {
  const fs::path label = dir / "label.txt";
  std::ifstream is(label);
  if (!is) throw IoError("missing label file: " + label.string());
  std::map<std::string, std::string> fields;
  VideoClip clip;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "box") {
      std::size_t t;
      Box b;
      if (!(ls >> t >> b.x0 >> b.y0 >> b.x1 >> b.y1)) throw IoError("corrupt box line in " + label.string());
      clip.target_boxes.push_back(b);
      continue;
    }
    std::string value;
    ls >> value;
    fields[key] = value;
  }
  for (const char* k : {"clip_id", "verb", "object", "activity", "frames"}) {
    if (!fields.count(k) || fields[k].empty()) {
      throw IoError("label file " + label.string() + " is missing '" + k + "'");
    }
  }
  std::size_t n = 0;
  try {
    clip.clip_id = fields["clip_id"];
    clip.verb = std::stoul(fields["verb"]);
    clip.object = std::stoul(fields["object"]);
    clip.activity_label = std::stoul(fields["activity"]);
    clip.subject = fields.count("subject") ? std::stoul(fields["subject"]) : 0;
    clip.fps = fields.count("fps") ? std::stod(fields["fps"]) : 15.0;
    n = std::stoul(fields["frames"]);
  } catch (const std::exception&) {
    throw IoError("corrupt value in label file " + label.string());
  }
  if (n == 0) throw IoError("label file " + label.string() + " declares zero frames");
  for (std::size_t t = 0; t < n; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.ppm", t);
    clip.frames.push_back(read_ppm(dir / name));
  }
  if (!clip.target_boxes.empty() && clip.target_boxes.size() != n) {
    throw IoError("label file " + label.string() + " has " + std::to_string(clip.target_boxes.size()) +
                  " boxes for " + std::to_string(n) + " frames");
  }
  return clip;
}

namespace {

void write_spec(const fs::path& path, const DatasetSpec& s) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "num_verbs=" << s.num_verbs << "\nnum_objects=" << s.num_objects
     << "\nclips_per_class=" << s.clips_per_class << "\ndistractors=" << s.distractors
     << "\nframe_size=" << s.frame_size << "\nframes_per_clip=" << s.frames_per_clip
     << "\ncamera_jitter=" << s.camera_jitter << "\nseed=" << s.seed
     << "\nsplit=" << to_string(s.split) << "\nnum_subjects=" << s.num_subjects
     << "\ntest_subject=" << s.test_subject << '\n';
}

DatasetSpec read_spec(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("missing dataset description: " + path.string());
  DatasetSpec s;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    try {
      if (k == "num_verbs") s.num_verbs = std::stoul(v);
      else if (k == "num_objects") s.num_objects = std::stoul(v);
      else if (k == "clips_per_class") s.clips_per_class = std::stoul(v);
      else if (k == "distractors") s.distractors = std::stoul(v);
      else if (k == "frame_size") s.frame_size = std::stoul(v);
      else if (k == "frames_per_clip") s.frames_per_clip = std::stoul(v);
      else if (k == "camera_jitter") s.camera_jitter = std::stod(v);
      else if (k == "seed") s.seed = std::stoull(v);
      else if (k == "split") s.split = parse_split_policy(v);
      else if (k == "num_subjects") s.num_subjects = std::stoul(v);
      else if (k == "test_subject") s.test_subject = std::stoul(v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw IoError("corrupt value for '" + k + "' in " + path.string());
    }
  }
  return s;
}

}  // namespace

void write_dataset(const fs::path& root, const Dataset& ds) {
  fs::create_directories(root);
  write_spec(root / "dataset.txt", ds.spec);
  for (const auto& [name, idx] : ds.splits) {
    std::ofstream manifest(root / ("manifest_" + name + ".txt"), std::ios::trunc);
    if (!manifest) throw IoError("cannot write manifest for split " + name);
    for (auto i : idx) {
      const auto& clip = ds.clips[i];
      const std::string cls = class_name(ds.spec, clip.activity_label);
      write_clip(root / name / cls / clip.clip_id, clip);
      manifest << clip.clip_id << ' ' << name << '/' << cls << '/' << clip.clip_id << '\n';
    }
  }
}

Dataset read_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  Dataset ds;
  ds.spec = read_spec(root / "dataset.txt");
  std::vector<std::string> names;
  if (ds.spec.split == SplitPolicy::kFixed) {
    names = {"train", "test"};
  } else {
    for (std::size_t s = 0; s < ds.spec.num_subjects; ++s) names.push_back("subject" + std::to_string(s));
  }
  std::vector<std::pair<std::size_t, VideoClip>> ordered;
  for (const auto& name : names) {
    const fs::path mpath = root / ("manifest_" + name + ".txt");
    std::ifstream manifest(mpath);
    if (!manifest) throw IoError("missing manifest: " + mpath.string());
    std::string id, rel;
    while (manifest >> id >> rel) {
      VideoClip clip = read_clip(root / rel);
      const std::size_t index = std::stoul(id.substr(1));
      ordered.emplace_back(index, std::move(clip));
    }
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [i, clip] : ordered) ds.clips.push_back(std::move(clip));
  assign_splits(ds);
  return ds;
}

}  // namespace egoattn
