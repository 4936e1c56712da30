#include "egoattn/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "egoattn/errors.h"
#include "egoattn/ops.h"
#include "egoattn/optim.h"
#include "egoattn/rng.h"

namespace egoattn {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <class E>
E parse_enum(const std::string& name, std::initializer_list<std::pair<const char*, E>> table,
             const char* what) {
  for (const auto& [key, value] : table) {
    if (name == key) return value;
  }
  std::string choices;
  for (const auto& [key, value] : table) choices += std::string(choices.empty() ? "" : "|") + key;
  throw ConfigError(std::string("unknown ") + what + " '" + name + "' (expected " + choices + ")");
}

}  // namespace

Recurrent parse_recurrent(const std::string& name) {
  return parse_enum<Recurrent>(name, {{"convlstm", Recurrent::kConvLSTM}, {"lrcn", Recurrent::kLrcn}},
                               "recurrent module");
}
FlowKind parse_flow_kind(const std::string& name) {
  return parse_enum<FlowKind>(name, {{"raw", FlowKind::kRaw}, {"warp", FlowKind::kWarp}}, "flow kind");
}
Fusion parse_fusion(const std::string& name) {
  return parse_enum<Fusion>(name, {{"average", Fusion::kAverage}, {"joint", Fusion::kJoint}}, "fusion");
}
OptimizerKind parse_optimizer(const std::string& name) {
  return parse_enum<OptimizerKind>(name, {{"adam", OptimizerKind::kAdam}, {"sgd", OptimizerKind::kSgd}},
                                   "optimizer");
}
std::string to_string(Recurrent v) { return v == Recurrent::kConvLSTM ? "convlstm" : "lrcn"; }
std::string to_string(FlowKind v) { return v == FlowKind::kRaw ? "raw" : "warp"; }
std::string to_string(Fusion v) { return v == Fusion::kAverage ? "average" : "joint"; }
std::string to_string(OptimizerKind v) { return v == OptimizerKind::kAdam ? "adam" : "sgd"; }

// --- config ---------------------------------------------------------------

std::size_t TrainConfig::scaled_epochs(const StageConfig& s) const {
  if (s.epochs == 0) return 0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s.epochs / epochs_factor)));
}

std::vector<std::size_t> TrainConfig::scaled_decays(const StageConfig& s) const {
  std::vector<std::size_t> out;
  if (s.decay_every_epoch) {
    for (std::size_t e = 1; e < scaled_epochs(s); ++e) out.push_back(e);
    return out;
  }
  for (std::size_t t : s.decay_epochs) {
    out.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(t / epochs_factor))));
  }
  return out;
}

double TrainConfig::lr_at(const StageConfig& s, std::size_t epoch) const {
  double lr = s.lr;
  for (std::size_t t : scaled_decays(s)) {
    if (t <= epoch) lr *= s.decay;
  }
  return lr;
}

void TrainConfig::validate() const {
  if (!(epochs_factor > 0.0)) throw ConfigError("epochs_factor must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
  if (frames == 0) throw ConfigError("frames must be at least 1");
  if (eval_stacks == 0 || stack_depth == 0) throw ConfigError("flow stacks need positive count and depth");
  if (hidden == 0 || lrcn_hidden == 0) throw ConfigError("hidden sizes must be positive");
  if (lstm_kernel % 2 == 0) throw ConfigError("convLSTM kernel must be odd");
  if (gate == GateVariant::kVerbatim && recurrent == Recurrent::kLrcn) {
    throw ConfigError("gate variant applies to the convLSTM only");
  }
  const std::pair<const char*, const StageConfig*> stages[] = {
      {"pretrain", &pretrain}, {"stage1", &stage1}, {"stage2", &stage2}, {"flow", &flow}, {"joint", &joint}};
  for (const auto& [name, s] : stages) {
    const std::string n = name;
    if (s->batch == 0) throw ConfigError(n + ": batch must be positive");
    if (!(s->lr > 0.0)) throw ConfigError(n + ": learning rate must be positive");
    if (!(s->decay > 0.0 && s->decay <= 1.0)) throw ConfigError(n + ": decay must lie in (0,1]");
    if (!(s->weight_decay >= 0.0)) throw ConfigError(n + ": weight decay must be non-negative");
    for (std::size_t k = 0; k < s->decay_epochs.size(); ++k) {
      if (k > 0 && s->decay_epochs[k] <= s->decay_epochs[k - 1]) {
        throw ConfigError(n + ": decay epochs must be strictly increasing");
      }
      if (s->decay_epochs[k] >= s->epochs && s->epochs > 0) {
        throw ConfigError(n + ": decay epoch " + std::to_string(s->decay_epochs[k]) +
                          " outside the " + std::to_string(s->epochs) + "-epoch budget");
      }
    }
  }
}

std::size_t clip_label(const VideoClip& clip, const DatasetSpec& spec, const TrainConfig& cfg) {
  std::size_t object = clip.object;
  if (std::find(cfg.merge_objects.begin(), cfg.merge_objects.end(), object) != cfg.merge_objects.end()) {
    object = cfg.merge_objects.front();
  }
  return clip.verb * spec.num_objects + object;
}

// --- metrics --------------------------------------------------------------

std::size_t Evaluation::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion) n = std::accumulate(row.begin(), row.end(), n);
  return n;
}

std::size_t Evaluation::correct() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < confusion.size(); ++k) n += confusion[k][k];
  return n;
}

double Evaluation::accuracy() const {
  const std::size_t n = total();
  return n == 0 ? kNaN : static_cast<double>(correct()) / static_cast<double>(n);
}

std::vector<double> Evaluation::per_class_accuracy() const {
  std::vector<double> out;
  for (std::size_t k = 0; k < confusion.size(); ++k) {
    const std::size_t n = std::accumulate(confusion[k].begin(), confusion[k].end(), std::size_t{0});
    out.push_back(n == 0 ? kNaN : static_cast<double>(confusion[k][k]) / static_cast<double>(n));
  }
  return out;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17);
  return os;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_metrics_csv(const fs::path& path, const Metrics& m) {
  auto os = open_out(path);
  os << "epoch,lr,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& r : m.epochs) {
    os << r.epoch << ',' << num(r.lr) << ',' << num(r.train_loss) << ',' << num(r.train_accuracy) << ','
       << num(r.val_loss) << ',' << num(r.val_accuracy) << '\n';
  }
}

void write_confusion_csv(const fs::path& path, const Evaluation& e) {
  auto os = open_out(path);
  for (const auto& row : e.confusion) {
    for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << row[k];
    os << '\n';
  }
}

void write_summary_json(const fs::path& path, const std::string& stage, const Metrics& m) {
  auto os = open_out(path);
  const auto per_class = m.final.per_class_accuracy();
  os << "{\n  \"stage\": \"" << stage << "\",\n  \"epochs\": " << m.epochs.size()
     << ",\n  \"final_accuracy\": " << (std::isnan(m.final.accuracy()) ? "null" : num(m.final.accuracy()))
     << ",\n  \"final_loss\": " << (std::isnan(m.final.loss) ? "null" : num(m.final.loss))
     << ",\n  \"correct\": " << m.final.correct() << ",\n  \"total\": " << m.final.total()
     << ",\n  \"per_class_accuracy\": [";
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    os << (k ? ", " : "") << (std::isnan(per_class[k]) ? "null" : num(per_class[k]));
  }
  os << "]\n}\n";
}

// --- models ---------------------------------------------------------------

void set_trainable(const ParamList& params, bool value) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(value);
  }
}

RgbModel::RgbModel(BackboneNet net, const TrainConfig& cfg, std::size_t num_classes, Rng& rng)
    : backbone(std::move(net)), attention(cfg.attention), recurrent(cfg.recurrent) {
  const auto& bc = backbone.config();
  const std::size_t l = bc.feature_channels(), side = bc.final_side();
  Rng r_cell = rng.split(1), r_cls = rng.split(2);
  if (recurrent == Recurrent::kConvLSTM) {
    cell = ConvLSTMCell(l, cfg.hidden, cfg.lstm_kernel, r_cell, cfg.gate);
    classifier = Linear(cfg.hidden, num_classes, r_cls);
  } else {
    lstm = LSTMCell(l * side * side, cfg.lrcn_hidden, r_cell);
    classifier = Linear(cfg.lrcn_hidden, num_classes, r_cls);
  }
}

RgbModel::Encoded RgbModel::encode(std::span<const Tensor> frames) const {
  if (frames.empty()) throw std::invalid_argument("cannot encode an empty clip");
  Encoded out;
  std::vector<Tensor> feats;
  for (const auto& frame : frames) {
    auto a = attended_frame_feature(backbone, frame, attention);
    feats.push_back(a.features);
    out.maps.push_back(std::move(a.map));
  }
  if (recurrent == Recurrent::kConvLSTM) {
    out.descriptor = encode_sequence(cell, feats);
  } else {
    LSTMState s = lstm.zero_state();
    for (const auto& f : feats) s = lstm.step(reshape(f, {f.numel()}), s);
    out.descriptor = s.h;
  }
  return out;
}

std::size_t RgbModel::descriptor_size() const { return classifier.in_features(); }

ParamList RgbModel::params() const {
  ParamList out = with_prefix("backbone.", backbone.params());
  auto rec = recurrent == Recurrent::kConvLSTM ? with_prefix("convlstm.", cell.params())
                                               : with_prefix("lstm.", lstm.params());
  out.insert(out.end(), rec.begin(), rec.end());
  auto cls = with_prefix("classifier.", classifier.params());
  out.insert(out.end(), cls.begin(), cls.end());
  return out;
}

RgbModel RgbModel::clone() const {
  RgbModel m;
  m.backbone = backbone.clone();
  if (recurrent == Recurrent::kConvLSTM) m.cell = cell.clone();
  else m.lstm = lstm.clone();
  m.classifier = classifier.clone();
  m.attention = attention;
  m.recurrent = recurrent;
  return m;
}

FlowModel::FlowModel(const BackboneNet& rgb, std::size_t stack_depth, std::size_t num_classes, Rng& rng)
    : net(rgb.clone()) {
  net.replace_first_kernel(cross_modality_init(rgb.kernel(0), 2 * stack_depth));
  classifier = Linear(net.config().feature_channels(), num_classes, rng);
}

Tensor FlowModel::descriptor(const Tensor& stack) const { return net.forward(stack).pooled; }

ParamList FlowModel::params() const {
  ParamList out = with_prefix("flownet.", net.params());
  auto cls = with_prefix("flowcls.", classifier.params());
  out.insert(out.end(), cls.begin(), cls.end());
  return out;
}

FlowModel FlowModel::clone() const {
  FlowModel m;
  m.net = net.clone();
  m.classifier = classifier.clone();
  return m;
}

JointModel::JointModel(RgbModel rgb_model, FlowModel flow_model)
    : rgb(std::move(rgb_model)), flow(std::move(flow_model)) {
  const std::size_t k = rgb.classifier.out_features();
  if (flow.classifier.out_features() != k) {
    throw DimensionError("joint fusion needs equal class counts in both streams");
  }
  const std::size_t dr = rgb.descriptor_size(), df = flow.descriptor_size();
  Rng unused(0);
  head = Linear(dr + df, k, unused);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < dr; ++j) head.weight[c * (dr + df) + j] = 0.5 * rgb.classifier.weight[c * dr + j];
    for (std::size_t j = 0; j < df; ++j) {
      head.weight[c * (dr + df) + dr + j] = 0.5 * flow.classifier.weight[c * df + j];
    }
    head.bias[c] = 0.5 * (rgb.classifier.bias[c] + flow.classifier.bias[c]);
  }
}

ParamList JointModel::params() const {
  ParamList out = rgb.params();
  auto f = flow.params();
  out.insert(out.end(), f.begin(), f.end());
  auto h = with_prefix("joint.head.", head.params());
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

// --- data plumbing --------------------------------------------------------

std::vector<Tensor> prepare_frames(const VideoClip& clip, std::size_t n, const AugmentDraw& draw,
                                   std::size_t size) {
  std::vector<Tensor> out;
  for (const auto& f : sample_frames(clip, n)) out.push_back(apply_augment(f, draw, size));
  return out;
}

FlowBank compute_flow_bank(const Dataset& data, FlowKind kind, const TvL1Params& params,
                           const fs::path& cache_dir) {
  FlowBank bank;
  bank.kind = kind;
  const bool warp = kind == FlowKind::kWarp;
  std::unique_ptr<FlowCache> cache;
  if (!cache_dir.empty()) cache = std::make_unique<FlowCache>(cache_dir);
  for (const auto& clip : data.clips) {
    bank.flows.push_back(cache ? cache->load_or_compute(clip, params, warp) : clip_flows(clip, params, warp));
  }
  return bank;
}

Tensor prepare_stack(const std::vector<FlowField>& flows, std::size_t center, std::size_t depth,
                     const AugmentDraw& draw, std::size_t size) {
  return apply_augment_flow(build_flow_stack(flows, center, depth), draw, size);
}

// --- training loop --------------------------------------------------------

namespace {

struct StepResult {
  Tensor loss;
  Tensor logits;
};

// Builds the loss for one training example. The Rng is unique to (epoch, example).
using ExampleFn = std::function<StepResult(std::size_t example, Rng& rng)>;
using EvalFn = std::function<Evaluation()>;

std::unique_ptr<Optimizer> make_optimizer(const StageConfig& s, const TrainConfig& cfg,
                                          std::vector<Tensor> params) {
  std::unique_ptr<Optimizer> opt;
  if (s.optimizer == OptimizerKind::kAdam) {
    opt = std::make_unique<Adam>(std::move(params), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  } else {
    opt = std::make_unique<Sgd>(std::move(params), cfg.momentum);
  }
  opt->set_weight_decay(s.weight_decay);
  return opt;
}

Metrics run_stage(const char* name, const StageConfig& s, const TrainConfig& cfg, const ParamList& params,
                  const std::vector<std::size_t>& examples, const std::vector<std::size_t>& labels,
                  std::uint64_t stream, const ExampleFn& example, const EvalFn& evaluate) {
  Metrics metrics;
  const std::size_t epochs = cfg.scaled_epochs(s);
  auto opt = make_optimizer(s, cfg, trainable(params));
  Rng stage_rng(cfg.seed, stream);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<Tensor> snapshot;
    for (const auto& p : opt->params()) snapshot.push_back(p.clone());
    const double lr = cfg.lr_at(s, e);
    Rng epoch_rng = stage_rng.split(e);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = epoch_rng.split(0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += s.batch) {
      const std::size_t end = std::min(order.size(), b + s.batch);
      const double inv = 1.0 / static_cast<double>(end - b);
      for (std::size_t k = b; k < end; ++k) {
        const std::size_t ex = order[k];
        Rng ex_rng = epoch_rng.split(1 + examples[ex]);
        Tape tape;
        StepResult r;
        {
          TapeScope scope(tape);
          r = example(examples[ex], ex_rng);
          r.loss = scale(r.loss, inv);
        }
        const double l = r.loss.item() / inv;
        if (!std::isfinite(l)) {
          for (std::size_t p = 0; p < snapshot.size(); ++p) {
            Tensor dst = opt->params()[p];
            std::copy(snapshot[p].data().begin(), snapshot[p].data().end(), dst.data().begin());
            dst.zero_grad();
          }
          throw DivergenceError(std::string(name) + ": non-finite loss at epoch " + std::to_string(e) +
                                "; parameters restored to the start of that epoch");
        }
        if (opt->params().empty()) {
          tape.clear();
        } else {
          tape.backward(r.loss);
        }
        loss_sum += l;
        correct += winning_class(r.logits) == labels[ex];
      }
      opt->step(lr);
    }
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = lr;
    rec.train_loss = order.empty() ? kNaN : loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = order.empty() ? kNaN : static_cast<double>(correct) / static_cast<double>(order.size());
    rec.val_loss = rec.val_accuracy = kNaN;
    if (cfg.val_every > 0 && ((e + 1) % cfg.val_every == 0) && evaluate) {
      const Evaluation ev = evaluate();
      rec.val_loss = ev.loss;
      rec.val_accuracy = ev.accuracy();
    }
    metrics.epochs.push_back(rec);
  }
  if (evaluate && epochs > 0) metrics.final = evaluate();
  return metrics;
}

const std::vector<std::size_t>& split_or_throw(const Dataset& data, const std::string& name) {
  if (!data.has_split(name)) throw ConfigError("dataset has no split named '" + name + "'");
  return data.split(name);
}

std::vector<std::size_t> labels_of(const Dataset& data, const std::vector<std::size_t>& idx,
                                   const TrainConfig& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t i : idx) out.push_back(clip_label(data.clips[i], data.spec, cfg));
  return out;
}

Evaluation tally(const std::vector<Tensor>& logits, const std::vector<std::size_t>& labels, std::size_t k) {
  Evaluation ev;
  ev.confusion.assign(k, std::vector<std::size_t>(k, 0));
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const std::size_t pred = winning_class(logits[i]);
    ev.predictions.push_back(pred);
    ++ev.confusion[labels[i]][pred];
    loss += cross_entropy(logits[i], labels[i]).item();
  }
  ev.loss = logits.empty() ? kNaN : loss / static_cast<double>(logits.size());
  ev.logits = logits;
  return ev;
}

AugmentDraw eval_draw() { return AugmentDraw{}; }

std::size_t flow_input_size(const FlowModel& m) { return m.net.config().input_size; }

// Per-channel statistics of the centre-crop evaluation stacks of the training clips.
void set_flow_input_stats(FlowModel& model, const FlowBank& bank, const std::vector<std::size_t>& train,
                          const TrainConfig& cfg) {
  const std::size_t channels = 2 * cfg.stack_depth, size = flow_input_size(model);
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  double count = 0.0;
  for (std::size_t clip : train) {
    const auto& flows = bank.flows[clip];
    for (std::size_t c : stack_centers(flows.size(), cfg.eval_stacks, cfg.stack_depth)) {
      const Tensor stack = prepare_stack(flows, c, cfg.stack_depth, eval_draw(), size);
      const std::size_t plane = size * size;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = stack[ch * plane + i];
          sum[ch] += v;
          sq[ch] += v * v;
        }
      }
      count += static_cast<double>(plane);
    }
  }
  if (count == 0.0) return;
  std::vector<double> sd(channels);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    sum[ch] /= count;
    sd[ch] = std::sqrt(std::max(sq[ch] / count - sum[ch] * sum[ch], 1e-12));
  }
  model.net.set_input_stats(sum, sd);
}

std::size_t random_center(std::size_t num_flows, std::size_t depth, Rng& rng) {
  const std::size_t span = num_flows >= depth ? num_flows - depth + 1 : 1;
  return depth / 2 + rng.below(span);
}

void check_bank(const Dataset& data, const FlowBank& bank) {
  if (bank.flows.size() != data.clips.size()) {
    throw ConfigError("flow bank does not match the dataset (" + std::to_string(bank.flows.size()) +
                      " vs " + std::to_string(data.clips.size()) + " clips)");
  }
}

void check_classes(const Linear& cls, const DatasetSpec& spec) {
  if (cls.out_features() != spec.num_classes()) {
    throw ConfigError("classifier has " + std::to_string(cls.out_features()) + " outputs but the dataset has " +
                      std::to_string(spec.num_classes()) + " classes");
  }
}

Metrics train_rgb(RgbModel& model, const Dataset& data, const TrainConfig& cfg, bool stage2) {
  cfg.validate();
  check_classes(model.classifier, data.spec);
  const auto& train = split_or_throw(data, cfg.train_split);
  const auto labels = labels_of(data, train, cfg);
  const auto params = model.params();
  set_trainable(params, false);
  set_trainable(model.recurrent == Recurrent::kConvLSTM ? model.cell.params() : model.lstm.params(), true);
  set_trainable(model.classifier.params(), true);
  if (stage2) {
    set_trainable(model.backbone.group("last_block"), true);
    set_trainable(model.backbone.group("head"), true);
  }
  const std::size_t size = model.backbone.config().input_size;
  std::vector<std::size_t> pos(data.clips.size(), 0);
  for (std::size_t i = 0; i < train.size(); ++i) pos[train[i]] = i;
  ExampleFn example = [&](std::size_t clip, Rng& rng) {
    Rng aug = rng.split(1), drop = rng.split(2);
    const auto frames = prepare_frames(data.clips[clip], cfg.frames, draw_augment(aug, Mode::kTrain), size);
    const Tensor desc = model.encode(frames).descriptor;
    const Tensor logits = classify_clip(desc, model.classifier, cfg.dropout, drop, true);
    return StepResult{cross_entropy(logits, labels[pos[clip]]), logits};
  };
  EvalFn evaluate;
  if (data.has_split(cfg.val_split)) {
    evaluate = [&] { return evaluate_rgb(model, data, data.split(cfg.val_split), cfg); };
  }
  Metrics m = run_stage(stage2 ? "stage2" : "stage1", stage2 ? cfg.stage2 : cfg.stage1, cfg, params, train,
                        labels, stage2 ? 2 : 1, example, evaluate);
  set_trainable(params, false);
  return m;
}

}  // namespace

Metrics pretrain_backbone(BackboneNet& net, const StillDataset& train, const StillDataset& val,
                          const TrainConfig& cfg) {
  cfg.validate();
  if (train.images.size() != train.labels.size() || val.images.size() != val.labels.size()) {
    throw DimensionError("still dataset images and labels differ in count");
  }
  if (!train.images.empty()) {
    const std::size_t c = train.images[0].dim(0), plane = train.images[0].dim(1) * train.images[0].dim(2);
    std::vector<double> mean(c, 0.0), sq(c, 0.0);
    for (const auto& im : train.images) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) {
          mean[ch] += im[ch * plane + i];
          sq[ch] += im[ch * plane + i] * im[ch * plane + i];
        }
      }
    }
    const double n = static_cast<double>(train.images.size() * plane);
    std::vector<double> sd(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] /= n;
      sd[ch] = std::sqrt(std::max(sq[ch] / n - mean[ch] * mean[ch], 1e-12));
    }
    net.set_input_stats(mean, sd);
  }
  const auto params = net.params();
  set_trainable(params, false);
  for (std::size_t b = 0; b < net.num_blocks(); ++b) set_trainable(net.group("block" + std::to_string(b)), true);
  set_trainable(net.group("head"), true);
  const std::size_t size = net.config().input_size;
  std::vector<std::size_t> examples(train.images.size());
  std::iota(examples.begin(), examples.end(), std::size_t{0});
  ExampleFn example = [&](std::size_t i, Rng& rng) {
    const Tensor x = augment(train.images[i], size, rng, Mode::kTrain);
    const Tensor logits = net.forward(x).logits;
    return StepResult{cross_entropy(logits, train.labels[i]), logits};
  };
  EvalFn evaluate;
  if (!val.images.empty()) evaluate = [&] { return evaluate_stills(net, val); };
  Metrics m = run_stage("pretrain", cfg.pretrain, cfg, params, examples, train.labels, 0, example, evaluate);
  set_trainable(params, false);
  return m;
}

Metrics train_stage1(RgbModel& model, const Dataset& data, const TrainConfig& cfg) {
  return train_rgb(model, data, cfg, false);
}

Metrics train_stage2(RgbModel& model, const Dataset& data, const TrainConfig& cfg) {
  return train_rgb(model, data, cfg, true);
}

Metrics train_flow_stream(FlowModel& model, const Dataset& data, const FlowBank& bank, const TrainConfig& cfg) {
  cfg.validate();
  check_bank(data, bank);
  check_classes(model.classifier, data.spec);
  const auto& train = split_or_throw(data, cfg.train_split);
  const auto labels = labels_of(data, train, cfg);
  const auto params = model.params();
  set_trainable(params, false);
  for (std::size_t b = 0; b < model.net.num_blocks(); ++b) {
    set_trainable(model.net.group("block" + std::to_string(b)), true);
  }
  set_trainable(model.classifier.params(), true);
  const std::size_t size = flow_input_size(model);
  set_flow_input_stats(model, bank, train, cfg);
  std::vector<std::size_t> pos(data.clips.size(), 0);
  for (std::size_t i = 0; i < train.size(); ++i) pos[train[i]] = i;
  ExampleFn example = [&](std::size_t clip, Rng& rng) {
    Rng aug = rng.split(1), drop = rng.split(2), pick = rng.split(3);
    const auto& flows = bank.flows[clip];
    const std::size_t center = random_center(flows.size(), cfg.stack_depth, pick);
    const Tensor stack = prepare_stack(flows, center, cfg.stack_depth, draw_augment(aug, Mode::kTrain), size);
    const Tensor logits = classify_clip(model.descriptor(stack), model.classifier, cfg.dropout, drop, true);
    return StepResult{cross_entropy(logits, labels[pos[clip]]), logits};
  };
  EvalFn evaluate;
  if (data.has_split(cfg.val_split)) {
    evaluate = [&] { return evaluate_flow(model, data, bank, data.split(cfg.val_split), cfg); };
  }
  Metrics m = run_stage("flow", cfg.flow, cfg, params, train, labels, 3, example, evaluate);
  set_trainable(params, false);
  return m;
}

Metrics train_joint(JointModel& model, const Dataset& data, const FlowBank& bank, const TrainConfig& cfg) {
  cfg.validate();
  check_bank(data, bank);
  check_classes(model.head, data.spec);
  const auto& train = split_or_throw(data, cfg.train_split);
  const auto labels = labels_of(data, train, cfg);
  const auto params = model.params();
  set_trainable(params, false);
  set_trainable(model.rgb.recurrent == Recurrent::kConvLSTM ? model.rgb.cell.params() : model.rgb.lstm.params(),
                true);
  set_trainable(model.rgb.backbone.group("last_block"), true);
  set_trainable(model.rgb.backbone.group("head"), true);
  set_trainable(model.flow.net.group("last_block"), true);
  set_trainable(model.head.params(), true);
  const std::size_t rgb_size = model.rgb.backbone.config().input_size;
  const std::size_t flow_size = flow_input_size(model.flow);
  std::vector<std::size_t> pos(data.clips.size(), 0);
  for (std::size_t i = 0; i < train.size(); ++i) pos[train[i]] = i;
  ExampleFn example = [&](std::size_t clip, Rng& rng) {
    Rng aug = rng.split(1), drop = rng.split(2), pick = rng.split(3);
    const AugmentDraw draw = draw_augment(aug, Mode::kTrain);
    const auto frames = prepare_frames(data.clips[clip], cfg.frames, draw, rgb_size);
    const auto& flows = bank.flows[clip];
    const std::size_t center = random_center(flows.size(), cfg.stack_depth, pick);
    const Tensor stack = prepare_stack(flows, center, cfg.stack_depth, draw, flow_size);
    const Tensor parts[] = {model.rgb.encode(frames).descriptor, model.flow.descriptor(stack)};
    const Tensor logits = classify_clip(concat_leading(parts), model.head, cfg.dropout, drop, true);
    return StepResult{cross_entropy(logits, labels[pos[clip]]), logits};
  };
  EvalFn evaluate;
  if (data.has_split(cfg.val_split)) {
    evaluate = [&] { return evaluate_joint(model, data, bank, data.split(cfg.val_split), cfg); };
  }
  Metrics m = run_stage("joint", cfg.joint, cfg, params, train, labels, 4, example, evaluate);
  set_trainable(params, false);
  return m;
}

Tensor fuse_average(const Tensor& rgb_logits, const Tensor& flow_logits) {
  if (rgb_logits.shape() != flow_logits.shape()) {
    throw DimensionError("fuse_average: score shapes differ, " + shape_str(rgb_logits.shape()) + " vs " +
                         shape_str(flow_logits.shape()));
  }
  return scale(add(rgb_logits, flow_logits), 0.5);
}

// --- evaluation -----------------------------------------------------------

Tensor rgb_logits(const RgbModel& model, const VideoClip& clip, const TrainConfig& cfg) {
  const auto frames = prepare_frames(clip, cfg.frames, eval_draw(), model.backbone.config().input_size);
  Rng unused(0);
  return classify_clip(model.encode(frames).descriptor, model.classifier, cfg.dropout, unused, false);
}

namespace {

Tensor mean_flow_descriptor(const FlowModel& model, const std::vector<FlowField>& flows,
                            const TrainConfig& cfg) {
  std::vector<Tensor> descs;
  for (std::size_t c : stack_centers(flows.size(), cfg.eval_stacks, cfg.stack_depth)) {
    descs.push_back(model.descriptor(prepare_stack(flows, c, cfg.stack_depth, eval_draw(), flow_input_size(model))));
  }
  return mean_of(descs);
}

}  // namespace

Tensor flow_logits(const FlowModel& model, const std::vector<FlowField>& flows, const TrainConfig& cfg) {
  std::vector<Tensor> scores;
  for (std::size_t c : stack_centers(flows.size(), cfg.eval_stacks, cfg.stack_depth)) {
    const Tensor stack = prepare_stack(flows, c, cfg.stack_depth, eval_draw(), flow_input_size(model));
    scores.push_back(model.classifier.forward(model.descriptor(stack)));
  }
  return mean_of(scores);
}

Tensor joint_logits(const JointModel& model, const VideoClip& clip, const std::vector<FlowField>& flows,
                    const TrainConfig& cfg) {
  const auto frames = prepare_frames(clip, cfg.frames, eval_draw(), model.rgb.backbone.config().input_size);
  const Tensor parts[] = {model.rgb.encode(frames).descriptor, mean_flow_descriptor(model.flow, flows, cfg)};
  return model.head.forward(concat_leading(parts));
}

Evaluation evaluate_rgb(const RgbModel& model, const Dataset& data, const std::vector<std::size_t>& idx,
                        const TrainConfig& cfg) {
  std::vector<Tensor> logits;
  for (std::size_t i : idx) logits.push_back(rgb_logits(model, data.clips[i], cfg));
  return tally(logits, labels_of(data, idx, cfg), data.spec.num_classes());
}

Evaluation evaluate_flow(const FlowModel& model, const Dataset& data, const FlowBank& bank,
                         const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
  check_bank(data, bank);
  std::vector<Tensor> logits;
  for (std::size_t i : idx) logits.push_back(flow_logits(model, bank.flows[i], cfg));
  return tally(logits, labels_of(data, idx, cfg), data.spec.num_classes());
}

Evaluation evaluate_average_fusion(const RgbModel& rgb, const FlowModel& flow, const Dataset& data,
                                   const FlowBank& bank, const std::vector<std::size_t>& idx,
                                   const TrainConfig& cfg) {
  check_bank(data, bank);
  std::vector<Tensor> logits;
  for (std::size_t i : idx) {
    logits.push_back(fuse_average(rgb_logits(rgb, data.clips[i], cfg), flow_logits(flow, bank.flows[i], cfg)));
  }
  return tally(logits, labels_of(data, idx, cfg), data.spec.num_classes());
}

Evaluation evaluate_joint(const JointModel& model, const Dataset& data, const FlowBank& bank,
                          const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
  check_bank(data, bank);
  std::vector<Tensor> logits;
  for (std::size_t i : idx) logits.push_back(joint_logits(model, data.clips[i], bank.flows[i], cfg));
  return tally(logits, labels_of(data, idx, cfg), data.spec.num_classes());
}

Evaluation evaluate_stills(const BackboneNet& net, const StillDataset& stills) {
  std::vector<Tensor> logits;
  const std::size_t size = net.config().input_size;
  for (const auto& im : stills.images) logits.push_back(net.forward(apply_augment(im, eval_draw(), size)).logits);
  return tally(logits, stills.labels, net.config().num_pretrain_classes);
}

namespace {

template <class MassFn>
double mean_box_mass(const RgbModel& model, const VideoClip& clip, const TrainConfig& cfg, MassFn mass) {
  const std::size_t size = model.backbone.config().input_size;
  const auto idx = sample_indices(clip.frames.size(), cfg.frames);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t j : idx) {
    if (j >= clip.target_boxes.size()) continue;
    const Box box = augment_box(clip.target_boxes[j], eval_draw(), clip.frames[j].dim(1), clip.frames[j].dim(2), size);
    if (box.area() <= 0.0) continue;
    total += mass(apply_augment(clip.frames[j], eval_draw(), size), box, static_cast<double>(size));
    ++n;
  }
  return n == 0 ? kNaN : total / static_cast<double>(n);
}

}  // namespace

double attention_in_box(const RgbModel& model, const VideoClip& clip, const TrainConfig& cfg) {
  return mean_box_mass(model, clip, cfg, [&](const Tensor& frame, const Box& box, double size) {
    const auto a = attended_frame_feature(model.backbone, frame, true);
    return attention_mass_in_box(a.map.prob, box, size);
  });
}

double uniform_in_box(const RgbModel& model, const VideoClip& clip, const TrainConfig& cfg) {
  const std::size_t side = model.backbone.config().final_side();
  return mean_box_mass(model, clip, cfg, [&](const Tensor&, const Box& box, double size) {
    return uniform_mass_in_box(box, side, side, size);
  });
}

}  // namespace egoattn
