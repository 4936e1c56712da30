#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "egoattn/checkpoint.h"
#include "egoattn/config.h"
#include "egoattn/errors.h"
#include "egoattn/ops.h"
#include "egoattn/rng.h"
#include "egoattn/training.h"
#include "egoattn/verify.h"

#ifndef EGOATTN_VERSION
#define EGOATTN_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace egoattn;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kIo = 3 };

// Pretraining stills use their own generator streams so they never overlap clips.
constexpr std::uint64_t kStillTrainSeed = 0x5717'0001;
constexpr std::uint64_t kStillValSeed = 0x5717'0002;
constexpr std::size_t kStillValPerClass = 50;

RunConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides) {
  RunConfig cfg = file.empty() ? RunConfig{} : load_run_config(file);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

Dataset load_data(const RunConfig& cfg) {
  if (!cfg.dataset_dir.empty()) return read_dataset(cfg.dataset_dir);
  return generate_dataset(cfg.data);
}

void write_resolved_config(const fs::path& dir, const RunConfig& cfg) {
  std::ofstream os(dir / "config.txt", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / "config.txt").string());
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  os << "# egoattn " << EGOATTN_VERSION << " written " << stamp << "\n" << to_text(cfg);
}

fs::path require(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) {
    throw IoError("stage '" + stage + "' needs " + path.string() + "; run the earlier stage first");
  }
  return path;
}

void load_into(const ParamList& target, const fs::path& path) { assign_params(target, load_checkpoint(path)); }

void write_stage_outputs(const fs::path& dir, const std::string& stage, const Metrics& m) {
  write_metrics_csv(dir / (stage + "_metrics.csv"), m);
  write_summary_json(dir / (stage + "_summary.json"), stage, m);
  write_confusion_csv(dir / (stage + "_confusion.csv"), m.final);
}

BackboneNet fresh_backbone(const RunConfig& cfg) {
  Rng rng(cfg.train.seed, 100);
  return BackboneNet(cfg.backbone, rng);
}

RgbModel fresh_rgb(const RunConfig& cfg, BackboneNet net) {
  Rng rng(cfg.train.seed, 200);
  return RgbModel(std::move(net), cfg.train, cfg.data.num_classes(), rng);
}

FlowModel fresh_flow(const RunConfig& cfg, const BackboneNet& rgb) {
  Rng rng(cfg.train.seed, 300);
  return FlowModel(rgb, cfg.train.stack_depth, cfg.data.num_classes(), rng);
}

FlowBank bank_for(const RunConfig& cfg, const Dataset& data, const fs::path& run_dir) {
  const fs::path cache = cfg.flow_cache.empty() ? run_dir / "flows" : fs::path(cfg.flow_cache);
  return compute_flow_bank(data, cfg.train.flow_kind, cfg.tvl1, cache);
}

void print_result(const std::string& stage, const Metrics& m) {
  std::cout << stage << ": " << m.epochs.size() << " epochs";
  if (m.final.total() > 0) {
    std::cout << ", accuracy " << m.final.correct() << "/" << m.final.total() << " = " << m.final.accuracy();
  }
  std::cout << "\n";
}

int cmd_generate(const std::string& spec_file, const fs::path& out, bool force, const std::string& split) {
  RunConfig cfg = resolve_config(spec_file, {});
  if (!split.empty()) cfg.data.split = parse_split_policy(split);
  cfg.data.validate();
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) {
      std::cerr << "error: " << out << " exists and is not empty (use --force to overwrite)\n";
      return kUsage;
    }
    fs::remove_all(out);
  }
  const Dataset data = generate_dataset(cfg.data);
  write_dataset(out, data);
  std::cout << "wrote " << data.clips.size() << " clips in " << data.spec.num_classes() << " classes to " << out
            << "\n";
  return kOk;
}

int cmd_train(const std::string& config, const std::string& stage, const fs::path& out,
              const std::vector<std::string>& overrides) {
  const RunConfig cfg = resolve_config(config, overrides);
  fs::create_directories(out);
  write_resolved_config(out, cfg);
  const TrainConfig& tc = cfg.train;

  if (stage == "pretrain") {
    BackboneNet net = fresh_backbone(cfg);
    const auto train = generate_stills(cfg.data, cfg.backbone.num_pretrain_classes, tc.pretrain_per_class,
                                       cfg.data.seed ^ kStillTrainSeed);
    const auto val =
        generate_stills(cfg.data, cfg.backbone.num_pretrain_classes, kStillValPerClass, cfg.data.seed ^ kStillValSeed);
    const Metrics m = pretrain_backbone(net, train, val, tc);
    save_checkpoint(out / "pretrain.ckpt", with_prefix("backbone.", net.params()));
    write_stage_outputs(out, stage, m);
    print_result(stage, m);
    return kOk;
  }

  const Dataset data = load_data(cfg);
  if (stage == "stage1" || stage == "stage2") {
    RgbModel model = fresh_rgb(cfg, fresh_backbone(cfg));
    if (stage == "stage1") {
      load_into(with_prefix("backbone.", model.backbone.params()), require(out / "pretrain.ckpt", stage));
    } else {
      load_into(model.params(), require(out / "stage1.ckpt", stage));
    }
    Metrics m;
    try {
      m = stage == "stage1" ? train_stage1(model, data, tc) : train_stage2(model, data, tc);
    } catch (const DivergenceError&) {
      save_checkpoint(out / (stage + ".ckpt"), model.params());
      throw;
    }
    save_checkpoint(out / (stage + ".ckpt"), model.params());
    write_stage_outputs(out, stage, m);
    print_result(stage, m);
    return kOk;
  }

  if (stage == "flow") {
    BackboneNet rgb = fresh_backbone(cfg);
    load_into(with_prefix("backbone.", rgb.params()), require(out / "pretrain.ckpt", stage));
    FlowModel model = fresh_flow(cfg, rgb);
    const FlowBank bank = bank_for(cfg, data, out);
    Metrics m;
    try {
      m = train_flow_stream(model, data, bank, tc);
    } catch (const DivergenceError&) {
      save_checkpoint(out / "flow.ckpt", model.params());
      throw;
    }
    save_checkpoint(out / "flow.ckpt", model.params());
    write_stage_outputs(out, stage, m);
    print_result(stage, m);
    return kOk;
  }

  if (stage == "fuse") {
    RgbModel rgb = fresh_rgb(cfg, fresh_backbone(cfg));
    load_into(rgb.params(), require(out / "stage2.ckpt", stage));
    BackboneNet base = fresh_backbone(cfg);
    FlowModel flow = fresh_flow(cfg, base);
    load_into(flow.params(), require(out / "flow.ckpt", stage));
    const FlowBank bank = bank_for(cfg, data, out);
    Metrics m;
    if (tc.fusion == Fusion::kAverage) {
      if (data.has_split(tc.val_split)) {
        m.final = evaluate_average_fusion(rgb, flow, data, bank, data.split(tc.val_split), tc);
      }
    } else {
      JointModel joint(std::move(rgb), std::move(flow));
      try {
        m = train_joint(joint, data, bank, tc);
      } catch (const DivergenceError&) {
        save_checkpoint(out / "joint.ckpt", joint.params());
        throw;
      }
      if (m.epochs.empty() && data.has_split(tc.val_split)) {
        m.final = evaluate_joint(joint, data, bank, data.split(tc.val_split), tc);
      }
      save_checkpoint(out / "joint.ckpt", joint.params());
    }
    write_stage_outputs(out, stage, m);
    print_result(stage + " (" + to_string(tc.fusion) + ")", m);
    return kOk;
  }
  throw ConfigError("unknown stage '" + stage + "' (expected pretrain|stage1|stage2|flow|fuse)");
}

enum class Kind { kBackbone, kRgb, kFlow, kJoint };

Kind detect_kind(const ParamList& params) {
  bool rgb = false, flow = false, joint = false;
  for (const auto& p : params) {
    rgb = rgb || p.name.rfind("classifier.", 0) == 0;
    flow = flow || p.name.rfind("flownet.", 0) == 0;
    joint = joint || p.name.rfind("joint.", 0) == 0;
  }
  if (joint) return Kind::kJoint;
  if (flow) return Kind::kFlow;
  if (rgb) return Kind::kRgb;
  return Kind::kBackbone;
}

void export_attention(const RgbModel& model, const Dataset& data, const std::vector<std::size_t>& idx,
                      const TrainConfig& tc, const fs::path& dir) {
  fs::create_directories(dir);
  const std::size_t size = model.backbone.config().input_size;
  std::size_t count = 0;
  for (std::size_t i : idx) {
    const VideoClip& clip = data.clips[i];
    const auto frame_idx = sample_indices(clip.frames.size(), tc.frames);
    const auto frames = prepare_frames(clip, tc.frames, AugmentDraw{}, size);
    for (std::size_t j = 0; j < frames.size(); ++j) {
      const auto a = attended_frame_feature(model.backbone, frames[j], true);
      char name[32];
      std::snprintf(name, sizeof name, "_%04zu_att.pgm", frame_idx[j]);
      write_attention_pgm(dir / (clip.clip_id + name), a.map.raw, size);
      ++count;
    }
  }
  std::cout << "wrote " << count << " attention maps to " << dir << "\n";
}

void export_features(const std::vector<std::pair<std::string, std::size_t>>& ids, const std::vector<Tensor>& descs,
                     const fs::path& file) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw IoError("cannot write " + file.string());
  os.precision(17);
  for (std::size_t k = 0; k < descs.size(); ++k) {
    os << ids[k].first << ',' << ids[k].second;
    for (double v : descs[k].data()) os << ',' << v;
    os << '\n';
  }
}

int cmd_eval(const fs::path& ckpt, const std::string& split, const std::string& config,
             const std::vector<std::string>& overrides, const std::string& att_dir, const std::string& feat_file) {
  const fs::path run_dir = ckpt.parent_path().empty() ? fs::path(".") : ckpt.parent_path();
  const std::string cfg_file = config.empty() ? (run_dir / "config.txt").string() : config;
  if (!fs::exists(cfg_file)) throw IoError("no config found at " + cfg_file + " (pass --config)");
  const RunConfig cfg = resolve_config(cfg_file, overrides);
  const TrainConfig& tc = cfg.train;
  const ParamList saved = load_checkpoint(ckpt);
  const Kind kind = detect_kind(saved);
  if (kind == Kind::kBackbone) {
    throw ConfigError("checkpoint holds a pretrained backbone only; evaluate a stage1/stage2/flow/joint checkpoint");
  }
  const Dataset data = load_data(cfg);
  if (!data.has_split(split)) throw ConfigError("dataset has no split named '" + split + "'");
  const auto& idx = data.split(split);

  Evaluation ev;
  std::vector<Tensor> descs;
  std::optional<RgbModel> rgb_for_attention;
  if (kind == Kind::kRgb) {
    RgbModel model = fresh_rgb(cfg, fresh_backbone(cfg));
    assign_params(model.params(), saved);
    ev = evaluate_rgb(model, data, idx, tc);
    for (std::size_t i : idx) {
      descs.push_back(model.encode(prepare_frames(data.clips[i], tc.frames, AugmentDraw{},
                                                  cfg.backbone.input_size)).descriptor);
    }
    rgb_for_attention = std::move(model);
  } else {
    const FlowBank bank = bank_for(cfg, data, run_dir);
    if (kind == Kind::kFlow) {
      FlowModel model = fresh_flow(cfg, fresh_backbone(cfg));
      assign_params(model.params(), saved);
      ev = evaluate_flow(model, data, bank, idx, tc);
      for (std::size_t i : idx) {
        std::vector<Tensor> per_stack;
        for (std::size_t c : stack_centers(bank.flows[i].size(), tc.eval_stacks, tc.stack_depth)) {
          per_stack.push_back(model.descriptor(
              prepare_stack(bank.flows[i], c, tc.stack_depth, AugmentDraw{}, model.net.config().input_size)));
        }
        descs.push_back(mean_of(per_stack));
      }
    } else {
      JointModel model(fresh_rgb(cfg, fresh_backbone(cfg)), fresh_flow(cfg, fresh_backbone(cfg)));
      assign_params(model.params(), saved);
      ev = evaluate_joint(model, data, bank, idx, tc);
      for (std::size_t i : idx) {
        descs.push_back(model.rgb.encode(prepare_frames(data.clips[i], tc.frames, AugmentDraw{},
                                                        cfg.backbone.input_size)).descriptor);
      }
      rgb_for_attention = std::move(model.rgb);
    }
  }
  std::cout << "accuracy " << ev.correct() << "/" << ev.total() << " = " << ev.accuracy() << "\n";
  write_confusion_csv(run_dir / ("eval_" + split + "_confusion.csv"), ev);
  if (!att_dir.empty()) {
    if (!rgb_for_attention) throw ConfigError("attention export needs an appearance-stream checkpoint");
    export_attention(*rgb_for_attention, data, idx, tc, att_dir);
  }
  if (!feat_file.empty()) {
    std::vector<std::pair<std::string, std::size_t>> ids;
    for (std::size_t i : idx) ids.emplace_back(data.clips[i].clip_id, clip_label(data.clips[i], data.spec, tc));
    export_features(ids, descs, feat_file);
  }
  return kOk;
}

int cmd_verify(const std::string& suite, const std::string& fault) {
  if (fault == "conv-sign-flip") debug::set_fault(debug::Fault::kConvBackwardSignFlip);
  else if (!fault.empty()) throw ConfigError("unknown fault '" + fault + "'");
  const auto checks = run_suite(suite);
  print_checks(std::cout, checks);
  const bool ok = all_passed(checks);
  std::cout << (ok ? "all checks passed" : "verification FAILED") << "\n";
  return ok ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Egocentric activity recognition with CAM spatial attention and convLSTM"};
  app.set_version_flag("--version", std::string(EGOATTN_VERSION));
  app.require_subcommand(1);

  std::string spec_file, out_dir, split_policy;
  bool force = false;
  auto* gen = app.add_subcommand("generate-data", "Materialize the synthetic video dataset");
  gen->add_option("--spec", spec_file, "config file with data.* keys")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty output directory");
  gen->add_option("--split", split_policy, "fixed|loso");

  std::string config, stage, run_dir;
  std::vector<std::string> overrides;
  double epochs_factor = 0.0;
  auto* train = app.add_subcommand("train", "Run one training stage");
  train->add_option("--config", config, "run config file")->required();
  train->add_option("--stage", stage, "pretrain|stage1|stage2|flow|fuse")
      ->required()
      ->check(CLI::IsMember({"pretrain", "stage1", "stage2", "flow", "fuse"}));
  train->add_option("--out", run_dir, "run directory")->required();
  train->add_option("--epochs-factor", epochs_factor, "divide every epoch count by this factor");
  train->add_option("--set", overrides, "override a config key (key=value), repeatable");

  std::string ckpt, split = "test", att_dir, feat_file, eval_config;
  std::vector<std::string> eval_overrides;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval->add_option("--split", split, "split name (train, test, subject<k>)");
  eval->add_option("--config", eval_config, "run config (default: config.txt beside the checkpoint)");
  eval->add_option("--set", eval_overrides, "override a config key (key=value), repeatable");
  eval->add_option("--export-attention", att_dir, "directory for per-frame attention PGMs");
  eval->add_option("--export-features", feat_file, "CSV of clip descriptors");

  std::string suite = "all", fault;
  auto* verify = app.add_subcommand("verify", "Run the verification suites");
  verify->add_option("--suite", suite, "grad|oracle|flow|all")->check(CLI::IsMember({"grad", "oracle", "flow", "all"}));
  verify->add_option("--inject-fault", fault, "")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_generate(spec_file, out_dir, force, split_policy);
    if (*train) {
      if (epochs_factor > 0.0) {
        std::ostringstream os;
        os.precision(17);
        os << "train.epochs_factor=" << epochs_factor;
        overrides.push_back(os.str());
      }
      return cmd_train(config, stage, run_dir, overrides);
    }
    if (*eval) return cmd_eval(ckpt, split, eval_config, eval_overrides, att_dir, feat_file);
    if (*verify) return cmd_verify(suite, fault);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerifyFailed;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
