#include "egoattn/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "egoattn/errors.h"

namespace egoattn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError("invalid boolean '" + text + "' for key '" + key + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + std::to_string(v[k]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Member>
Field size_field(std::string key, Member m) {
  return {key, [m, key](RunConfig& c, const std::string& v) { m(c) = parse_number<std::size_t>(key, v); },
          [m](const RunConfig& c) { return std::to_string(m(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Field double_field(std::string key, Member m) {
  return {key, [m, key](RunConfig& c, const std::string& v) { m(c) = parse_number<double>(key, v); },
          [m](const RunConfig& c) { return fmt(m(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Field bool_field(std::string key, Member m) {
  return {key, [m, key](RunConfig& c, const std::string& v) { m(c) = parse_bool(key, v); },
          [m](const RunConfig& c) { return std::string(m(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Member>
Field list_field(std::string key, Member m) {
  return {key, [m, key](RunConfig& c, const std::string& v) { m(c) = parse_list(key, v); },
          [m](const RunConfig& c) { return fmt(m(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Field string_field(std::string key, Member m) {
  return {key, [m](RunConfig& c, const std::string& v) { m(c) = v; },
          [m](const RunConfig& c) { return m(const_cast<RunConfig&>(c)); }};
}

template <class Member, class Parse, class Print>
Field enum_field(std::string key, Member m, Parse parse, Print print) {
  return {key, [m, parse](RunConfig& c, const std::string& v) { m(c) = parse(v); },
          [m, print](const RunConfig& c) { return print(m(const_cast<RunConfig&>(c))); }};
}

void add_stage(std::vector<Field>& f, const std::string& name, StageConfig TrainConfig::*stage) {
  auto s = [stage](RunConfig& c) -> StageConfig& { return c.train.*stage; };
  f.push_back(size_field(name + ".epochs", [s](RunConfig& c) -> std::size_t& { return s(c).epochs; }));
  f.push_back(double_field(name + ".lr", [s](RunConfig& c) -> double& { return s(c).lr; }));
  f.push_back(double_field(name + ".decay", [s](RunConfig& c) -> double& { return s(c).decay; }));
  f.push_back(list_field(name + ".decay_epochs",
                         [s](RunConfig& c) -> std::vector<std::size_t>& { return s(c).decay_epochs; }));
  f.push_back(bool_field(name + ".decay_every_epoch", [s](RunConfig& c) -> bool& { return s(c).decay_every_epoch; }));
  f.push_back(enum_field(
      name + ".optimizer", [s](RunConfig& c) -> OptimizerKind& { return s(c).optimizer; }, parse_optimizer,
      [](OptimizerKind v) { return to_string(v); }));
  f.push_back(double_field(name + ".weight_decay", [s](RunConfig& c) -> double& { return s(c).weight_decay; }));
  f.push_back(size_field(name + ".batch", [s](RunConfig& c) -> std::size_t& { return s(c).batch; }));
}

#define EGO_REF(type, expr) [](RunConfig& c) -> type& { return expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("data.dir", EGO_REF(std::string, c.dataset_dir)));
    f.push_back(size_field("data.num_verbs", EGO_REF(std::size_t, c.data.num_verbs)));
    f.push_back(size_field("data.num_objects", EGO_REF(std::size_t, c.data.num_objects)));
    f.push_back(size_field("data.clips_per_class", EGO_REF(std::size_t, c.data.clips_per_class)));
    f.push_back(size_field("data.distractors", EGO_REF(std::size_t, c.data.distractors)));
    f.push_back(size_field("data.frame_size", EGO_REF(std::size_t, c.data.frame_size)));
    f.push_back(size_field("data.frames_per_clip", EGO_REF(std::size_t, c.data.frames_per_clip)));
    f.push_back(double_field("data.camera_jitter", EGO_REF(double, c.data.camera_jitter)));
    f.push_back(size_field("data.seed", EGO_REF(std::uint64_t, c.data.seed)));
    f.push_back(enum_field("data.split", EGO_REF(SplitPolicy, c.data.split), parse_split_policy,
                           [](SplitPolicy p) { return to_string(p); }));
    f.push_back(size_field("data.num_subjects", EGO_REF(std::size_t, c.data.num_subjects)));
    f.push_back(size_field("data.test_subject", EGO_REF(std::size_t, c.data.test_subject)));

    f.push_back(size_field("backbone.input_size", EGO_REF(std::size_t, c.backbone.input_size)));
    f.push_back(list_field("backbone.channels", EGO_REF(std::vector<std::size_t>, c.backbone.channels)));
    f.push_back(list_field("backbone.strides", EGO_REF(std::vector<std::size_t>, c.backbone.strides)));
    f.push_back(size_field("backbone.kernel_size", EGO_REF(std::size_t, c.backbone.kernel_size)));
    f.push_back(size_field("backbone.num_pretrain_classes", EGO_REF(std::size_t, c.backbone.num_pretrain_classes)));

    f.push_back(size_field("train.seed", EGO_REF(std::uint64_t, c.train.seed)));
    f.push_back(double_field("train.epochs_factor", EGO_REF(double, c.train.epochs_factor)));
    f.push_back(double_field("train.dropout", EGO_REF(double, c.train.dropout)));
    f.push_back(double_field("train.momentum", EGO_REF(double, c.train.momentum)));
    f.push_back(double_field("train.adam_beta1", EGO_REF(double, c.train.adam_beta1)));
    f.push_back(double_field("train.adam_beta2", EGO_REF(double, c.train.adam_beta2)));
    f.push_back(double_field("train.adam_eps", EGO_REF(double, c.train.adam_eps)));
    f.push_back(size_field("train.frames", EGO_REF(std::size_t, c.train.frames)));
    f.push_back(size_field("train.eval_stacks", EGO_REF(std::size_t, c.train.eval_stacks)));
    f.push_back(size_field("train.stack_depth", EGO_REF(std::size_t, c.train.stack_depth)));
    f.push_back(size_field("train.hidden", EGO_REF(std::size_t, c.train.hidden)));
    f.push_back(size_field("train.lstm_kernel", EGO_REF(std::size_t, c.train.lstm_kernel)));
    f.push_back(size_field("train.lrcn_hidden", EGO_REF(std::size_t, c.train.lrcn_hidden)));
    f.push_back(size_field("train.pretrain_per_class", EGO_REF(std::size_t, c.train.pretrain_per_class)));
    f.push_back(bool_field("train.attention", EGO_REF(bool, c.train.attention)));
    f.push_back(enum_field("train.recurrent", EGO_REF(Recurrent, c.train.recurrent), parse_recurrent,
                           [](Recurrent v) { return to_string(v); }));
    f.push_back(enum_field("train.flow", EGO_REF(FlowKind, c.train.flow_kind), parse_flow_kind,
                           [](FlowKind v) { return to_string(v); }));
    f.push_back(enum_field("train.fusion", EGO_REF(Fusion, c.train.fusion), parse_fusion,
                           [](Fusion v) { return to_string(v); }));
    f.push_back(enum_field("train.gate_variant", EGO_REF(GateVariant, c.train.gate), parse_gate_variant,
                           [](GateVariant v) { return to_string(v); }));
    f.push_back(list_field("train.merge_objects", EGO_REF(std::vector<std::size_t>, c.train.merge_objects)));
    f.push_back(size_field("train.val_every", EGO_REF(std::size_t, c.train.val_every)));
    f.push_back(string_field("train.val_split", EGO_REF(std::string, c.train.val_split)));
    f.push_back(string_field("train.train_split", EGO_REF(std::string, c.train.train_split)));
    add_stage(f, "pretrain", &TrainConfig::pretrain);
    add_stage(f, "stage1", &TrainConfig::stage1);
    add_stage(f, "stage2", &TrainConfig::stage2);
    add_stage(f, "flow", &TrainConfig::flow);
    add_stage(f, "joint", &TrainConfig::joint);

    f.push_back(double_field("tvl1.lambda", EGO_REF(double, c.tvl1.lambda)));
    f.push_back(double_field("tvl1.theta", EGO_REF(double, c.tvl1.theta)));
    f.push_back(double_field("tvl1.tau", EGO_REF(double, c.tvl1.tau)));
    f.push_back(size_field("tvl1.warps", EGO_REF(std::size_t, c.tvl1.warps)));
    f.push_back(size_field("tvl1.scales", EGO_REF(std::size_t, c.tvl1.scales)));
    f.push_back(double_field("tvl1.zoom", EGO_REF(double, c.tvl1.zoom)));
    f.push_back(size_field("tvl1.iterations", EGO_REF(std::size_t, c.tvl1.iterations)));
    f.push_back(double_field("tvl1.epsilon", EGO_REF(double, c.tvl1.epsilon)));
    f.push_back(size_field("tvl1.min_size", EGO_REF(std::size_t, c.tvl1.min_size)));
    f.push_back(string_field("flow.cache_dir", EGO_REF(std::string, c.flow_cache)));
    return f;
  }();
  return table;
}

#undef EGO_REF

}  // namespace

void RunConfig::validate() const {
  data.validate();
  backbone.validate();
  train.validate();
  if (backbone.in_channels != 3) throw ConfigError("RGB backbone needs 3 input channels");
  if (train.frames > data.frames_per_clip) {
    throw ConfigError("train.frames exceeds data.frames_per_clip");
  }
  for (std::size_t o : train.merge_objects) {
    if (o >= data.num_objects) throw ConfigError("train.merge_objects names object " + std::to_string(o) +
                                                 " but the dataset has " + std::to_string(data.num_objects));
  }
  if (!(tvl1.zoom > 0.0 && tvl1.zoom < 1.0)) throw ConfigError("tvl1.zoom must lie in (0,1)");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set_config_value(cfg, trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace egoattn
