#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "egoattn/backbone.h"
#include "egoattn/data.h"
#include "egoattn/flow.h"
#include "egoattn/training.h"

namespace egoattn {

/// Everything a run needs, read from a plain `key = value` file. Lines
/// starting with '#' are comments. Unknown keys are rejected.
struct RunConfig {
  DatasetSpec data;
  BackboneConfig backbone;
  TrainConfig train;
  TvL1Params tvl1;
  std::string dataset_dir;  // generated dataset on disk; empty: generate from `data` in memory
  std::string flow_cache;   // flow cache directory; empty: recompute

  void validate() const;
};

/// Sets one key from its textual value; throws ConfigError naming the key.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved config, one `key = value` per line in config_keys() order.
/// Doubles are written with round-trip precision.
std::string to_text(const RunConfig& cfg);

}  // namespace egoattn
