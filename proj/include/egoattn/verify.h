#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace egoattn {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured error or statistic
  double tolerance = 0.0;  // pass threshold on `value`
  std::string detail;
};

/// Central-difference checks of every differentiable op and the composed
/// frame -> CAM -> attention -> convLSTM -> classifier -> loss path.
std::vector<CheckResult> run_grad_suite();
/// Brute-force loop oracles, hand-derived scalar cell values and the
/// attention normalization invariants.
std::vector<CheckResult> run_oracle_suite();
/// TV-L1 on synthetic translations, warp compensation of pans,
/// cross-modality initialization.
std::vector<CheckResult> run_flow_suite();

/// suite: grad | oracle | flow | all. Throws ConfigError for other names.
std::vector<CheckResult> run_suite(const std::string& suite);

void print_checks(std::ostream& os, const std::vector<CheckResult>& checks);
bool all_passed(const std::vector<CheckResult>& checks);

}  // namespace egoattn
