#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "skillroute/kv.hpp"
#include "skillroute/ope.hpp"

namespace skillroute {

struct SegmentOverride {
  std::optional<double> min_replication;
  std::optional<double> max_reward_regression;
};

// Expert-defined deployment guardrails. Regressions are absolute drops of
// expected_reward against the incumbent's report on the same log window.
struct GuardrailConfig {
  double min_overall_replication = 0.90;
  double max_reward_regression = 0.025;
  double min_expected_ips_weight = 0.9;
  double max_expected_ips_weight = 1.1;
  std::map<std::string, SegmentOverride> per_segment;
  std::set<std::string> critical_segments;  // zero regression tolerance

  void validate() const;
  static GuardrailConfig from_kv(const KvConfig& kv, const std::string& prefix = "gate.");
};

struct Violation {
  std::string code;     // machine-readable, e.g. "overall_reward_regression"
  std::string segment;  // "__overall__" for whole-report rules
  std::string metric;
  double threshold = 0.0;
  double observed = 0.0;
};

struct GateDecision {
  bool deploy = false;
  std::vector<Violation> violations;  // every violated rule, no short-circuit
};

// Pure function of the two reports and the config.
GateDecision decide(const OpeReport& candidate, const OpeReport& incumbent,
                    const GuardrailConfig& config);

void write_decision_json(const GateDecision& decision, const std::string& path);

}  // namespace skillroute
