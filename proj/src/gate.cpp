#include "skillroute/gate.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace skillroute {

using nlohmann::json;

void GuardrailConfig::validate() const {
  if (!(min_overall_replication >= 0.0 && min_overall_replication <= 1.0)) {
    throw std::invalid_argument("GuardrailConfig: min_overall_replication outside [0, 1]");
  }
  if (max_reward_regression < 0.0) {
    throw std::invalid_argument("GuardrailConfig: max_reward_regression must be >= 0");
  }
  if (!(min_expected_ips_weight <= 1.0 && 1.0 <= max_expected_ips_weight)) {
    throw std::invalid_argument("GuardrailConfig: IPS weight band must contain 1.0");
  }
  for (const auto& [segment, ov] : per_segment) {
    if (ov.min_replication && !(*ov.min_replication >= 0.0 && *ov.min_replication <= 1.0)) {
      throw std::invalid_argument("GuardrailConfig: bad min_replication for segment " + segment);
    }
    if (ov.max_reward_regression && *ov.max_reward_regression < 0.0) {
      throw std::invalid_argument("GuardrailConfig: bad max_reward_regression for segment " +
                                  segment);
    }
  }
}

GuardrailConfig GuardrailConfig::from_kv(const KvConfig& kv, const std::string& prefix) {
  static const std::set<std::string> known = {
      "min_overall_replication", "max_reward_regression", "min_expected_ips_weight",
      "max_expected_ips_weight", "critical_segments"};
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string rest = key.substr(prefix.size());
    if (!known.count(rest) && rest.rfind("segment.", 0) != 0) {
      throw std::runtime_error("guardrail config: unknown key '" + key + "'");
    }
  }
  GuardrailConfig cfg;
  cfg.min_overall_replication =
      kv.get_double(prefix + "min_overall_replication", cfg.min_overall_replication);
  cfg.max_reward_regression =
      kv.get_double(prefix + "max_reward_regression", cfg.max_reward_regression);
  cfg.min_expected_ips_weight =
      kv.get_double(prefix + "min_expected_ips_weight", cfg.min_expected_ips_weight);
  cfg.max_expected_ips_weight =
      kv.get_double(prefix + "max_expected_ips_weight", cfg.max_expected_ips_weight);
  // critical_segments = seg_a,seg_b,...
  const std::string crit = kv.get_string(prefix + "critical_segments", "");
  size_t start = 0;
  while (start < crit.size()) {
    size_t comma = crit.find(',', start);
    if (comma == std::string::npos) comma = crit.size();
    const std::string token = crit.substr(start, comma - start);
    if (!token.empty()) cfg.critical_segments.insert(token);
    start = comma + 1;
  }
  // segment.<id>.min_replication / segment.<id>.max_reward_regression
  for (const auto& [key, value] : kv.entries()) {
    const std::string seg_prefix = prefix + "segment.";
    if (key.rfind(seg_prefix, 0) != 0) continue;
    const std::string rest = key.substr(seg_prefix.size());
    const auto dot = rest.rfind('.');
    if (dot == std::string::npos) {
      throw std::runtime_error("guardrail config: malformed key '" + key + "'");
    }
    const std::string segment = rest.substr(0, dot);
    const std::string field = rest.substr(dot + 1);
    auto& ov = cfg.per_segment[segment];
    if (field == "min_replication") {
      ov.min_replication = kv.get_double(key, 0.0);
    } else if (field == "max_reward_regression") {
      ov.max_reward_regression = kv.get_double(key, 0.0);
    } else {
      throw std::runtime_error("guardrail config: unknown per-segment field '" + field + "'");
    }
  }
  cfg.validate();
  return cfg;
}

GateDecision decide(const OpeReport& candidate, const OpeReport& incumbent,
                    const GuardrailConfig& config) {
  config.validate();
  GateDecision decision;
  auto violate = [&](std::string code, std::string segment, std::string metric, double threshold,
                     double observed) {
    decision.violations.push_back(
        {std::move(code), std::move(segment), std::move(metric), threshold, observed});
  };

  const double repl = candidate.overall.replication_rate.value;
  if (repl < config.min_overall_replication) {
    violate("overall_replication_below_min", "__overall__", "replication_rate",
            config.min_overall_replication, repl);
  }

  const double reward_delta =
      candidate.overall.expected_reward.value - incumbent.overall.expected_reward.value;
  if (reward_delta < -config.max_reward_regression) {
    violate("overall_reward_regression", "__overall__", "expected_reward",
            -config.max_reward_regression, reward_delta);
  }

  const double ips_w = candidate.overall.expected_ips_weight.value;
  if (ips_w < config.min_expected_ips_weight) {
    violate("ips_weight_out_of_band", "__overall__", "expected_ips_weight",
            config.min_expected_ips_weight, ips_w);
  } else if (ips_w > config.max_expected_ips_weight) {
    violate("ips_weight_out_of_band", "__overall__", "expected_ips_weight",
            config.max_expected_ips_weight, ips_w);
  }

  // Per-segment rules apply where the segment has traffic in the relevant
  // report(s); a segment absent from either side has nothing to compare.
  for (const auto& [segment, ov] : config.per_segment) {
    const auto cand_it = candidate.per_segment.find(segment);
    if (cand_it == candidate.per_segment.end()) continue;
    if (ov.min_replication) {
      const double seg_repl = cand_it->second.replication_rate.value;
      if (seg_repl < *ov.min_replication) {
        violate("segment_replication_below_min", segment, "replication_rate",
                *ov.min_replication, seg_repl);
      }
    }
    if (ov.max_reward_regression) {
      const auto inc_it = incumbent.per_segment.find(segment);
      if (inc_it != incumbent.per_segment.end()) {
        const double delta =
            cand_it->second.expected_reward.value - inc_it->second.expected_reward.value;
        if (delta < -*ov.max_reward_regression) {
          violate("segment_reward_regression", segment, "expected_reward",
                  -*ov.max_reward_regression, delta);
        }
      }
    }
  }

  for (const auto& segment : config.critical_segments) {
    const auto cand_it = candidate.per_segment.find(segment);
    const auto inc_it = incumbent.per_segment.find(segment);
    if (cand_it == candidate.per_segment.end() || inc_it == incumbent.per_segment.end()) continue;
    const double delta =
        cand_it->second.expected_reward.value - inc_it->second.expected_reward.value;
    if (delta < 0.0) {
      violate("critical_segment_regression", segment, "expected_reward", 0.0, delta);
    }
  }

  decision.deploy = decision.violations.empty();
  return decision;
}

void write_decision_json(const GateDecision& decision, const std::string& path) {
  json violations = json::array();
  for (const auto& v : decision.violations) {
    violations.push_back(json{{"code", v.code},
                              {"segment", v.segment},
                              {"metric", v.metric},
                              {"threshold", v.threshold},
                              {"observed", v.observed}});
  }
  json j{{"decision", decision.deploy ? "deploy" : "abort"}, {"violations", std::move(violations)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_decision_json: cannot open " + path);
  out << j.dump(2) << '\n';
}

}  // namespace skillroute
