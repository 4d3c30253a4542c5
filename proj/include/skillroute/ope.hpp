#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>

#include "json.hpp"
#include "skillroute/domain.hpp"
#include "skillroute/policy.hpp"

namespace skillroute {

struct Metric {
  double value = 0.0;
  std::optional<std::pair<double, double>> ci;  // filled by bootstrap()
};

// One segment's (or the overall) metric row. Defect strata split the rows
// by logged reward against the defect threshold; a stratum is absent when
// it has no interactions. L1 metrics are present only when the baseline's
// full distribution was supplied.
struct MetricBundle {
  size_t n = 0;
  Metric replication_rate;  // argmax agreement with the logged action
  std::optional<Metric> replication_defect;
  std::optional<Metric> replication_nondefect;
  Metric expected_match;  // propensity the policy puts on the logged action
  std::optional<Metric> l1_mean;
  std::optional<Metric> l1_std;
  Metric expected_reward;      // clipped IPS estimate
  Metric expected_ips_weight;  // ideally 1.0
  Metric stochastic_exploration_rate;  // 1 - max propensity
  std::optional<Metric> exploration_defect;
  std::optional<Metric> exploration_nondefect;
};

struct OpeReport {
  std::map<std::string, MetricBundle> per_segment;
  MetricBundle overall;
  size_t n_interactions = 0;
  std::string policy_artifact_id;
  std::string baseline_artifact_id;  // empty when no baseline was supplied
};

struct EvalOptions {
  std::optional<double> ips_clip = 10.0;
  double defect_threshold = 0.5;
  const RoutingPolicy* baseline = nullptr;  // enables the L1 metrics
};

// Pure fold over the logs; rejects datasets with non-positive propensities.
OpeReport evaluate(const RoutingPolicy& policy, const Dataset& logs, const EvalOptions& options);

// Percentile-bootstrap CIs over seeded resamples-with-replacement; the
// interval is widened to the point estimate when a resample draw lands
// entirely on one side of it.
OpeReport bootstrap(const RoutingPolicy& policy, const Dataset& logs, const EvalOptions& options,
                    int n_resamples = 8, double level = 0.95, uint64_t seed = 0);

nlohmann::json report_to_json(const OpeReport& report);
OpeReport report_from_json(const nlohmann::json& j);
void write_report_json(const OpeReport& report, const std::string& path);
OpeReport load_report_json(const std::string& path);

// Flat CSV: one row per segment plus a __overall__ row, stable column
// order, for diffing across refreshes.
void write_report_csv(const OpeReport& report, const std::string& path);

}  // namespace skillroute
