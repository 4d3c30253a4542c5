#pragma once

#include <map>
#include <string>

#include "skillroute/domain.hpp"
#include "skillroute/policy.hpp"

namespace skillroute {

struct SegmentKappa {
  double kappa = 0.0;
  size_t support = 0;
};

// Per-segment expected overlap between a policy and the reference:
// mean of [1 - ||pi(X) - ref(X)||_1 / 2] over the segment's interactions.
std::map<std::string, SegmentKappa> compute_kappa(const RoutingPolicy& policy,
                                                  const RoutingPolicy& reference,
                                                  const Dataset& validation);

// Reference-policy decision rate: 0 when kappa already meets the target,
// else (target - kappa) / (1 - kappa). Always in [0, 1).
double compute_rpdr(double kappa, double kappa_target);

// Stochastic mixture of the replication and learning policies, dispatched
// per request by the top intent's RPDR.
class HybridPolicy final : public RoutingPolicy {
 public:
  PolicyParams rp;
  PolicyParams lp;
  std::map<std::string, double> rpdr_table;
  double default_rpdr = 1.0;
  double kappa_target = 0.90;
  std::string artifact_id;
  std::string parent_artifact_id;

  double rpdr_for(const std::string& segment) const {
    const auto it = rpdr_table.find(segment);
    return it == rpdr_table.end() ? default_rpdr : it->second;
  }

  // The exact marginal of the two-stage dispatch:
  // rpdr * RP(.|X) + (1 - rpdr) * LP(.|X). This is what gets logged as the
  // propensity for the next refresh.
  ActionDistribution distribution(const std::vector<CandidateRecord>& candidates) const override;

  const std::string& id() const override { return artifact_id; }
  void save_artifact(const std::string& path) const override;

  void validate() const;
};

enum class Submodel { kRP, kLP };

struct RoutedAction {
  size_t action = 0;
  double propensity = 0.0;  // mixture propensity, not the submodel's
  Submodel submodel = Submodel::kRP;
};

// Draws the submodel ~ Bernoulli(rpdr), samples the action from it, and
// returns the mixture propensity so downstream IPS stays unbiased.
RoutedAction hp_route(const HybridPolicy& hp, const std::vector<CandidateRecord>& candidates,
                      Rng& rng);

struct BuildHpOptions {
  double kappa_target = 0.90;
  double default_rpdr = 1.0;
  size_t min_segment_support = 30;
  // Reference whose behavior the RPDR floor protects; when null, RP's own
  // distribution stands in for the previous policy.
  const RoutingPolicy* reference = nullptr;
};

// Computes kappa for LP against the reference on the validation split and
// fills the RPDR table for every segment with enough support.
HybridPolicy build_hp(const PolicyParams& rp, const PolicyParams& lp, const Dataset& validation,
                      const BuildHpOptions& options, std::string artifact_id);

HybridPolicy load_hybrid(const std::string& path);

}  // namespace skillroute
