#pragma once

#include <memory>
#include <string>
#include <vector>

#include "skillroute/domain.hpp"
#include "skillroute/kv.hpp"
#include "skillroute/policy.hpp"
#include "skillroute/rng.hpp"

namespace skillroute {

// Synthetic conversational traffic with exact per-(context, candidate)
// satisfaction probabilities. Stands in for live traffic: the enumeration
// oracle below is what OPE estimates get calibrated against.
struct EnvConfig {
  int n_segments = 6;
  int contexts_per_segment = 10;
  int min_candidates = 2;
  int max_candidates = 4;
  int numeric_dim = 4;
  double feature_noise = 0.05;
  // Fraction of contexts where the truly-best candidate differs from the
  // top-confidence one (the improvement headroom), and how large that gap
  // is. Headroom appears only from headroom_min_segment on: head segments
  // stay well-served, improvement opportunities sit in the tail.
  double headroom_fraction = 0.20;
  double headroom_margin = 0.25;
  int headroom_min_segment = 2;
  double segment_weight_decay = 0.65;  // geometric head->tail traffic skew
  int extra_skills = 4;
  int context_tokens = 6;
  // Near-deterministic logger, matching production-style replication rates;
  // anything much lower starves the gate's replication floor.
  double baseline_top_prob = 0.97;
  // Scenario hooks; -1 disables. Flip inverts every satisfaction
  // probability from the given cycle on; onboarding appends a new-skill
  // candidate in the first onboard_segments segments.
  int flip_rewards_at_cycle = -1;
  int onboard_at_cycle = -1;
  int onboard_segments = 2;

  void validate() const;
  static EnvConfig from_kv(const KvConfig& kv);
};

struct EnvContext {
  std::string context_id;
  int segment = 0;
  std::vector<CandidateRecord> candidates;  // clean features, descending confidence
  std::vector<double> true_reward_probs;    // per candidate, in [0, 1]
};

struct Environment {
  EnvConfig config;
  uint64_t seed = 0;
  int cycle = 0;  // which at_cycle() view this is
  FeatureSchema schema;
  std::vector<EnvContext> contexts;
  std::vector<double> context_weights;  // sums to 1

  // The environment as it looks at a given refresh cycle, with the flip /
  // onboarding hooks applied when configured.
  Environment at_cycle(int cycle) const;

  const EnvContext& sample_context(Rng& rng) const;
  std::string segment_token(int segment) const;
};

Environment gen_environment(const EnvConfig& config, uint64_t seed);

// Environment spec files store (config, seed); loading regenerates exactly.
void save_environment(const Environment& env, const std::string& path);
Environment load_environment(const std::string& path);

// Stochastic production stand-in: top-confidence candidate with probability
// top_prob, remainder spread uniformly. Full support.
class BaselinePolicy final : public RoutingPolicy {
 public:
  explicit BaselinePolicy(double top_prob, std::string id = "baseline")
      : top_prob_(top_prob), id_(std::move(id)) {}

  ActionDistribution distribution(const std::vector<CandidateRecord>& candidates) const override;
  const std::string& id() const override { return id_; }
  void save_artifact(const std::string& path) const override;

  double top_prob() const { return top_prob_; }

 private:
  double top_prob_;
  std::string id_;
};

std::shared_ptr<RoutingPolicy> make_baseline_policy(const Environment& env);

// Shared-signal jitter: one noise draw per request, applied to every
// candidate's numeric block.
std::vector<CandidateRecord> jitter_candidates(const EnvContext& ctx, double noise, Rng& rng);

// n interactions logged under the policy: weighted context draw, feature
// jitter, sampled routing, Bernoulli reward from the true probabilities.
Dataset collect_logs(const Environment& env, const RoutingPolicy& policy, size_t n,
                     uint64_t seed, const std::string& id_prefix = "i");

// Exact policy value at zero feature noise, by full enumeration.
double true_reward(const Environment& env, const RoutingPolicy& policy);

}  // namespace skillroute
