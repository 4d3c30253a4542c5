#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "skillroute/domain.hpp"
#include "skillroute/rng.hpp"

namespace skillroute {

// Softmax output over a candidate set. Entries are strictly positive and
// sum to 1 within 1e-9 whenever produced by a softmax policy.
struct ActionDistribution {
  std::vector<double> propensities;

  size_t size() const { return propensities.size(); }
  double operator[](size_t i) const { return propensities[i]; }
  void validate() const;
};

size_t argmax_index(const ActionDistribution& dist);  // ties -> lowest index
double l1_distance(const ActionDistribution& a, const ActionDistribution& b);

// Learnable parameters of the routing policy: three embedding tables (each
// with a trailing out-of-vocabulary slot) and a shared two-layer scorer,
// all packed into one flat vector so optimizers and finite-difference
// checks address coordinates uniformly.
//
// Layout: [intent emb | skill emb | context emb | W1 | b1 | w2 | b2], with
// each embedding stored column-per-token (embed_dim x (vocab+1)) and W1
// stored column-major (hidden_dim x feature_dim).
class PolicyParams {
 public:
  FeatureSchema schema;
  int embed_dim = 8;
  int hidden_dim = 32;
  Eigen::VectorXd theta;
  std::string artifact_id;
  std::string parent_artifact_id;

  int feature_dim() const { return 3 * embed_dim + schema.numeric_dim + 1; }
  int intent_slots() const { return static_cast<int>(schema.intent_vocab.size()) + 1; }
  int skill_slots() const { return static_cast<int>(schema.skill_vocab.size()) + 1; }
  int context_slots() const { return static_cast<int>(schema.context_vocab.size()) + 1; }

  int offset_intent() const { return 0; }
  int offset_skill() const { return offset_intent() + embed_dim * intent_slots(); }
  int offset_context() const { return offset_skill() + embed_dim * skill_slots(); }
  int offset_w1() const { return offset_context() + embed_dim * context_slots(); }
  int offset_b1() const { return offset_w1() + hidden_dim * feature_dim(); }
  int offset_w2() const { return offset_b1() + hidden_dim; }
  int offset_b2() const { return offset_w2() + hidden_dim; }
  int param_count() const { return offset_b2() + 1; }

  // Token -> column index; unseen tokens map to the trailing OOV slot.
  int intent_index(const std::string& token) const;
  int skill_index(const std::string& token) const;
  int context_index(const std::string& token) const;

  Eigen::Map<const Eigen::MatrixXd> intent_embedding() const {
    return {theta.data() + offset_intent(), embed_dim, intent_slots()};
  }
  Eigen::Map<const Eigen::MatrixXd> skill_embedding() const {
    return {theta.data() + offset_skill(), embed_dim, skill_slots()};
  }
  Eigen::Map<const Eigen::MatrixXd> context_embedding() const {
    return {theta.data() + offset_context(), embed_dim, context_slots()};
  }
  Eigen::Map<const Eigen::MatrixXd> scorer_w1() const {
    return {theta.data() + offset_w1(), hidden_dim, feature_dim()};
  }
  Eigen::Map<const Eigen::VectorXd> scorer_b1() const {
    return {theta.data() + offset_b1(), hidden_dim};
  }
  Eigen::Map<const Eigen::VectorXd> scorer_w2() const {
    return {theta.data() + offset_w2(), hidden_dim};
  }
  double scorer_b2() const { return theta[offset_b2()]; }

  bool operator==(const PolicyParams& other) const {
    return schema == other.schema && embed_dim == other.embed_dim &&
           hidden_dim == other.hidden_dim && theta == other.theta &&
           artifact_id == other.artifact_id && parent_artifact_id == other.parent_artifact_id;
  }
};

enum class ParamInit { kZeros, kScaledRandom };

PolicyParams make_policy_params(const FeatureSchema& schema, int embed_dim, int hidden_dim,
                                ParamInit init, uint64_t seed, std::string artifact_id);

// Feature vector for one candidate:
// [intent emb | skill emb | sum of context emb | numeric context | confidence].
Eigen::VectorXd featurize(const CandidateRecord& candidate, const PolicyParams& params);

// Per-candidate logits from the shared scorer.
Eigen::VectorXd score_logits(const PolicyParams& params,
                             const std::vector<CandidateRecord>& candidates);

// Max-subtracted softmax over the candidate logits.
ActionDistribution score(const PolicyParams& params,
                         const std::vector<CandidateRecord>& candidates);

ActionDistribution softmax(const Eigen::VectorXd& logits);

struct SampledAction {
  size_t action;
  double propensity;
};

SampledAction sample_action(const ActionDistribution& dist, Rng& rng);
SampledAction sample_action(const PolicyParams& params,
                            const std::vector<CandidateRecord>& candidates, Rng& rng);
size_t argmax_action(const PolicyParams& params,
                     const std::vector<CandidateRecord>& candidates);

// Anything that maps a candidate set to an action distribution: trained
// softmax policies, the hybrid mixture, and the simulator baseline.
class RoutingPolicy {
 public:
  virtual ~RoutingPolicy() = default;
  virtual ActionDistribution distribution(const std::vector<CandidateRecord>& candidates) const = 0;
  virtual const std::string& id() const = 0;
  virtual void save_artifact(const std::string& path) const = 0;
};

class SoftmaxPolicy final : public RoutingPolicy {
 public:
  explicit SoftmaxPolicy(PolicyParams params) : params_(std::move(params)) {}

  ActionDistribution distribution(const std::vector<CandidateRecord>& candidates) const override {
    return score(params_, candidates);
  }
  const std::string& id() const override { return params_.artifact_id; }
  void save_artifact(const std::string& path) const override;

  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
};

// One-hot wrapper around another policy's argmax; evaluation-only ablation
// (its distribution has zero entries, so it must not produce logs for IPS).
class GreedyPolicy final : public RoutingPolicy {
 public:
  explicit GreedyPolicy(std::shared_ptr<const RoutingPolicy> base)
      : base_(std::move(base)), id_("greedy(" + base_->id() + ")") {}

  ActionDistribution distribution(const std::vector<CandidateRecord>& candidates) const override;
  const std::string& id() const override { return id_; }
  void save_artifact(const std::string&) const override {
    throw std::runtime_error("greedy wrapper is not a persistent artifact");
  }

 private:
  std::shared_ptr<const RoutingPolicy> base_;
  std::string id_;
};

// Versioned JSON artifact; load(save(p)) reproduces scores bit-identically.
void save_policy(const PolicyParams& params, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace skillroute
