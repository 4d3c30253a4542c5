#include "skillroute/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace skillroute {

using nlohmann::json;

void ActionDistribution::validate() const {
  if (propensities.empty()) throw std::logic_error("ActionDistribution: empty");
  double sum = 0.0;
  for (double p : propensities) {
    if (!(p > 0.0)) throw std::logic_error("ActionDistribution: non-positive propensity");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::logic_error("ActionDistribution: propensities sum to " + std::to_string(sum));
  }
}

size_t argmax_index(const ActionDistribution& dist) {
  size_t best = 0;
  for (size_t i = 1; i < dist.size(); ++i) {
    if (dist[i] > dist[best]) best = i;
  }
  return best;
}

double l1_distance(const ActionDistribution& a, const ActionDistribution& b) {
  if (a.size() != b.size()) throw std::invalid_argument("l1_distance: size mismatch");
  double d = 0.0;
  for (size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

namespace {

int vocab_index(const std::vector<std::string>& vocab, const std::string& token) {
  const auto it = std::lower_bound(vocab.begin(), vocab.end(), token);
  if (it != vocab.end() && *it == token) return static_cast<int>(it - vocab.begin());
  return static_cast<int>(vocab.size());  // OOV slot
}

}  // namespace

int PolicyParams::intent_index(const std::string& token) const {
  return vocab_index(schema.intent_vocab, token);
}
int PolicyParams::skill_index(const std::string& token) const {
  return vocab_index(schema.skill_vocab, token);
}
int PolicyParams::context_index(const std::string& token) const {
  return vocab_index(schema.context_vocab, token);
}

PolicyParams make_policy_params(const FeatureSchema& schema, int embed_dim, int hidden_dim,
                                ParamInit init, uint64_t seed, std::string artifact_id) {
  if (embed_dim < 1 || hidden_dim < 1) {
    throw std::invalid_argument("make_policy_params: dimensions must be positive");
  }
  PolicyParams p;
  p.schema = schema;
  p.embed_dim = embed_dim;
  p.hidden_dim = hidden_dim;
  p.artifact_id = std::move(artifact_id);
  p.theta = Eigen::VectorXd::Zero(p.param_count());
  if (init == ParamInit::kScaledRandom) {
    Rng rng(derive_seed(seed, "param-init"));
    const double emb_scale = 0.1;
    const double w1_scale = std::sqrt(2.0 / p.feature_dim());
    const double w2_scale = std::sqrt(2.0 / p.hidden_dim);
    for (int i = 0; i < p.offset_w1(); ++i) p.theta[i] = emb_scale * rng.normal();
    for (int i = p.offset_w1(); i < p.offset_b1(); ++i) p.theta[i] = w1_scale * rng.normal();
    for (int i = p.offset_w2(); i < p.offset_b2(); ++i) p.theta[i] = w2_scale * rng.normal();
    // biases stay zero
  }
  return p;
}

Eigen::VectorXd featurize(const CandidateRecord& candidate, const PolicyParams& params) {
  const int de = params.embed_dim;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(params.feature_dim());
  f.segment(0, de) = params.intent_embedding().col(params.intent_index(candidate.intent_id));
  f.segment(de, de) = params.skill_embedding().col(params.skill_index(candidate.skill_id));
  for (const auto& token : candidate.categorical_context) {
    f.segment(2 * de, de) += params.context_embedding().col(params.context_index(token));
  }
  const int nd = static_cast<int>(candidate.numeric_context.size());
  if (nd != params.schema.numeric_dim) {
    throw ValidationError("featurize: numeric_context dimension " + std::to_string(nd) +
                          " does not match schema dimension " +
                          std::to_string(params.schema.numeric_dim));
  }
  for (int i = 0; i < nd; ++i) f[3 * de + i] = candidate.numeric_context[i];
  f[3 * de + nd] = candidate.nlu_confidence;
  return f;
}

Eigen::VectorXd score_logits(const PolicyParams& params,
                             const std::vector<CandidateRecord>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("score: empty candidate set");
  const auto w1 = params.scorer_w1();
  const auto b1 = params.scorer_b1();
  const auto w2 = params.scorer_w2();
  const double b2 = params.scorer_b2();
  Eigen::VectorXd logits(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    const Eigen::VectorXd f = featurize(candidates[i], params);
    const Eigen::VectorXd hidden = (w1 * f + b1).cwiseMax(0.0);
    logits[static_cast<Eigen::Index>(i)] = w2.dot(hidden) + b2;
  }
  return logits;
}

ActionDistribution softmax(const Eigen::VectorXd& logits) {
  const double max_logit = logits.maxCoeff();
  Eigen::VectorXd exps = (logits.array() - max_logit).exp();
  const double total = exps.sum();
  ActionDistribution dist;
  dist.propensities.resize(static_cast<size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    dist.propensities[static_cast<size_t>(i)] = exps[i] / total;
  }
  dist.validate();
  return dist;
}

ActionDistribution score(const PolicyParams& params,
                         const std::vector<CandidateRecord>& candidates) {
  return softmax(score_logits(params, candidates));
}

SampledAction sample_action(const ActionDistribution& dist, Rng& rng) {
  const size_t a = rng.categorical(dist.propensities);
  return {a, dist[a]};
}

SampledAction sample_action(const PolicyParams& params,
                            const std::vector<CandidateRecord>& candidates, Rng& rng) {
  return sample_action(score(params, candidates), rng);
}

size_t argmax_action(const PolicyParams& params,
                     const std::vector<CandidateRecord>& candidates) {
  return argmax_index(score(params, candidates));
}

ActionDistribution GreedyPolicy::distribution(
    const std::vector<CandidateRecord>& candidates) const {
  const size_t best = argmax_index(base_->distribution(candidates));
  ActionDistribution dist;
  dist.propensities.assign(candidates.size(), 0.0);
  dist.propensities[best] = 1.0;
  return dist;
}

namespace {

json schema_to_json(const FeatureSchema& s) {
  return json{{"version", s.version},
              {"numeric_dim", s.numeric_dim},
              {"intent_vocab", s.intent_vocab},
              {"skill_vocab", s.skill_vocab},
              {"context_vocab", s.context_vocab}};
}

FeatureSchema schema_from_json(const json& j) {
  FeatureSchema s;
  s.version = j.at("version").get<int>();
  s.numeric_dim = j.at("numeric_dim").get<int>();
  s.intent_vocab = j.at("intent_vocab").get<std::vector<std::string>>();
  s.skill_vocab = j.at("skill_vocab").get<std::vector<std::string>>();
  s.context_vocab = j.at("context_vocab").get<std::vector<std::string>>();
  return s;
}

}  // namespace

void save_policy(const PolicyParams& params, const std::string& path) {
  json j{{"format_version", 1},
         {"type", "softmax"},
         {"artifact_id", params.artifact_id},
         {"parent_artifact_id", params.parent_artifact_id},
         {"embed_dim", params.embed_dim},
         {"hidden_dim", params.hidden_dim},
         {"schema", schema_to_json(params.schema)},
         {"theta", std::vector<double>(params.theta.data(),
                                       params.theta.data() + params.theta.size())}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_policy: cannot open " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("save_policy: write failed for " + path);
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_policy: cannot open " + path);
  json j = json::parse(in);
  if (j.at("type").get<std::string>() != "softmax") {
    throw std::runtime_error("load_policy: '" + path + "' is not a softmax policy artifact");
  }
  if (j.at("format_version").get<int>() != 1) {
    throw std::runtime_error("load_policy: unsupported format version in " + path);
  }
  PolicyParams p;
  p.artifact_id = j.at("artifact_id").get<std::string>();
  p.parent_artifact_id = j.at("parent_artifact_id").get<std::string>();
  p.embed_dim = j.at("embed_dim").get<int>();
  p.hidden_dim = j.at("hidden_dim").get<int>();
  p.schema = schema_from_json(j.at("schema"));
  const auto values = j.at("theta").get<std::vector<double>>();
  if (static_cast<int>(values.size()) != p.param_count()) {
    throw std::runtime_error("load_policy: theta size does not match schema in " + path);
  }
  p.theta = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
  return p;
}

void SoftmaxPolicy::save_artifact(const std::string& path) const {
  save_policy(params_, path);
}

}  // namespace skillroute
