#include "skillroute/hybrid.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace skillroute {

using nlohmann::json;

std::map<std::string, SegmentKappa> compute_kappa(const RoutingPolicy& policy,
                                                  const RoutingPolicy& reference,
                                                  const Dataset& validation) {
  if (validation.interactions.empty()) {
    throw std::invalid_argument("compute_kappa: empty validation set");
  }
  std::map<std::string, SegmentKappa> acc;
  for (const auto& it : validation.interactions) {
    const ActionDistribution pi = policy.distribution(it.candidates);
    const ActionDistribution ref = reference.distribution(it.candidates);
    const double overlap = 1.0 - l1_distance(pi, ref) / 2.0;
    auto& entry = acc[it.segment_id];
    entry.kappa += overlap;
    entry.support += 1;
  }
  for (auto& [seg, entry] : acc) entry.kappa /= static_cast<double>(entry.support);
  return acc;
}

double compute_rpdr(double kappa, double kappa_target) {
  if (!(kappa >= 0.0 && kappa <= 1.0)) {
    throw std::invalid_argument("compute_rpdr: kappa must be in [0, 1]");
  }
  if (!(kappa_target > 0.0 && kappa_target < 1.0)) {
    throw std::invalid_argument("compute_rpdr: kappa_target must be in (0, 1)");
  }
  if (kappa >= kappa_target) return 0.0;
  return (kappa_target - kappa) / (1.0 - kappa);
}

void HybridPolicy::validate() const {
  if (!(kappa_target > 0.0 && kappa_target < 1.0)) {
    throw std::logic_error("HybridPolicy: kappa_target outside (0, 1)");
  }
  if (!(default_rpdr >= 0.0 && default_rpdr <= 1.0)) {
    throw std::logic_error("HybridPolicy: default_rpdr outside [0, 1]");
  }
  for (const auto& [seg, rho] : rpdr_table) {
    if (!(rho >= 0.0 && rho <= 1.0)) {
      throw std::logic_error("HybridPolicy: rpdr for segment '" + seg + "' outside [0, 1]");
    }
  }
  if (!schema_compatible(rp.schema, lp.schema)) {
    throw std::logic_error("HybridPolicy: rp/lp schemas incompatible");
  }
}

ActionDistribution HybridPolicy::distribution(
    const std::vector<CandidateRecord>& candidates) const {
  if (candidates.empty()) throw std::invalid_argument("HybridPolicy: empty candidate set");
  const double rho = rpdr_for(candidates.front().intent_id);
  const ActionDistribution rp_dist = score(rp, candidates);
  const ActionDistribution lp_dist = score(lp, candidates);
  ActionDistribution mix;
  mix.propensities.resize(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    mix.propensities[i] = rho * rp_dist[i] + (1.0 - rho) * lp_dist[i];
  }
  return mix;
}

RoutedAction hp_route(const HybridPolicy& hp, const std::vector<CandidateRecord>& candidates,
                      Rng& rng) {
  if (candidates.empty()) throw std::invalid_argument("hp_route: empty candidate set");
  const double rho = hp.rpdr_for(candidates.front().intent_id);
  RoutedAction out;
  out.submodel = rng.bernoulli(rho) ? Submodel::kRP : Submodel::kLP;
  const PolicyParams& chosen = (out.submodel == Submodel::kRP) ? hp.rp : hp.lp;
  out.action = sample_action(score(chosen, candidates), rng).action;
  out.propensity = hp.distribution(candidates)[out.action];
  return out;
}

HybridPolicy build_hp(const PolicyParams& rp, const PolicyParams& lp, const Dataset& validation,
                      const BuildHpOptions& options, std::string artifact_id) {
  if (!schema_compatible(rp.schema, lp.schema)) {
    throw ValidationError("build_hp: rp/lp schemas incompatible");
  }
  HybridPolicy hp;
  hp.rp = rp;
  hp.lp = lp;
  hp.kappa_target = options.kappa_target;
  hp.default_rpdr = options.default_rpdr;
  hp.artifact_id = std::move(artifact_id);

  const SoftmaxPolicy lp_policy(lp);
  const SoftmaxPolicy rp_policy(rp);
  const RoutingPolicy& reference =
      options.reference ? *options.reference : static_cast<const RoutingPolicy&>(rp_policy);
  const auto kappas = compute_kappa(lp_policy, reference, validation);
  for (const auto& [segment, entry] : kappas) {
    if (entry.support < options.min_segment_support) continue;  // falls back to default_rpdr
    hp.rpdr_table[segment] = compute_rpdr(entry.kappa, options.kappa_target);
  }
  hp.validate();
  return hp;
}

namespace {

json params_to_json(const PolicyParams& p) {
  return json{{"artifact_id", p.artifact_id},
              {"parent_artifact_id", p.parent_artifact_id},
              {"embed_dim", p.embed_dim},
              {"hidden_dim", p.hidden_dim},
              {"schema",
               {{"version", p.schema.version},
                {"numeric_dim", p.schema.numeric_dim},
                {"intent_vocab", p.schema.intent_vocab},
                {"skill_vocab", p.schema.skill_vocab},
                {"context_vocab", p.schema.context_vocab}}},
              {"theta", std::vector<double>(p.theta.data(), p.theta.data() + p.theta.size())}};
}

PolicyParams params_from_json(const json& j) {
  PolicyParams p;
  p.artifact_id = j.at("artifact_id").get<std::string>();
  p.parent_artifact_id = j.at("parent_artifact_id").get<std::string>();
  p.embed_dim = j.at("embed_dim").get<int>();
  p.hidden_dim = j.at("hidden_dim").get<int>();
  const json& s = j.at("schema");
  p.schema.version = s.at("version").get<int>();
  p.schema.numeric_dim = s.at("numeric_dim").get<int>();
  p.schema.intent_vocab = s.at("intent_vocab").get<std::vector<std::string>>();
  p.schema.skill_vocab = s.at("skill_vocab").get<std::vector<std::string>>();
  p.schema.context_vocab = s.at("context_vocab").get<std::vector<std::string>>();
  const auto values = j.at("theta").get<std::vector<double>>();
  if (static_cast<int>(values.size()) != p.param_count()) {
    throw std::runtime_error("hybrid artifact: theta size does not match schema");
  }
  p.theta = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
  return p;
}

}  // namespace

void HybridPolicy::save_artifact(const std::string& path) const {
  json j{{"format_version", 1},
         {"type", "hybrid"},
         {"artifact_id", artifact_id},
         {"parent_artifact_id", parent_artifact_id},
         {"kappa_target", kappa_target},
         {"default_rpdr", default_rpdr},
         {"rpdr_table", rpdr_table},  // std::map keeps segments sorted for stable diffs
         {"rp", params_to_json(rp)},
         {"lp", params_to_json(lp)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("HybridPolicy::save_artifact: cannot open " + path);
  out << j.dump(2) << '\n';
}

HybridPolicy load_hybrid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_hybrid: cannot open " + path);
  const json j = json::parse(in);
  if (j.at("type").get<std::string>() != "hybrid") {
    throw std::runtime_error("load_hybrid: '" + path + "' is not a hybrid policy artifact");
  }
  HybridPolicy hp;
  hp.artifact_id = j.at("artifact_id").get<std::string>();
  hp.parent_artifact_id = j.at("parent_artifact_id").get<std::string>();
  hp.kappa_target = j.at("kappa_target").get<double>();
  hp.default_rpdr = j.at("default_rpdr").get<double>();
  hp.rpdr_table = j.at("rpdr_table").get<std::map<std::string, double>>();
  hp.rp = params_from_json(j.at("rp"));
  hp.lp = params_from_json(j.at("lp"));
  hp.validate();
  return hp;
}

}  // namespace skillroute
