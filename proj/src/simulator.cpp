#include "skillroute/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"

namespace skillroute {

using nlohmann::json;

void EnvConfig::validate() const {
  if (n_segments < 1) throw std::invalid_argument("EnvConfig: n_segments must be >= 1");
  if (contexts_per_segment < 1) {
    throw std::invalid_argument("EnvConfig: contexts_per_segment must be >= 1");
  }
  if (min_candidates < 1 || max_candidates < min_candidates) {
    throw std::invalid_argument("EnvConfig: need 1 <= min_candidates <= max_candidates");
  }
  if (numeric_dim < 0) throw std::invalid_argument("EnvConfig: numeric_dim must be >= 0");
  if (feature_noise < 0.0) throw std::invalid_argument("EnvConfig: feature_noise must be >= 0");
  if (headroom_fraction < 0.0 || headroom_fraction > 1.0) {
    throw std::invalid_argument("EnvConfig: headroom_fraction must be in [0, 1]");
  }
  if (!(segment_weight_decay > 0.0 && segment_weight_decay <= 1.0)) {
    throw std::invalid_argument("EnvConfig: segment_weight_decay must be in (0, 1]");
  }
  if (!(baseline_top_prob > 0.0 && baseline_top_prob < 1.0)) {
    throw std::invalid_argument("EnvConfig: baseline_top_prob must be in (0, 1)");
  }
}

EnvConfig EnvConfig::from_kv(const KvConfig& kv) {
  static const std::set<std::string> known = {
      "n_segments",       "contexts_per_segment", "min_candidates",
      "max_candidates",   "numeric_dim",          "feature_noise",
      "headroom_fraction", "headroom_margin",     "headroom_min_segment",
      "segment_weight_decay", "extra_skills",     "context_tokens",
      "baseline_top_prob", "flip_rewards_at_cycle", "onboard_at_cycle",
      "onboard_segments"};
  for (const auto& [key, value] : kv.entries()) {
    if (!known.count(key)) {
      throw std::runtime_error("environment config: unknown key '" + key + "'");
    }
  }
  EnvConfig c;
  c.n_segments = static_cast<int>(kv.get_int("n_segments", c.n_segments));
  c.contexts_per_segment =
      static_cast<int>(kv.get_int("contexts_per_segment", c.contexts_per_segment));
  c.min_candidates = static_cast<int>(kv.get_int("min_candidates", c.min_candidates));
  c.max_candidates = static_cast<int>(kv.get_int("max_candidates", c.max_candidates));
  c.numeric_dim = static_cast<int>(kv.get_int("numeric_dim", c.numeric_dim));
  c.feature_noise = kv.get_double("feature_noise", c.feature_noise);
  c.headroom_fraction = kv.get_double("headroom_fraction", c.headroom_fraction);
  c.headroom_margin = kv.get_double("headroom_margin", c.headroom_margin);
  c.headroom_min_segment =
      static_cast<int>(kv.get_int("headroom_min_segment", c.headroom_min_segment));
  c.segment_weight_decay = kv.get_double("segment_weight_decay", c.segment_weight_decay);
  c.extra_skills = static_cast<int>(kv.get_int("extra_skills", c.extra_skills));
  c.context_tokens = static_cast<int>(kv.get_int("context_tokens", c.context_tokens));
  c.baseline_top_prob = kv.get_double("baseline_top_prob", c.baseline_top_prob);
  c.flip_rewards_at_cycle =
      static_cast<int>(kv.get_int("flip_rewards_at_cycle", c.flip_rewards_at_cycle));
  c.onboard_at_cycle = static_cast<int>(kv.get_int("onboard_at_cycle", c.onboard_at_cycle));
  c.onboard_segments = static_cast<int>(kv.get_int("onboard_segments", c.onboard_segments));
  c.validate();
  return c;
}

namespace {

std::string padded_token(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03d", stem, i);
  return std::string(buf);
}

}  // namespace

std::string Environment::segment_token(int segment) const {
  return padded_token("intent_", segment);
}

Environment gen_environment(const EnvConfig& config, uint64_t seed) {
  config.validate();
  Environment env;
  env.config = config;
  env.seed = seed;

  std::vector<std::string> intents, skills, ctx_tokens;
  for (int s = 0; s < config.n_segments; ++s) intents.push_back(padded_token("intent_", s));
  const int n_skills = config.n_segments + config.extra_skills;
  for (int k = 0; k < n_skills; ++k) skills.push_back(padded_token("skill_", k));
  for (int k = 0; k < config.context_tokens; ++k) ctx_tokens.push_back(padded_token("ctx_", k));

  env.schema.numeric_dim = config.numeric_dim;
  env.schema.intent_vocab = intents;
  env.schema.skill_vocab = skills;
  env.schema.context_vocab = ctx_tokens;

  Rng rng(derive_seed(seed, "env-gen"));
  for (int s = 0; s < config.n_segments; ++s) {
    for (int c = 0; c < config.contexts_per_segment; ++c) {
      EnvContext ctx;
      ctx.segment = s;
      ctx.context_id = padded_token("intent_", s) + "/" + padded_token("ctx", c);
      const int t = config.min_candidates +
                    static_cast<int>(rng.index(
                        static_cast<size_t>(config.max_candidates - config.min_candidates + 1)));

      std::vector<double> numeric(config.numeric_dim);
      for (auto& v : numeric) v = rng.normal();
      std::vector<std::string> shared_tokens;
      shared_tokens.push_back(ctx_tokens[rng.index(ctx_tokens.size())]);
      if (rng.bernoulli(0.5)) shared_tokens.push_back(ctx_tokens[rng.index(ctx_tokens.size())]);
      std::sort(shared_tokens.begin(), shared_tokens.end());

      double confidence = rng.uniform(0.70, 0.95);
      for (int k = 0; k < t; ++k) {
        CandidateRecord cand;
        cand.intent_id = (k == 0) ? intents[static_cast<size_t>(s)]
                                  : intents[rng.index(intents.size())];
        cand.skill_id = skills[rng.index(skills.size())];
        cand.nlu_confidence = confidence;
        cand.numeric_context = numeric;
        cand.categorical_context = shared_tokens;
        ctx.candidates.push_back(std::move(cand));
        confidence = std::max(0.02, confidence - rng.uniform(0.05, 0.15));
      }

      // Satisfaction probabilities. Headroom contexts hide a better
      // candidate below the top-confidence slot; elsewhere the top slot is
      // genuinely best. A spread of margins staggers how quickly different
      // contexts become worth correcting.
      ctx.true_reward_probs.assign(static_cast<size_t>(t), 0.0);
      const bool headroom = t >= 2 && s >= config.headroom_min_segment &&
                            rng.bernoulli(config.headroom_fraction);
      if (headroom) {
        const size_t best = 1 + rng.index(static_cast<size_t>(t - 1));
        const double p0 = rng.uniform(0.30, 0.45);
        ctx.true_reward_probs[0] = p0;
        for (int k = 1; k < t; ++k) {
          ctx.true_reward_probs[static_cast<size_t>(k)] = rng.uniform(0.10, p0 - 0.02);
        }
        ctx.true_reward_probs[best] =
            std::min(0.95, p0 + config.headroom_margin + rng.uniform(0.0, 0.25));
      } else {
        const double p0 = rng.uniform(0.55, 0.80);
        ctx.true_reward_probs[0] = p0;
        for (int k = 1; k < t; ++k) {
          ctx.true_reward_probs[static_cast<size_t>(k)] = rng.uniform(0.10, p0 - 0.05);
        }
      }
      env.contexts.push_back(std::move(ctx));
    }
  }

  // Geometric segment skew, uniform within a segment.
  env.context_weights.resize(env.contexts.size());
  double total = 0.0;
  for (size_t i = 0; i < env.contexts.size(); ++i) {
    const double seg_w = std::pow(config.segment_weight_decay, env.contexts[i].segment);
    env.context_weights[i] = seg_w / config.contexts_per_segment;
    total += env.context_weights[i];
  }
  for (auto& w : env.context_weights) w /= total;
  return env;
}

Environment Environment::at_cycle(int at) const {
  Environment env = *this;
  env.cycle = at;
  if (config.flip_rewards_at_cycle >= 0 && at >= config.flip_rewards_at_cycle) {
    for (auto& ctx : env.contexts) {
      for (auto& p : ctx.true_reward_probs) p = 1.0 - p;
    }
  }
  if (config.onboard_at_cycle >= 0 && at >= config.onboard_at_cycle) {
    Rng rng(derive_seed(seed, "env-onboard"));
    const int n_onboard = std::min(config.onboard_segments, config.n_segments);
    std::set<std::string> new_skills;
    for (auto& ctx : env.contexts) {
      if (ctx.segment >= n_onboard) continue;
      const std::string skill = padded_token("skill_new_", ctx.segment);
      new_skills.insert(skill);
      CandidateRecord cand;
      cand.intent_id = segment_token(ctx.segment);
      cand.skill_id = skill;
      cand.nlu_confidence =
          std::max(0.01, ctx.candidates.back().nlu_confidence - rng.uniform(0.02, 0.05));
      cand.numeric_context = ctx.candidates.front().numeric_context;
      cand.categorical_context = ctx.candidates.front().categorical_context;
      ctx.candidates.push_back(std::move(cand));
      ctx.true_reward_probs.push_back(rng.uniform(0.45, 0.75));
    }
    // The onboarded skills join the token universe so freshly trained
    // policies can embed them; older policies route them through OOV.
    env.schema.skill_vocab.insert(env.schema.skill_vocab.end(), new_skills.begin(),
                                  new_skills.end());
    std::sort(env.schema.skill_vocab.begin(), env.schema.skill_vocab.end());
  }
  return env;
}

const EnvContext& Environment::sample_context(Rng& rng) const {
  return contexts[rng.categorical(context_weights)];
}

void save_environment(const Environment& env, const std::string& path) {
  const auto& c = env.config;
  json j{{"format_version", 1},
         {"type", "environment"},
         {"seed", env.seed},
         {"config",
          {{"n_segments", c.n_segments},
           {"contexts_per_segment", c.contexts_per_segment},
           {"min_candidates", c.min_candidates},
           {"max_candidates", c.max_candidates},
           {"numeric_dim", c.numeric_dim},
           {"feature_noise", c.feature_noise},
           {"headroom_fraction", c.headroom_fraction},
           {"headroom_margin", c.headroom_margin},
           {"headroom_min_segment", c.headroom_min_segment},
           {"segment_weight_decay", c.segment_weight_decay},
           {"extra_skills", c.extra_skills},
           {"context_tokens", c.context_tokens},
           {"baseline_top_prob", c.baseline_top_prob},
           {"flip_rewards_at_cycle", c.flip_rewards_at_cycle},
           {"onboard_at_cycle", c.onboard_at_cycle},
           {"onboard_segments", c.onboard_segments}}}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_environment: cannot open " + path);
  out << j.dump(2) << '\n';
}

Environment load_environment(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_environment: cannot open " + path);
  const json j = json::parse(in);
  if (j.at("type").get<std::string>() != "environment") {
    throw std::runtime_error("load_environment: '" + path + "' is not an environment spec");
  }
  const json& c = j.at("config");
  EnvConfig config;
  config.n_segments = c.at("n_segments").get<int>();
  config.contexts_per_segment = c.at("contexts_per_segment").get<int>();
  config.min_candidates = c.at("min_candidates").get<int>();
  config.max_candidates = c.at("max_candidates").get<int>();
  config.numeric_dim = c.at("numeric_dim").get<int>();
  config.feature_noise = c.at("feature_noise").get<double>();
  config.headroom_fraction = c.at("headroom_fraction").get<double>();
  config.headroom_margin = c.at("headroom_margin").get<double>();
  config.headroom_min_segment = c.at("headroom_min_segment").get<int>();
  config.segment_weight_decay = c.at("segment_weight_decay").get<double>();
  config.extra_skills = c.at("extra_skills").get<int>();
  config.context_tokens = c.at("context_tokens").get<int>();
  config.baseline_top_prob = c.at("baseline_top_prob").get<double>();
  config.flip_rewards_at_cycle = c.at("flip_rewards_at_cycle").get<int>();
  config.onboard_at_cycle = c.at("onboard_at_cycle").get<int>();
  config.onboard_segments = c.at("onboard_segments").get<int>();
  return gen_environment(config, j.at("seed").get<uint64_t>());
}

ActionDistribution BaselinePolicy::distribution(
    const std::vector<CandidateRecord>& candidates) const {
  if (candidates.empty()) throw std::invalid_argument("BaselinePolicy: empty candidate set");
  ActionDistribution dist;
  const size_t t = candidates.size();
  if (t == 1) {
    dist.propensities = {1.0};
    return dist;
  }
  dist.propensities.assign(t, (1.0 - top_prob_) / static_cast<double>(t - 1));
  dist.propensities[0] = top_prob_;
  return dist;
}

void BaselinePolicy::save_artifact(const std::string& path) const {
  json j{{"format_version", 1},
         {"type", "baseline"},
         {"artifact_id", id_},
         {"top_prob", top_prob_}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("BaselinePolicy::save_artifact: cannot open " + path);
  out << j.dump(2) << '\n';
}

std::shared_ptr<RoutingPolicy> make_baseline_policy(const Environment& env) {
  return std::make_shared<BaselinePolicy>(env.config.baseline_top_prob);
}

std::vector<CandidateRecord> jitter_candidates(const EnvContext& ctx, double noise, Rng& rng) {
  std::vector<CandidateRecord> candidates = ctx.candidates;
  if (noise > 0.0 && !candidates.empty()) {
    std::vector<double> jitter(candidates.front().numeric_context.size());
    for (auto& v : jitter) v = noise * rng.normal();
    for (auto& cand : candidates) {
      for (size_t i = 0; i < jitter.size(); ++i) cand.numeric_context[i] += jitter[i];
    }
  }
  return candidates;
}

Dataset collect_logs(const Environment& env, const RoutingPolicy& policy, size_t n,
                     uint64_t seed, const std::string& id_prefix) {
  Dataset ds;
  ds.schema = env.schema;
  ds.provenance = policy.id();
  ds.interactions.reserve(n);
  Rng rng(derive_seed(seed, "collect"));
  for (size_t i = 0; i < n; ++i) {
    const EnvContext& ctx = env.sample_context(rng);
    LoggedInteraction it;
    it.interaction_id = id_prefix + std::to_string(i);
    it.candidates = jitter_candidates(ctx, env.config.feature_noise, rng);
    it.segment_id = it.candidates.front().intent_id;
    const ActionDistribution dist = policy.distribution(it.candidates);
    dist.validate();  // logging requires full support
    const SampledAction sampled = sample_action(dist, rng);
    it.chosen_action = static_cast<int>(sampled.action);
    it.logging_propensity = sampled.propensity;
    it.reward = rng.bernoulli(ctx.true_reward_probs[sampled.action]) ? 1.0 : 0.0;
    ds.interactions.push_back(std::move(it));
  }
  validate_dataset(ds);
  return ds;
}

double true_reward(const Environment& env, const RoutingPolicy& policy) {
  size_t cells = 0;
  for (const auto& ctx : env.contexts) cells += ctx.candidates.size();
  if (cells > 1000000) {
    throw std::invalid_argument("true_reward: environment too large to enumerate");
  }
  double value = 0.0;
  for (size_t i = 0; i < env.contexts.size(); ++i) {
    const auto& ctx = env.contexts[i];
    const ActionDistribution dist = policy.distribution(ctx.candidates);
    double ctx_value = 0.0;
    for (size_t a = 0; a < ctx.candidates.size(); ++a) {
      ctx_value += dist[a] * ctx.true_reward_probs[a];
    }
    value += env.context_weights[i] * ctx_value;
  }
  return value;
}

}  // namespace skillroute
