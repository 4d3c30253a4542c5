#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "skillroute/train.hpp"
#include "test_support.hpp"

using namespace skillroute;
namespace st = skillroute::testing;

namespace {

PolicyParams random_params(const FeatureSchema& schema, uint64_t seed) {
  return make_policy_params(schema, 8, 32, ParamInit::kScaledRandom, seed, "p");
}

// Two-candidate dataset where the logged action is fully determined by the
// sign of the first numeric feature; RP should replicate it perfectly.
Dataset separable_dataset(size_t n, uint64_t seed) {
  const FeatureSchema schema = st::small_schema(2);
  Dataset ds;
  ds.schema = schema;
  ds.provenance = "separable";
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    LoggedInteraction it;
    it.interaction_id = "s" + std::to_string(i);
    it.candidates = st::random_candidates(schema, rng, 2);
    const double cluster = rng.bernoulli(0.5) ? 2.0 : -2.0;
    for (auto& cand : it.candidates) cand.numeric_context[0] = cluster + 0.1 * rng.normal();
    it.segment_id = it.candidates[0].intent_id;
    it.chosen_action = cluster > 0.0 ? 0 : 1;
    it.logging_propensity = 0.5;
    it.reward = 1.0;
    ds.interactions.push_back(std::move(it));
  }
  return ds;
}

}  // namespace

TEST_CASE("loss_rp: singleton candidate gives -log(1) = 0") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams p = random_params(schema, 1);
  Rng rng(2);
  LoggedInteraction it;
  it.interaction_id = "x";
  it.candidates = st::random_candidates(schema, rng, 1);
  it.segment_id = it.candidates[0].intent_id;
  it.chosen_action = 0;
  it.logging_propensity = 1.0;
  it.reward = 1.0;
  CHECK(loss_rp(p, std::vector<LoggedInteraction>{it}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("loss_rp: all-zero params with T=4 give ln 4 per sample") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams zero = make_policy_params(schema, 8, 32, ParamInit::kZeros, 0, "z");
  Rng rng(3);
  std::vector<LoggedInteraction> batch;
  for (int i = 0; i < 6; ++i) {
    LoggedInteraction it;
    it.interaction_id = "b" + std::to_string(i);
    it.candidates = st::random_candidates(schema, rng, 4);
    it.segment_id = it.candidates[0].intent_id;
    it.chosen_action = static_cast<int>(rng.index(4));
    it.logging_propensity = 0.25;
    it.reward = 0.0;
    batch.push_back(std::move(it));
  }
  CHECK(loss_rp(zero, batch) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("loss_rp: matches brute-force recomputation on a random batch") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams p = random_params(schema, 4);
  const Dataset ds = st::random_dataset(schema, 10, 5);
  double expected = 0.0;
  for (const auto& it : ds.interactions) {
    const std::vector<double> probs = st::naive_distribution(p, it.candidates);
    expected += -std::log(probs[static_cast<size_t>(it.chosen_action)]);
  }
  expected /= 10.0;
  CHECK(loss_rp(p, ds.interactions) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("loss_lp: unit IPS weights collapse to the mean reward") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams p = random_params(schema, 6);
  Dataset ds = st::random_dataset(schema, 12, 7);
  double mean_reward = 0.0;
  for (auto& it : ds.interactions) {
    // Log with the evaluated policy itself: propensity equals its score.
    it.logging_propensity = score(p, it.candidates)[static_cast<size_t>(it.chosen_action)];
    mean_reward += it.reward;
  }
  mean_reward /= static_cast<double>(ds.size());
  CHECK(loss_lp(p, ds.interactions, std::nullopt) ==
        doctest::Approx(mean_reward).epsilon(1e-12));
}

TEST_CASE("loss_lp: zero rewards give zero objective") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams p = random_params(schema, 8);
  Dataset ds = st::random_dataset(schema, 9, 9);
  for (auto& it : ds.interactions) it.reward = 0.0;
  CHECK(loss_lp(p, ds.interactions, 10.0) == 0.0);
}

TEST_CASE("loss_lp: hand-enumerated 3-sample batch") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams p = random_params(schema, 10);
  Dataset ds = st::random_dataset(schema, 3, 11);
  const double rewards[3] = {1.0, 0.0, 1.0};
  const double propensities[3] = {0.02, 0.5, 0.9};
  for (int i = 0; i < 3; ++i) {
    ds.interactions[static_cast<size_t>(i)].reward = rewards[i];
    ds.interactions[static_cast<size_t>(i)].logging_propensity = propensities[i];
  }
  const double clip = 10.0;
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    const auto& it = ds.interactions[static_cast<size_t>(i)];
    const std::vector<double> probs = st::naive_distribution(p, it.candidates);
    const double w = std::min(probs[static_cast<size_t>(it.chosen_action)] / propensities[i], clip);
    expected += rewards[i] * w;
  }
  expected /= 3.0;
  CHECK(loss_lp(p, ds.interactions, clip) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("grad_check: analytic gradients match finite differences") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams p = random_params(schema, 12);
  const Dataset ds = st::random_dataset(schema, 8, 13);
  const GradCheckReport report = grad_check(p, ds.interactions, 1e-4, 60, 14, std::nullopt);
  CHECK(report.pass);
  CHECK(report.max_rel_error_rp < 1e-4);
  CHECK(report.max_rel_error_lp < 1e-4);
}

TEST_CASE("grad_lp: a strictly clipped sample contributes zero gradient") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams p = random_params(schema, 15);
  Dataset ds = st::random_dataset(schema, 1, 16);
  auto& it = ds.interactions[0];
  it.reward = 1.0;
  // Propensity small enough that the IPS weight certainly exceeds the clip.
  it.logging_propensity = 1e-6;
  const Eigen::VectorXd g = grad_lp(p, ds.interactions, 10.0);
  CHECK(g.norm() == 0.0);
  // Without the clip the same sample has nonzero gradient.
  CHECK(grad_lp(p, ds.interactions, std::nullopt).norm() > 0.0);
}

TEST_CASE("train: RP reaches full replication on separable data") {
  const Dataset ds = separable_dataset(300, 17);
  TrainConfig cfg;
  cfg.objective = Objective::kReplication;
  cfg.step_size = 0.3;
  cfg.epochs = 80;
  cfg.l2_penalty = 0.0;
  cfg.seed = 18;
  const TrainResult result = train(ds, cfg, std::nullopt, "rp-sep");
  size_t agree = 0;
  for (const auto& it : ds.interactions) {
    agree += argmax_action(result.params, it.candidates) == static_cast<size_t>(it.chosen_action);
  }
  CHECK(agree == ds.size());
  CHECK(result.trace.back().objective < result.trace.front().objective);
}

TEST_CASE("train: LP objective does not regress from initialization") {
  const FeatureSchema schema = st::small_schema();
  Dataset ds = st::random_dataset(schema, 400, 19);
  // Full-support logging with known propensities and informative rewards:
  // reward correlates with the chosen skill embedding slot.
  Rng rng(20);
  for (auto& it : ds.interactions) {
    it.logging_propensity = 1.0 / static_cast<double>(it.candidates.size());
    it.chosen_action = static_cast<int>(rng.index(it.candidates.size()));
    const auto& skill = it.candidates[static_cast<size_t>(it.chosen_action)].skill_id;
    it.reward = (skill == "skill_w" || skill == "skill_x") ? 1.0 : 0.0;
  }
  TrainConfig cfg;
  cfg.objective = Objective::kLearning;
  cfg.step_size = 0.05;
  cfg.epochs = 30;
  cfg.ips_clip = std::nullopt;
  cfg.seed = 21;
  const TrainResult result = train(ds, cfg, std::nullopt, "lp-up");
  const double initial = result.trace.front().objective;
  const double final_value = result.trace.back().objective;
  CHECK(final_value >= initial);
  CHECK(final_value > initial + 0.01);  // actually learned something
}

TEST_CASE("train: deterministic under identical inputs") {
  const Dataset ds = separable_dataset(100, 22);
  TrainConfig cfg;
  cfg.objective = Objective::kReplication;
  cfg.epochs = 5;
  cfg.seed = 23;
  const TrainResult a = train(ds, cfg, std::nullopt, "d");
  const TrainResult b = train(ds, cfg, std::nullopt, "d");
  CHECK(a.params == b.params);
  REQUIRE(a.trace.size() == b.trace.size());
  for (size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].objective == b.trace[i].objective);
    CHECK(a.trace[i].grad_norm == b.trace[i].grad_norm);
  }
}

TEST_CASE("train: warm start records lineage and adapts schema") {
  const Dataset ds = separable_dataset(80, 24);
  TrainConfig cfg;
  cfg.objective = Objective::kReplication;
  cfg.epochs = 3;
  cfg.seed = 25;
  const TrainResult first = train(ds, cfg, std::nullopt, "gen-0");
  const TrainResult second = train(ds, cfg, first.params, "gen-1");
  CHECK(second.params.artifact_id == "gen-1");
  CHECK(second.params.parent_artifact_id == "gen-0");
}

TEST_CASE("train: non-finite parameters abort with a diagnostic") {
  const Dataset ds = separable_dataset(50, 26);
  TrainConfig cfg;
  cfg.objective = Objective::kReplication;
  cfg.epochs = 3;
  PolicyParams poisoned =
      make_policy_params(ds.schema, cfg.embed_dim, cfg.hidden_dim, ParamInit::kScaledRandom, 1, "x");
  poisoned.theta[poisoned.offset_w2()] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(train(ds, cfg, poisoned, "boom"));
}

TEST_CASE("adapt_to_schema preserves behavior exactly") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams p = random_params(schema, 27);
  FeatureSchema grown = schema;
  grown.skill_vocab.push_back("skill_new");
  std::sort(grown.skill_vocab.begin(), grown.skill_vocab.end());
  const PolicyParams adapted = adapt_to_schema(p, grown);
  Rng rng(28);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<CandidateRecord> cands = st::random_candidates(schema, rng, 3);
    if (trial % 2 == 0) cands[1].skill_id = "skill_new";  // OOV for p, embedded for adapted
    const ActionDistribution a = score(p, cands);
    const ActionDistribution b = score(adapted, cands);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("write_trace_csv emits one row per epoch") {
  st::TempDir tmp("train_trace");
  const Dataset ds = separable_dataset(50, 29);
  TrainConfig cfg;
  cfg.epochs = 4;
  const TrainResult result = train(ds, cfg, std::nullopt, "t");
  write_trace_csv(result.trace, tmp.file("trace.csv"));
  std::ifstream in(tmp.file("trace.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 1 + 4 + 1);  // header + epoch 0 + 4 epochs
}
