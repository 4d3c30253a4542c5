#include <cmath>

#include "doctest.h"
#include "skillroute/artifact.hpp"
#include "skillroute/hybrid.hpp"
#include "skillroute/simulator.hpp"
#include "test_support.hpp"

using namespace skillroute;
namespace st = skillroute::testing;

namespace {

// Evaluation stub whose distribution is read from the first candidate's
// leading numeric feature (an index into a fixed table).
class TablePolicy final : public RoutingPolicy {
 public:
  TablePolicy(std::string id, std::vector<std::vector<double>> table)
      : id_(std::move(id)), table_(std::move(table)) {}
  ActionDistribution distribution(const std::vector<CandidateRecord>& candidates) const override {
    const size_t row = static_cast<size_t>(candidates[0].numeric_context[0]);
    ActionDistribution dist;
    dist.propensities = table_.at(row);
    return dist;
  }
  const std::string& id() const override { return id_; }
  void save_artifact(const std::string&) const override {}

 private:
  std::string id_;
  std::vector<std::vector<double>> table_;
};

LoggedInteraction interaction_with_row(const FeatureSchema& schema, double row, int t,
                                       const std::string& idx, Rng& rng) {
  LoggedInteraction it;
  it.interaction_id = idx;
  it.candidates = st::random_candidates(schema, rng, t);
  for (auto& cand : it.candidates) cand.numeric_context[0] = row;
  it.segment_id = it.candidates[0].intent_id;
  it.chosen_action = 0;
  it.logging_propensity = 0.5;
  it.reward = 1.0;
  return it;
}

PolicyParams trained_stub(const FeatureSchema& schema, uint64_t seed, const std::string& id) {
  return make_policy_params(schema, 8, 32, ParamInit::kScaledRandom, seed, id);
}

}  // namespace

TEST_CASE("compute_rpdr reproduces the closed form") {
  CHECK(compute_rpdr(0.995, 0.99) == 0.0);  // already replicating enough
  CHECK(compute_rpdr(0.95, 0.99) == doctest::Approx(0.8).epsilon(1e-12));
  for (double target : {0.5, 0.9, 0.99}) {
    CHECK(compute_rpdr(0.0, target) == doctest::Approx(target).epsilon(1e-12));
  }
  CHECK(compute_rpdr(1.0, 0.9) == 0.0);
}

TEST_CASE("compute_rpdr: range and monotonicity over a grid") {
  for (double target : {0.05, 0.5, 0.9, 0.99}) {
    double previous = 1.0;
    for (int i = 0; i <= 100; ++i) {
      const double kappa = static_cast<double>(i) / 100.0;
      const double rpdr = compute_rpdr(kappa, target);
      CHECK(rpdr >= 0.0);
      CHECK(rpdr < 1.0);
      CHECK(rpdr <= previous + 1e-12);  // nonincreasing in kappa
      previous = rpdr;
    }
  }
  CHECK_THROWS_AS(compute_rpdr(-0.1, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(compute_rpdr(0.5, 1.0), std::invalid_argument);
}

TEST_CASE("compute_kappa: identical distributions give kappa = 1") {
  const FeatureSchema schema = st::small_schema();
  const TablePolicy a("a", {{0.7, 0.3}});
  const TablePolicy b("b", {{0.7, 0.3}});
  Rng rng(1);
  Dataset ds;
  ds.schema = schema;
  for (int i = 0; i < 5; ++i) {
    ds.interactions.push_back(interaction_with_row(schema, 0, 2, "k" + std::to_string(i), rng));
  }
  const auto kappas = compute_kappa(a, b, ds);
  for (const auto& [seg, entry] : kappas) CHECK(entry.kappa == doctest::Approx(1.0));
}

TEST_CASE("compute_kappa: disjoint support gives kappa = 0") {
  const FeatureSchema schema = st::small_schema();
  const TablePolicy a("a", {{1.0, 0.0}});
  const TablePolicy b("b", {{0.0, 1.0}});
  Rng rng(2);
  Dataset ds;
  ds.schema = schema;
  ds.interactions.push_back(interaction_with_row(schema, 0, 2, "k0", rng));
  const auto kappas = compute_kappa(a, b, ds);
  CHECK(kappas.begin()->second.kappa == doctest::Approx(0.0));
}

TEST_CASE("compute_kappa: hand-enumerated three-sample segment") {
  const FeatureSchema schema = st::small_schema();
  const TablePolicy lp("lp", {{0.6, 0.4}, {0.2, 0.8}, {0.5, 0.5}});
  const TablePolicy ref("ref", {{0.9, 0.1}, {0.3, 0.7}, {0.5, 0.5}});
  Rng rng(3);
  Dataset ds;
  ds.schema = schema;
  for (int row = 0; row < 3; ++row) {
    auto it = interaction_with_row(schema, row, 2, "k" + std::to_string(row), rng);
    it.candidates[0].intent_id = "intent_a";  // one shared segment
    it.segment_id = "intent_a";
    ds.interactions.push_back(std::move(it));
  }
  // Overlaps: 1-|0.6-0.9| = 0.7; 1-|0.2-0.3| = 0.9; 1-0 = 1.0 -> mean 0.8666...
  const auto kappas = compute_kappa(lp, ref, ds);
  REQUIRE(kappas.size() == 1);
  CHECK(kappas.at("intent_a").kappa == doctest::Approx((0.7 + 0.9 + 1.0) / 3.0).epsilon(1e-12));
  CHECK(kappas.at("intent_a").support == 3);
}

TEST_CASE("build_hp: segments below min support fall back to the default rpdr") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams rp = trained_stub(schema, 1, "rp");
  const PolicyParams lp = trained_stub(schema, 2, "lp");
  Rng rng(4);
  Dataset validation;
  validation.schema = schema;
  // 40 rows for intent_a, 3 rows for intent_b
  for (int i = 0; i < 43; ++i) {
    auto it = interaction_with_row(schema, 0.0, 2, "v" + std::to_string(i), rng);
    const std::string seg = i < 40 ? "intent_a" : "intent_b";
    it.candidates[0].intent_id = seg;
    it.segment_id = seg;
    validation.interactions.push_back(std::move(it));
  }
  BuildHpOptions opts;
  opts.kappa_target = 0.9;
  opts.min_segment_support = 30;
  const HybridPolicy hp = build_hp(rp, lp, validation, opts, "hp");
  CHECK(hp.rpdr_table.count("intent_a") == 1);
  CHECK(hp.rpdr_table.count("intent_b") == 0);
  CHECK(hp.rpdr_for("intent_b") == hp.default_rpdr);
  CHECK(hp.rpdr_for("intent_never_seen") == hp.default_rpdr);
}

TEST_CASE("hp_distribution: exact mixture of the two submodels") {
  const FeatureSchema schema = st::small_schema();
  Rng rng(5);
  Dataset validation;
  validation.schema = schema;
  for (int i = 0; i < 35; ++i) {
    validation.interactions.push_back(
        interaction_with_row(schema, 0.0, 3, "m" + std::to_string(i), rng));
  }
  const PolicyParams rp = trained_stub(schema, 6, "rp");
  const PolicyParams lp = trained_stub(schema, 7, "lp");
  BuildHpOptions opts;
  opts.kappa_target = 0.9;
  const HybridPolicy hp = build_hp(rp, lp, validation, opts, "hp");
  for (int trial = 0; trial < 20; ++trial) {
    const auto cands = st::random_candidates(schema, rng, 3);
    const double rho = hp.rpdr_for(cands[0].intent_id);
    const ActionDistribution mix = hp.distribution(cands);
    const ActionDistribution a = score(rp, cands);
    const ActionDistribution b = score(lp, cands);
    double sum = 0.0;
    for (size_t i = 0; i < mix.size(); ++i) {
      CHECK(mix[i] == doctest::Approx(rho * a[i] + (1 - rho) * b[i]).epsilon(1e-12));
      sum += mix[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("hp_route: degenerate rpdr pins the submodel") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams rp = trained_stub(schema, 8, "rp");
  const PolicyParams lp = trained_stub(schema, 9, "lp");
  HybridPolicy hp;
  hp.rp = rp;
  hp.lp = lp;
  hp.artifact_id = "hp";
  Rng rng(10);
  const auto cands = st::random_candidates(schema, rng, 3);
  hp.rpdr_table[cands[0].intent_id] = 1.0;
  Rng route_rng(11);
  for (int i = 0; i < 100; ++i) {
    CHECK(hp_route(hp, cands, route_rng).submodel == Submodel::kRP);
  }
  hp.rpdr_table[cands[0].intent_id] = 0.0;
  for (int i = 0; i < 100; ++i) {
    CHECK(hp_route(hp, cands, route_rng).submodel == Submodel::kLP);
  }
}

TEST_CASE("hp_route: logged propensity equals the mixture propensity exactly") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams rp = trained_stub(schema, 12, "rp");
  const PolicyParams lp = trained_stub(schema, 13, "lp");
  HybridPolicy hp;
  hp.rp = rp;
  hp.lp = lp;
  hp.artifact_id = "hp";
  hp.default_rpdr = 0.6;
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cands = st::random_candidates(schema, rng, 2 + static_cast<int>(rng.index(3)));
    const ActionDistribution mix = hp.distribution(cands);
    const RoutedAction routed = hp_route(hp, cands, rng);
    CHECK(routed.propensity == mix[routed.action]);
  }
}

TEST_CASE("hp_route: empirical frequencies match the analytic mixture (100k draws)") {
  const FeatureSchema schema = st::small_schema();
  const PolicyParams rp = trained_stub(schema, 15, "rp");
  const PolicyParams lp = trained_stub(schema, 16, "lp");
  HybridPolicy hp;
  hp.rp = rp;
  hp.lp = lp;
  hp.artifact_id = "hp";
  hp.default_rpdr = 0.35;
  Rng rng(17);
  const auto cands = st::random_candidates(schema, rng, 3);
  const ActionDistribution mix = hp.distribution(cands);
  const size_t n = 100000;
  std::vector<size_t> counts(3, 0);
  Rng route_rng(18);
  for (size_t i = 0; i < n; ++i) counts[hp_route(hp, cands, route_rng).action]++;
  for (size_t a = 0; a < 3; ++a) {
    const double p = mix[a];
    const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
    const double observed = static_cast<double>(counts[a]) / static_cast<double>(n);
    CHECK(std::abs(observed - p) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("rpdr floor: mixture overlap dominates the per-submodel prediction") {
  const FeatureSchema schema = st::small_schema();
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const PolicyParams rp = trained_stub(schema, 100 + trial, "rp");
    const PolicyParams lp = trained_stub(schema, 200 + trial, "lp");
    const PolicyParams ref_params = trained_stub(schema, 300 + trial, "ref");
    const SoftmaxPolicy reference(ref_params);
    const SoftmaxPolicy rp_policy(rp);
    const SoftmaxPolicy lp_policy(lp);

    Dataset validation;
    validation.schema = schema;
    for (int i = 0; i < 40; ++i) {
      auto it = interaction_with_row(schema, rng.uniform(-1, 1), 3, "f" + std::to_string(i), rng);
      it.candidates[0].intent_id = "intent_a";
      it.segment_id = "intent_a";
      validation.interactions.push_back(std::move(it));
    }
    BuildHpOptions opts;
    opts.kappa_target = 0.9;
    opts.reference = &reference;
    const HybridPolicy hp = build_hp(rp, lp, validation, opts, "hp");

    const double kappa_rp = compute_kappa(rp_policy, reference, validation).at("intent_a").kappa;
    const double kappa_lp = compute_kappa(lp_policy, reference, validation).at("intent_a").kappa;
    const double kappa_hp = compute_kappa(hp, reference, validation).at("intent_a").kappa;
    const double rho = hp.rpdr_for("intent_a");
    CHECK(kappa_hp >= rho * kappa_rp + (1.0 - rho) * kappa_lp - 1e-9);
  }
}

TEST_CASE("hybrid artifact round-trips with identical behavior") {
  st::TempDir tmp("hybrid_io");
  const FeatureSchema schema = st::small_schema();
  const PolicyParams rp = trained_stub(schema, 20, "rp");
  const PolicyParams lp = trained_stub(schema, 21, "lp");
  HybridPolicy hp;
  hp.rp = rp;
  hp.lp = lp;
  hp.artifact_id = "hp-io";
  hp.parent_artifact_id = "previous";
  hp.kappa_target = 0.92;
  hp.default_rpdr = 0.8;
  hp.rpdr_table = {{"intent_a", 0.25}, {"intent_b", 0.0}};
  hp.save_artifact(tmp.file("hp.json"));

  const HybridPolicy back = load_hybrid(tmp.file("hp.json"));
  CHECK(back.artifact_id == "hp-io");
  CHECK(back.parent_artifact_id == "previous");
  CHECK(back.kappa_target == 0.92);
  CHECK(back.rpdr_table == hp.rpdr_table);
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const auto cands = st::random_candidates(schema, rng, 3);
    const ActionDistribution a = hp.distribution(cands);
    const ActionDistribution b = back.distribution(cands);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }

  const auto any = load_any_policy(tmp.file("hp.json"));
  CHECK(any->id() == "hp-io");
}
