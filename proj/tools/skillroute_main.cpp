#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "skillroute/artifact.hpp"
#include "skillroute/gate.hpp"
#include "skillroute/hybrid.hpp"
#include "skillroute/kv.hpp"
#include "skillroute/loop.hpp"
#include "skillroute/ope.hpp"
#include "skillroute/simulator.hpp"
#include "skillroute/train.hpp"

namespace sr = skillroute;

namespace {

sr::KvConfig load_kv_or_empty(const std::string& path) {
  if (path.empty()) return sr::KvConfig{};
  return sr::KvConfig::load(path);
}

std::optional<double> clip_from(double value) {
  return value <= 0.0 ? std::nullopt : std::optional<double>(value);
}

int run_training(const std::string& data_path, const std::string& config_path,
                 const std::string& warm_path, const std::string& out_path,
                 const std::string& trace_path, uint64_t seed, bool has_seed,
                 sr::Objective objective, const std::string& artifact_id) {
  const sr::Dataset data = sr::read_jsonl(data_path);
  sr::TrainConfig defaults;
  defaults.objective = objective;
  if (objective == sr::Objective::kReplication) defaults.ips_clip = std::nullopt;
  sr::TrainConfig cfg = sr::TrainConfig::from_kv(load_kv_or_empty(config_path), "", defaults);
  cfg.objective = objective;
  if (has_seed) cfg.seed = seed;
  std::optional<sr::PolicyParams> warm;
  if (!warm_path.empty()) warm = sr::load_policy(warm_path);
  const sr::TrainResult result = sr::train(data, cfg, warm, artifact_id);
  sr::save_policy(result.params, out_path);
  if (!trace_path.empty()) sr::write_trace_csv(result.trace, trace_path);
  std::printf("trained %s: objective %.6f -> %.6f over %d epochs\n",
              result.params.artifact_id.c_str(), result.trace.front().objective,
              result.trace.back().objective, cfg.epochs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skillroute: self-learning skill routing (train, mix, evaluate, gate, loop)"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand name

  std::string config_path;
  uint64_t seed = 0;
  bool has_seed = false;
  std::string out_dir = "out";
  app.add_option("--config", config_path, "flat key=value config file")->capture_default_str();
  app.add_option("--seed", seed, "root seed override")->each([&](const std::string&) {
    has_seed = true;
  });
  app.add_option("--out-dir", out_dir, "output directory (loop/report)")->capture_default_str();

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic environment spec");
  std::string sim_out = "env.json";
  sim->add_option("--out", sim_out, "environment spec file")->capture_default_str();

  // collect
  auto* collect = app.add_subcommand("collect", "log interactions under a policy");
  std::string col_env, col_policy, col_out = "logs.jsonl", col_prefix = "i";
  size_t col_n = 10000;
  int col_cycle = 0;
  collect->add_option("--env", col_env, "environment spec")->required();
  collect->add_option("--policy", col_policy, "policy artifact (empty = env baseline)");
  collect->add_option("-n,--n", col_n, "number of interactions")->capture_default_str();
  collect->add_option("--cycle", col_cycle, "environment cycle view")->capture_default_str();
  collect->add_option("--prefix", col_prefix, "interaction id prefix")->capture_default_str();
  collect->add_option("--out", col_out, "output JSONL path")->capture_default_str();

  // train-rp / train-lp
  auto* train_rp = app.add_subcommand("train-rp", "train a replication policy");
  auto* train_lp = app.add_subcommand("train-lp", "train a learning (IPS) policy");
  std::string tr_data, tr_warm, tr_out = "policy.json", tr_trace, tr_id;
  for (auto* cmd : {train_rp, train_lp}) {
    cmd->add_option("--data", tr_data, "training JSONL")->required();
    cmd->add_option("--warm-start", tr_warm, "warm-start policy artifact");
    cmd->add_option("--out", tr_out, "output artifact path")->capture_default_str();
    cmd->add_option("--trace", tr_trace, "per-epoch metrics CSV");
    cmd->add_option("--artifact-id", tr_id, "artifact id (default derived from subcommand)");
  }

  // build-hp
  auto* build = app.add_subcommand("build-hp", "combine RP and LP into a hybrid policy");
  std::string hp_rp, hp_lp, hp_val, hp_ref, hp_out = "hp.json", hp_id = "hp";
  double hp_kappa = 0.90, hp_default_rpdr = 1.0;
  size_t hp_min_support = 30;
  build->add_option("--rp", hp_rp, "RP artifact")->required();
  build->add_option("--lp", hp_lp, "LP artifact")->required();
  build->add_option("--validation", hp_val, "validation JSONL")->required();
  build->add_option("--reference", hp_ref, "reference policy artifact (default: the RP)");
  build->add_option("--kappa-target", hp_kappa, "minimum replication rate")->capture_default_str();
  build->add_option("--default-rpdr", hp_default_rpdr, "RPDR for unseen segments")
      ->capture_default_str();
  build->add_option("--min-support", hp_min_support, "segment support for a kappa estimate")
      ->capture_default_str();
  build->add_option("--artifact-id", hp_id, "artifact id")->capture_default_str();
  build->add_option("--out", hp_out, "output artifact path")->capture_default_str();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "off-policy evaluation report");
  std::string ev_policy, ev_logs, ev_baseline, ev_out = "report.json", ev_csv;
  double ev_clip = 10.0, ev_defect = 0.5, ev_level = 0.95;
  int ev_bootstrap = 0;
  eval->add_option("--policy", ev_policy, "policy artifact")->required();
  eval->add_option("--logs", ev_logs, "logged interactions JSONL")->required();
  eval->add_option("--baseline", ev_baseline, "baseline artifact for L1 metrics");
  eval->add_option("--clip", ev_clip, "IPS clip (<= 0 disables)")->capture_default_str();
  eval->add_option("--defect-threshold", ev_defect, "reward defect threshold")
      ->capture_default_str();
  eval->add_option("--bootstrap", ev_bootstrap, "bootstrap resamples (0 = point estimates)")
      ->capture_default_str();
  eval->add_option("--level", ev_level, "CI level")->capture_default_str();
  eval->add_option("--out", ev_out, "report JSON path")->capture_default_str();
  eval->add_option("--csv", ev_csv, "report CSV path");

  // gate
  auto* gate_cmd = app.add_subcommand("gate", "guardrail decision for a candidate report");
  std::string gt_candidate, gt_incumbent, gt_out;
  gate_cmd->add_option("--candidate", gt_candidate, "candidate OPE report JSON")->required();
  gate_cmd->add_option("--incumbent", gt_incumbent, "incumbent OPE report JSON")->required();
  gate_cmd->add_option("--out", gt_out, "decision JSON path");

  // loop
  auto* loop_cmd = app.add_subcommand("loop", "run the self-learning refresh loop");
  std::string lp_env;
  loop_cmd->add_option("--env", lp_env, "environment spec")->required();

  // report
  auto* report_cmd = app.add_subcommand("report", "regenerate CSVs from loop records");
  std::string rp_records;
  report_cmd->add_option("--records", rp_records, "records.json from a loop run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      const sr::EnvConfig cfg = sr::EnvConfig::from_kv(load_kv_or_empty(config_path));
      const sr::Environment env = sr::gen_environment(cfg, has_seed ? seed : 7);
      sr::save_environment(env, sim_out);
      std::printf("environment: %d segments, %zu contexts -> %s\n", cfg.n_segments,
                  env.contexts.size(), sim_out.c_str());
      return 0;
    }
    if (collect->parsed()) {
      const sr::Environment env = sr::load_environment(col_env).at_cycle(col_cycle);
      std::shared_ptr<sr::RoutingPolicy> policy;
      if (col_policy.empty()) {
        policy = sr::make_baseline_policy(env);
      } else {
        policy = sr::load_any_policy(col_policy);
      }
      const sr::Dataset logs =
          sr::collect_logs(env, *policy, col_n, has_seed ? seed : 1, col_prefix);
      sr::write_jsonl(logs, col_out);
      std::printf("collected %zu interactions under %s -> %s\n", logs.size(),
                  policy->id().c_str(), col_out.c_str());
      return 0;
    }
    if (train_rp->parsed()) {
      return run_training(tr_data, config_path, tr_warm, tr_out, tr_trace, seed, has_seed,
                          sr::Objective::kReplication, tr_id.empty() ? "rp" : tr_id);
    }
    if (train_lp->parsed()) {
      return run_training(tr_data, config_path, tr_warm, tr_out, tr_trace, seed, has_seed,
                          sr::Objective::kLearning, tr_id.empty() ? "lp" : tr_id);
    }
    if (build->parsed()) {
      const sr::PolicyParams rp = sr::load_policy(hp_rp);
      const sr::PolicyParams lp = sr::load_policy(hp_lp);
      const sr::Dataset validation = sr::read_jsonl(hp_val);
      std::unique_ptr<sr::RoutingPolicy> reference;
      sr::BuildHpOptions opts;
      opts.kappa_target = hp_kappa;
      opts.default_rpdr = hp_default_rpdr;
      opts.min_segment_support = hp_min_support;
      if (!hp_ref.empty()) {
        reference = sr::load_any_policy(hp_ref);
        opts.reference = reference.get();
      }
      sr::HybridPolicy hp = sr::build_hp(rp, lp, validation, opts, hp_id);
      if (reference) hp.parent_artifact_id = reference->id();
      hp.save_artifact(hp_out);
      std::printf("hybrid %s: %zu segments with RPDR estimates -> %s\n", hp.artifact_id.c_str(),
                  hp.rpdr_table.size(), hp_out.c_str());
      return 0;
    }
    if (eval->parsed()) {
      const auto policy = sr::load_any_policy(ev_policy);
      const sr::Dataset logs = sr::read_jsonl(ev_logs);
      std::unique_ptr<sr::RoutingPolicy> baseline;
      sr::EvalOptions opts;
      opts.ips_clip = clip_from(ev_clip);
      opts.defect_threshold = ev_defect;
      if (!ev_baseline.empty()) {
        baseline = sr::load_any_policy(ev_baseline);
        opts.baseline = baseline.get();
      }
      const sr::OpeReport report =
          ev_bootstrap > 0
              ? sr::bootstrap(*policy, logs, opts, ev_bootstrap, ev_level, has_seed ? seed : 0)
              : sr::evaluate(*policy, logs, opts);
      sr::write_report_json(report, ev_out);
      if (!ev_csv.empty()) sr::write_report_csv(report, ev_csv);
      std::printf("evaluated %s on %zu interactions: expected_reward %.5f, replication %.4f\n",
                  report.policy_artifact_id.c_str(), report.n_interactions,
                  report.overall.expected_reward.value, report.overall.replication_rate.value);
      return 0;
    }
    if (gate_cmd->parsed()) {
      const sr::OpeReport candidate = sr::load_report_json(gt_candidate);
      const sr::OpeReport incumbent = sr::load_report_json(gt_incumbent);
      const sr::GuardrailConfig cfg =
          sr::GuardrailConfig::from_kv(load_kv_or_empty(config_path));
      const sr::GateDecision decision = sr::decide(candidate, incumbent, cfg);
      if (!gt_out.empty()) sr::write_decision_json(decision, gt_out);
      if (decision.deploy) {
        std::printf("deploy\n");
        return 0;
      }
      std::printf("abort (%zu violations)\n", decision.violations.size());
      for (const auto& v : decision.violations) {
        std::printf("  %s segment=%s metric=%s threshold=%g observed=%g\n", v.code.c_str(),
                    v.segment.c_str(), v.metric.c_str(), v.threshold, v.observed);
      }
      return 2;
    }
    if (loop_cmd->parsed()) {
      const sr::Environment env = sr::load_environment(lp_env);
      sr::LoopConfig cfg = sr::LoopConfig::from_kv(load_kv_or_empty(config_path));
      if (has_seed) cfg.seed = seed;
      cfg.out_dir = out_dir;
      const sr::LoopResult result = sr::run_loop(env, cfg);
      int deployed = 0;
      for (const auto& rec : result.records) deployed += rec.decision.deploy ? 1 : 0;
      std::printf("loop: %zu cycles, %d deployed; baseline %.5f -> final %.5f (reports in %s)\n",
                  result.records.size(), deployed, result.baseline_true_reward,
                  result.records.back().post_true_reward, out_dir.c_str());
      return 0;
    }
    if (report_cmd->parsed()) {
      const sr::LoopResult result = sr::load_records_json(rp_records);
      sr::write_reports(result, out_dir);
      std::printf("reports regenerated in %s\n", out_dir.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
