#include "skillroute/loop.hpp"

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "skillroute/stats.hpp"

namespace skillroute {

using nlohmann::json;
namespace fs = std::filesystem;

LoopConfig::LoopConfig() {
  rp_train.objective = Objective::kReplication;
  rp_train.ips_clip = std::nullopt;
  rp_train.step_size = 0.3;
  rp_train.epochs = 120;
  lp_train.objective = Objective::kLearning;
  lp_train.ips_clip = 10.0;
  lp_train.step_size = 0.04;
  lp_train.epochs = 25;
  lp_train.l2_penalty = 3e-4;
}

void LoopConfig::validate() const {
  if (n_cycles < 1) throw std::invalid_argument("LoopConfig: n_cycles must be >= 1");
  if (logs_per_cycle < 2) throw std::invalid_argument("LoopConfig: logs_per_cycle too small");
  if (rp_update_period < 1) throw std::invalid_argument("LoopConfig: rp_update_period >= 1");
  if (window_cycles < 1) throw std::invalid_argument("LoopConfig: window_cycles >= 1");
  if (!(kappa_target > 0.0 && kappa_target < 1.0)) {
    throw std::invalid_argument("LoopConfig: kappa_target must be in (0, 1)");
  }
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw std::invalid_argument("LoopConfig: split_fraction must be in (0, 1)");
  }
  rp_train.validate();
  lp_train.validate();
  gate.validate();
}

LoopConfig LoopConfig::from_kv(const KvConfig& kv) {
  static const std::set<std::string> known = {
      "n_cycles",          "logs_per_cycle",   "rp_update_period",
      "window_cycles",     "kappa_target",     "split_fraction",
      "default_rpdr",      "min_segment_support", "ips_clip",
      "defect_threshold",  "bootstrap_resamples", "bootstrap_level",
      "post_eval_samples", "freeze_rp",        "lp_warm_start_from_rp",
      "rp_warm_start",     "seed"};
  for (const auto& [key, value] : kv.entries()) {
    const bool delegated = key.rfind("rp.", 0) == 0 || key.rfind("lp.", 0) == 0 ||
                           key.rfind("gate.", 0) == 0;
    if (!delegated && !known.count(key)) {
      throw std::runtime_error("loop config: unknown key '" + key + "'");
    }
  }
  LoopConfig cfg;
  cfg.n_cycles = static_cast<int>(kv.get_int("n_cycles", cfg.n_cycles));
  cfg.logs_per_cycle =
      static_cast<size_t>(kv.get_int("logs_per_cycle", static_cast<long>(cfg.logs_per_cycle)));
  cfg.rp_update_period = static_cast<int>(kv.get_int("rp_update_period", cfg.rp_update_period));
  cfg.window_cycles = static_cast<int>(kv.get_int("window_cycles", cfg.window_cycles));
  cfg.kappa_target = kv.get_double("kappa_target", cfg.kappa_target);
  cfg.split_fraction = kv.get_double("split_fraction", cfg.split_fraction);
  cfg.default_rpdr = kv.get_double("default_rpdr", cfg.default_rpdr);
  cfg.min_segment_support = static_cast<size_t>(
      kv.get_int("min_segment_support", static_cast<long>(cfg.min_segment_support)));
  if (kv.has("ips_clip")) {
    const double clip = kv.get_double("ips_clip", 0.0);
    cfg.ips_clip = clip <= 0.0 ? std::nullopt : std::optional<double>(clip);
  }
  cfg.defect_threshold = kv.get_double("defect_threshold", cfg.defect_threshold);
  cfg.bootstrap_resamples =
      static_cast<int>(kv.get_int("bootstrap_resamples", cfg.bootstrap_resamples));
  cfg.bootstrap_level = kv.get_double("bootstrap_level", cfg.bootstrap_level);
  cfg.post_eval_samples = static_cast<size_t>(
      kv.get_int("post_eval_samples", static_cast<long>(cfg.post_eval_samples)));
  cfg.freeze_rp = kv.get_bool("freeze_rp", cfg.freeze_rp);
  cfg.lp_warm_start_from_rp = kv.get_bool("lp_warm_start_from_rp", cfg.lp_warm_start_from_rp);
  cfg.rp_warm_start = kv.get_bool("rp_warm_start", cfg.rp_warm_start);
  cfg.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<long>(cfg.seed)));

  cfg.rp_train = TrainConfig::from_kv(kv, "rp.", cfg.rp_train);
  cfg.lp_train = TrainConfig::from_kv(kv, "lp.", cfg.lp_train);
  cfg.gate = GuardrailConfig::from_kv(kv);
  cfg.validate();
  return cfg;
}

namespace {

double ms_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Argmax agreement between two policies over a batch of logged contexts.
double argmax_agreement(const RoutingPolicy& a, const RoutingPolicy& b, const Dataset& logs) {
  if (logs.interactions.empty()) return 1.0;
  size_t agree = 0;
  for (const auto& it : logs.interactions) {
    if (argmax_index(a.distribution(it.candidates)) == argmax_index(b.distribution(it.candidates)))
      ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(logs.interactions.size());
}

// Replication against the previous policy, measured on its logs: how often
// a policy's argmax matches the action the incumbent actually took.
double replication_vs_logs(const RoutingPolicy& policy, const Dataset& logs) {
  if (logs.interactions.empty()) return 1.0;
  size_t agree = 0;
  for (const auto& it : logs.interactions) {
    if (argmax_index(policy.distribution(it.candidates)) ==
        static_cast<size_t>(it.chosen_action)) {
      ++agree;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(logs.interactions.size());
}

// Fresh contexts with jitter, shaped as a Dataset so compute_kappa and
// argmax_agreement can run on them. Actions/rewards are placeholders.
Dataset sample_fresh_traffic(const Environment& env, size_t n, uint64_t seed) {
  Dataset ds;
  ds.schema = env.schema;
  ds.provenance = "fresh-traffic";
  Rng rng(derive_seed(seed, "fresh-traffic"));
  for (size_t i = 0; i < n; ++i) {
    const EnvContext& ctx = env.sample_context(rng);
    LoggedInteraction it;
    it.interaction_id = "fresh-" + std::to_string(i);
    it.candidates = jitter_candidates(ctx, env.config.feature_noise, rng);
    it.segment_id = it.candidates.front().intent_id;
    it.chosen_action = 0;
    it.logging_propensity = 1.0;
    it.reward = 0.0;
    ds.interactions.push_back(std::move(it));
  }
  return ds;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
}

}  // namespace

LoopResult run_loop(const Environment& env, const LoopConfig& config) {
  config.validate();
  LoopResult result;

  const bool persist = !config.out_dir.empty();
  if (persist) ensure_dir(config.out_dir);

  std::shared_ptr<RoutingPolicy> serving = make_baseline_policy(env.at_cycle(0));
  result.baseline_id = serving->id();
  result.baseline_true_reward = true_reward(env.at_cycle(0), *serving);
  if (persist) serving->save_artifact(config.out_dir + "/baseline.json");

  std::optional<PolicyParams> rp_params;
  std::optional<PolicyParams> lp_params;
  std::deque<Dataset> window;

  for (int cycle = 0; cycle < config.n_cycles; ++cycle) {
    const auto cycle_start = std::chrono::steady_clock::now();
    CycleRecord rec;
    rec.cycle = cycle;
    rec.incumbent_id = serving->id();
    const Environment env_now = env.at_cycle(cycle);
    const std::string cycle_dir = config.out_dir + "/cycle-" + std::to_string(cycle);
    if (persist) ensure_dir(cycle_dir);

    // (1) collect under the current serving policy
    auto t0 = std::chrono::steady_clock::now();
    Dataset logs = collect_logs(env_now, *serving, config.logs_per_cycle,
                                derive_seed(config.seed, "collect", cycle),
                                "c" + std::to_string(cycle) + "-");
    rec.collect_ms = ms_since(t0);
    window.push_back(std::move(logs));
    while (static_cast<int>(window.size()) > config.window_cycles) window.pop_front();
    std::vector<const Dataset*> parts;
    for (const auto& d : window) parts.push_back(&d);
    const Dataset window_data = concat(parts);

    // Steps (2)-(6) may fail (non-finite training, schema conflicts); a
    // failure aborts this cycle only and leaves the trainer state as if the
    // cycle had not run.
    const std::optional<PolicyParams> rp_snapshot = rp_params;
    const std::optional<PolicyParams> lp_snapshot = lp_params;
    std::optional<HybridPolicy> hp;
    try {
      // (2) split
      const SplitResult splits =
          split(window_data, config.split_fraction, derive_seed(config.seed, "split", cycle));

      // (3) train LP every cycle; RP on its own cadence
      t0 = std::chrono::steady_clock::now();
      const bool retrain_rp =
          !rp_params || (!config.freeze_rp && cycle % config.rp_update_period == 0);
      rec.rp_retrained = retrain_rp;
      if (retrain_rp) {
        TrainConfig rp_cfg = config.rp_train;
        rp_cfg.objective = Objective::kReplication;
        rp_cfg.seed = derive_seed(config.seed, "train-rp", cycle);
        const std::optional<PolicyParams> warm =
            config.rp_warm_start ? rp_params : std::nullopt;
        TrainResult rp_result =
            train(splits.modeling, rp_cfg, warm, "rp-c" + std::to_string(cycle));
        rp_params = std::move(rp_result.params);
        if (persist) write_trace_csv(rp_result.trace, cycle_dir + "/rp_trace.csv");
      } else if (!(rp_params->schema == window_data.schema)) {
        // Vocabulary may have grown since RP last trained; remapping keeps
        // its behavior bit-identical while aligning the schema.
        rp_params = adapt_to_schema(*rp_params, window_data.schema);
      }
      TrainConfig lp_cfg = config.lp_train;
      lp_cfg.objective = Objective::kLearning;
      lp_cfg.seed = derive_seed(config.seed, "train-lp", cycle);
      const std::optional<PolicyParams> lp_warm =
          config.lp_warm_start_from_rp ? rp_params : lp_params;
      TrainResult lp_result =
          train(splits.modeling, lp_cfg, lp_warm, "lp-c" + std::to_string(cycle));
      lp_params = std::move(lp_result.params);
      rec.train_ms = ms_since(t0);
      rec.rp_id = rp_params->artifact_id;
      rec.lp_id = lp_params->artifact_id;
      if (persist) {
        write_trace_csv(lp_result.trace, cycle_dir + "/lp_trace.csv");
        save_policy(*rp_params, cycle_dir + "/rp.json");
        save_policy(*lp_params, cycle_dir + "/lp.json");
        write_jsonl(window.back(), cycle_dir + "/logs.jsonl");
      }

      // (4) build the hybrid against the incumbent as reference
      BuildHpOptions hp_opts;
      hp_opts.kappa_target = config.kappa_target;
      hp_opts.default_rpdr = config.default_rpdr;
      hp_opts.min_segment_support = config.min_segment_support;
      hp_opts.reference = serving.get();
      hp = build_hp(*rp_params, *lp_params, splits.validation, hp_opts,
                    "hp-c" + std::to_string(cycle));
      hp->parent_artifact_id = serving->id();
      rec.hp_id = hp->artifact_id;
      if (persist) hp->save_artifact(cycle_dir + "/hp.json");

      // (5) OPE for candidate and incumbent on the same validation window
      t0 = std::chrono::steady_clock::now();
      EvalOptions eval_opts;
      eval_opts.ips_clip = config.ips_clip;
      eval_opts.defect_threshold = config.defect_threshold;
      eval_opts.baseline = serving.get();
      rec.candidate_report =
          bootstrap(*hp, splits.validation, eval_opts, config.bootstrap_resamples,
                    config.bootstrap_level, derive_seed(config.seed, "bootstrap", cycle));
      rec.incumbent_report = evaluate(*serving, splits.validation, eval_opts);

      const SoftmaxPolicy rp_policy(*rp_params);
      const SoftmaxPolicy lp_policy(*lp_params);
      rec.replication_rp = replication_vs_logs(rp_policy, splits.validation);
      rec.replication_hp = replication_vs_logs(*hp, splits.validation);
      rec.replication_lp = replication_vs_logs(lp_policy, splits.validation);
      rec.validation_overlap_hp = compute_kappa(*hp, *serving, splits.validation);
      rec.eval_ms = ms_since(t0);

      // (6) gate
      rec.decision = decide(rec.candidate_report, rec.incumbent_report, config.gate);
      if (persist) {
        write_report_json(rec.candidate_report, cycle_dir + "/candidate_report.json");
        write_report_csv(rec.candidate_report, cycle_dir + "/candidate_report.csv");
        write_report_json(rec.incumbent_report, cycle_dir + "/incumbent_report.json");
        write_decision_json(rec.decision, cycle_dir + "/decision.json");
      }
    } catch (const std::exception& e) {
      rec.error = e.what();
      rec.decision = GateDecision{};  // not deployable
      rp_params = rp_snapshot;
      lp_params = lp_snapshot;
      hp.reset();
    }

    // (7) deploy on pass; always measure what now serves
    std::shared_ptr<RoutingPolicy> previous = serving;
    if (rec.decision.deploy && hp) {
      serving = std::make_shared<HybridPolicy>(std::move(*hp));
    }
    rec.serving_after_id = serving->id();
    rec.post_true_reward = true_reward(env_now, *serving);
    const Dataset fresh = sample_fresh_traffic(env_now, config.post_eval_samples,
                                               derive_seed(config.seed, "post", cycle));
    rec.post_replication = argmax_agreement(*serving, *previous, fresh);
    rec.post_overlap = compute_kappa(*serving, *previous, fresh);

    rec.total_ms = ms_since(cycle_start);
    result.records.push_back(std::move(rec));
  }

  if (persist) write_reports(result, config.out_dir);
  return result;
}

std::vector<std::pair<double, double>> calibration_pairs(const LoopResult& result) {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& rec : result.records) {
    if (!rec.decision.deploy) continue;
    pairs.emplace_back(rec.candidate_report.overall.expected_reward.value, rec.post_true_reward);
  }
  return pairs;
}

namespace {

json kappa_map_to_json(const std::map<std::string, SegmentKappa>& m) {
  json j = json::object();
  for (const auto& [segment, k] : m) {
    j[segment] = json{{"kappa", k.kappa}, {"support", k.support}};
  }
  return j;
}

std::map<std::string, SegmentKappa> kappa_map_from_json(const json& j) {
  std::map<std::string, SegmentKappa> m;
  for (const auto& [segment, kj] : j.items()) {
    m[segment] = SegmentKappa{kj.at("kappa").get<double>(), kj.at("support").get<size_t>()};
  }
  return m;
}

json decision_to_json(const GateDecision& d) {
  json violations = json::array();
  for (const auto& v : d.violations) {
    violations.push_back(json{{"code", v.code},
                              {"segment", v.segment},
                              {"metric", v.metric},
                              {"threshold", v.threshold},
                              {"observed", v.observed}});
  }
  return json{{"deploy", d.deploy}, {"violations", std::move(violations)}};
}

GateDecision decision_from_json(const json& j) {
  GateDecision d;
  d.deploy = j.at("deploy").get<bool>();
  for (const auto& vj : j.at("violations")) {
    d.violations.push_back(Violation{vj.at("code").get<std::string>(),
                                     vj.at("segment").get<std::string>(),
                                     vj.at("metric").get<std::string>(),
                                     vj.at("threshold").get<double>(),
                                     vj.at("observed").get<double>()});
  }
  return d;
}

}  // namespace

void write_reports(const LoopResult& result, const std::string& out_dir) {
  ensure_dir(out_dir);

  // records.json: complete machine-readable dump
  {
    json records = json::array();
    for (const auto& rec : result.records) {
      records.push_back(json{
          {"cycle", rec.cycle},
          {"incumbent_id", rec.incumbent_id},
          {"rp_id", rec.rp_id},
          {"lp_id", rec.lp_id},
          {"hp_id", rec.hp_id},
          {"rp_retrained", rec.rp_retrained},
          {"decision", decision_to_json(rec.decision)},
          {"serving_after_id", rec.serving_after_id},
          {"candidate_report", report_to_json(rec.candidate_report)},
          {"incumbent_report", report_to_json(rec.incumbent_report)},
          {"replication_rp", rec.replication_rp},
          {"replication_hp", rec.replication_hp},
          {"replication_lp", rec.replication_lp},
          {"validation_overlap_hp", kappa_map_to_json(rec.validation_overlap_hp)},
          {"post_true_reward", rec.post_true_reward},
          {"post_replication", rec.post_replication},
          {"post_overlap", kappa_map_to_json(rec.post_overlap)},
          {"error", rec.error},
      });
    }
    json j{{"format_version", 1},
           {"type", "loop_records"},
           {"baseline_id", result.baseline_id},
           {"baseline_true_reward", result.baseline_true_reward},
           {"records", std::move(records)}};
    std::ofstream out(out_dir + "/records.json", std::ios::binary);
    if (!out) throw std::runtime_error("write_reports: cannot open records.json");
    out << j.dump(2) << '\n';
  }

  // cycles.csv
  {
    std::ofstream out(out_dir + "/cycles.csv", std::ios::binary);
    out << "cycle,incumbent_id,rp_id,lp_id,hp_id,rp_retrained,decision,n_violations,"
           "serving_after_id,candidate_expected_reward,incumbent_expected_reward,"
           "candidate_replication,candidate_expected_match,candidate_ips_weight,"
           "candidate_exploration,replication_rp,replication_hp,replication_lp,"
           "min_validation_overlap,post_true_reward,post_replication,pct_vs_baseline\n";
    for (const auto& rec : result.records) {
      double min_overlap = 1.0;
      for (const auto& [seg, k] : rec.validation_overlap_hp) {
        if (k.support >= 30) min_overlap = std::min(min_overlap, k.kappa);
      }
      const double pct = result.baseline_true_reward > 0.0
                             ? (rec.post_true_reward - result.baseline_true_reward) /
                                   result.baseline_true_reward * 100.0
                             : 0.0;
      out << rec.cycle << ',' << rec.incumbent_id << ',' << rec.rp_id << ',' << rec.lp_id << ','
          << rec.hp_id << ',' << (rec.rp_retrained ? 1 : 0) << ','
          << (!rec.error.empty() ? "error"
                                 : rec.decision.deploy ? "deploy" : "abort")
          << ',' << rec.decision.violations.size()
          << ',' << rec.serving_after_id << ','
          << format_double(rec.candidate_report.overall.expected_reward.value) << ','
          << format_double(rec.incumbent_report.overall.expected_reward.value) << ','
          << format_double(rec.candidate_report.overall.replication_rate.value) << ','
          << format_double(rec.candidate_report.overall.expected_match.value) << ','
          << format_double(rec.candidate_report.overall.expected_ips_weight.value) << ','
          << format_double(rec.candidate_report.overall.stochastic_exploration_rate.value) << ','
          << format_double(rec.replication_rp) << ',' << format_double(rec.replication_hp) << ','
          << format_double(rec.replication_lp) << ',' << format_double(min_overlap) << ','
          << format_double(rec.post_true_reward) << ',' << format_double(rec.post_replication)
          << ',' << format_double(pct) << '\n';
    }
  }

  // trend.csv: normalized change vs baseline
  {
    std::ofstream out(out_dir + "/trend.csv", std::ios::binary);
    out << "cycle,serving_after_id,true_reward,pct_vs_baseline\n";
    for (const auto& rec : result.records) {
      const double pct = result.baseline_true_reward > 0.0
                             ? (rec.post_true_reward - result.baseline_true_reward) /
                                   result.baseline_true_reward * 100.0
                             : 0.0;
      out << rec.cycle << ',' << rec.serving_after_id << ','
          << format_double(rec.post_true_reward) << ',' << format_double(pct) << '\n';
    }
  }

  // calibration.csv + summary.json
  {
    std::ofstream out(out_dir + "/calibration.csv", std::ios::binary);
    out << "artifact_id,ope_expected_reward,true_reward\n";
    const auto pairs = calibration_pairs(result);
    size_t pair_idx = 0;
    for (const auto& rec : result.records) {
      if (!rec.decision.deploy) continue;
      out << rec.hp_id << ',' << format_double(pairs[pair_idx].first) << ','
          << format_double(pairs[pair_idx].second) << '\n';
      ++pair_idx;
    }
    json summary{{"baseline_id", result.baseline_id},
                 {"baseline_true_reward", result.baseline_true_reward},
                 {"n_cycles", result.records.size()},
                 {"n_deployed", pairs.size()}};
    if (pairs.size() >= 2) {
      std::vector<double> xs, ys;
      for (const auto& [ope, oracle] : pairs) {
        xs.push_back(ope);
        ys.push_back(oracle);
      }
      try {
        summary["pearson_ope_vs_true"] = pearson_correlation(xs, ys);
      } catch (const std::exception&) {
        // constant estimates: correlation undefined, leave it out
      }
    }
    std::ofstream sout(out_dir + "/summary.json", std::ios::binary);
    sout << summary.dump(2) << '\n';
  }

  // timings.log (deliberately not a CSV: wall-clock values vary run to run)
  {
    std::ofstream out(out_dir + "/timings.log", std::ios::binary);
    for (const auto& rec : result.records) {
      out << "cycle " << rec.cycle << ": collect " << rec.collect_ms << " ms, train "
          << rec.train_ms << " ms, eval " << rec.eval_ms << " ms, total " << rec.total_ms
          << " ms\n";
    }
  }
}

LoopResult load_records_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_records_json: cannot open " + path);
  const json j = json::parse(in);
  if (j.at("type").get<std::string>() != "loop_records") {
    throw std::runtime_error("load_records_json: '" + path + "' is not a loop records file");
  }
  LoopResult result;
  result.baseline_id = j.at("baseline_id").get<std::string>();
  result.baseline_true_reward = j.at("baseline_true_reward").get<double>();
  for (const auto& rj : j.at("records")) {
    CycleRecord rec;
    rec.cycle = rj.at("cycle").get<int>();
    rec.incumbent_id = rj.at("incumbent_id").get<std::string>();
    rec.rp_id = rj.at("rp_id").get<std::string>();
    rec.lp_id = rj.at("lp_id").get<std::string>();
    rec.hp_id = rj.at("hp_id").get<std::string>();
    rec.rp_retrained = rj.at("rp_retrained").get<bool>();
    rec.decision = decision_from_json(rj.at("decision"));
    rec.serving_after_id = rj.at("serving_after_id").get<std::string>();
    rec.candidate_report = report_from_json(rj.at("candidate_report"));
    rec.incumbent_report = report_from_json(rj.at("incumbent_report"));
    rec.replication_rp = rj.at("replication_rp").get<double>();
    rec.replication_hp = rj.at("replication_hp").get<double>();
    rec.replication_lp = rj.at("replication_lp").get<double>();
    rec.validation_overlap_hp = kappa_map_from_json(rj.at("validation_overlap_hp"));
    rec.post_true_reward = rj.at("post_true_reward").get<double>();
    rec.post_replication = rj.at("post_replication").get<double>();
    rec.post_overlap = kappa_map_from_json(rj.at("post_overlap"));
    rec.error = rj.value("error", "");
    result.records.push_back(std::move(rec));
  }
  return result;
}

}  // namespace skillroute
