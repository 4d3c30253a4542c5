#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "skillroute/gate.hpp"
#include "skillroute/hybrid.hpp"
#include "skillroute/kv.hpp"
#include "skillroute/ope.hpp"
#include "skillroute/simulator.hpp"
#include "skillroute/train.hpp"

namespace skillroute {

struct LoopConfig {
  int n_cycles = 4;
  size_t logs_per_cycle = 4000;
  int rp_update_period = 7;  // LP refreshes every cycle, RP every k-th
  int window_cycles = 2;     // sliding training window
  double kappa_target = 0.90;
  double split_fraction = 0.8;
  double default_rpdr = 1.0;
  size_t min_segment_support = 30;
  std::optional<double> ips_clip = 10.0;
  double defect_threshold = 0.5;
  int bootstrap_resamples = 8;
  double bootstrap_level = 0.95;
  size_t post_eval_samples = 4000;
  bool freeze_rp = false;  // keep the cycle-0 RP throughout (fixed-RP ablation)
  bool lp_warm_start_from_rp = true;
  bool rp_warm_start = true;
  TrainConfig rp_train;
  TrainConfig lp_train;
  GuardrailConfig gate;
  uint64_t seed = 1;
  std::string out_dir;  // when set, artifacts and reports are written per cycle

  LoopConfig();
  void validate() const;
  static LoopConfig from_kv(const KvConfig& kv);
};

struct CycleRecord {
  int cycle = 0;
  std::string incumbent_id;  // serving policy while this cycle's logs were collected
  std::string rp_id, lp_id, hp_id;
  bool rp_retrained = false;
  GateDecision decision;
  std::string serving_after_id;
  OpeReport candidate_report;
  OpeReport incumbent_report;
  // Argmax agreement with the logged (incumbent-chosen) action on the
  // validation split, for each of the three models built this cycle.
  double replication_rp = 0.0, replication_hp = 0.0, replication_lp = 0.0;
  // Per-segment overlap (1 - L1/2) between the candidate HP and the
  // incumbent on the validation split: the RPDR floor made measurable.
  std::map<std::string, SegmentKappa> validation_overlap_hp;
  // Oracle value of whatever serves after the gate decision, plus fresh
  // traffic agreement/overlap against the incumbent.
  double post_true_reward = 0.0;
  double post_replication = 0.0;
  std::map<std::string, SegmentKappa> post_overlap;
  // Training/build failures abort the cycle, never the loop; the diagnostic
  // lands here and the incumbent keeps serving.
  std::string error;
  double collect_ms = 0.0, train_ms = 0.0, eval_ms = 0.0, total_ms = 0.0;
};

struct LoopResult {
  std::string baseline_id;
  double baseline_true_reward = 0.0;
  std::vector<CycleRecord> records;
};

// Collect -> split -> train -> build HP -> OPE -> gate -> deploy -> measure,
// n_cycles times. Aborted cycles keep the incumbent serving and the loop
// continues. Deterministic under config.seed.
LoopResult run_loop(const Environment& env, const LoopConfig& config);

// cycles.csv / trend.csv / calibration.csv plus records.json and summary
// (wall-clock timings go to timings.log, never into the CSVs).
void write_reports(const LoopResult& result, const std::string& out_dir);

LoopResult load_records_json(const std::string& path);

// Pairs (OPE estimate, oracle value) for deployed cycles; the calibration
// data behind the OPE-vs-online correlation.
std::vector<std::pair<double, double>> calibration_pairs(const LoopResult& result);

}  // namespace skillroute
