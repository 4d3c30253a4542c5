#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skillroute/domain.hpp"
#include "skillroute/kv.hpp"
#include "skillroute/policy.hpp"

namespace skillroute {

enum class Objective { kReplication, kLearning };  // RP (imitate logs) / LP (maximize IPS reward)

struct TrainConfig {
  Objective objective = Objective::kReplication;
  double step_size = 0.05;
  int batch_size = 64;
  int epochs = 30;
  std::optional<double> ips_clip = 10.0;  // LP only; > 1 when present
  double l2_penalty = 1e-4;
  uint64_t seed = 0;
  ParamInit init = ParamInit::kScaledRandom;
  int embed_dim = 8;
  int hidden_dim = 32;

  void validate() const;

  // Overlays values from a flat key-value document; keys are prefixed
  // ("rp." / "lp." inside a loop config, "" in a standalone training file).
  static TrainConfig from_kv(const KvConfig& kv, const std::string& prefix,
                             const TrainConfig& defaults);
};

// Mean over the batch of -log prob(logged action). Minimized by RP.
double loss_rp(const PolicyParams& params, std::span<const LoggedInteraction> batch);

// Mean over the batch of reward * min(prob(a)/logged_propensity, clip).
// This is the value to MAXIMIZE; the trainer negates it internally.
double loss_lp(const PolicyParams& params, std::span<const LoggedInteraction> batch,
               std::optional<double> ips_clip);

// Analytic gradients matching the two losses (grad_lp is the gradient of
// the maximization value, not its negation).
Eigen::VectorXd grad_rp(const PolicyParams& params, std::span<const LoggedInteraction> batch);
Eigen::VectorXd grad_lp(const PolicyParams& params, std::span<const LoggedInteraction> batch,
                        std::optional<double> ips_clip);

struct EpochStat {
  int epoch = 0;  // 0 records the initial parameters
  double objective = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<EpochStat> trace;
};

// Minibatch SGD on (-objective) with optional L2. Deterministic under
// config.seed. Throws on non-finite loss with a diagnostic.
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::optional<PolicyParams>& warm_start, std::string artifact_id);

// Remaps params onto an evolved schema: shared tokens keep their columns,
// new tokens start from the OOV column (so behavior is unchanged at the
// handoff), the scorer carries over as-is.
PolicyParams adapt_to_schema(const PolicyParams& src, const FeatureSchema& schema);

struct GradCheckReport {
  double max_rel_error_rp = 0.0;
  double max_rel_error_lp = 0.0;
  int coords_checked = 0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite differences on randomly selected coordinates, for both
// losses. step = 1e-5.
GradCheckReport grad_check(const PolicyParams& params, std::span<const LoggedInteraction> batch,
                           double tolerance, int n_coords = 50, uint64_t seed = 0,
                           std::optional<double> ips_clip = std::nullopt);

void write_trace_csv(const std::vector<EpochStat>& trace, const std::string& path);

}  // namespace skillroute
