#include "skillroute/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "skillroute/stats.hpp"

namespace skillroute {

void TrainConfig::validate() const {
  if (!(step_size > 0.0)) throw std::invalid_argument("TrainConfig: step_size must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (ips_clip && !(*ips_clip > 1.0)) {
    throw std::invalid_argument("TrainConfig: ips_clip must be > 1 when present");
  }
  if (l2_penalty < 0.0) throw std::invalid_argument("TrainConfig: l2_penalty must be >= 0");
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv, const std::string& prefix,
                                 const TrainConfig& defaults) {
  static const std::set<std::string> known = {"step_size", "batch_size", "epochs",
                                              "l2_penalty", "embed_dim", "hidden_dim",
                                              "ips_clip",  "init",       "seed"};
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind(prefix, 0) != 0) continue;
    if (!known.count(key.substr(prefix.size()))) {
      throw std::runtime_error("train config: unknown key '" + key + "'");
    }
  }
  TrainConfig t = defaults;
  t.step_size = kv.get_double(prefix + "step_size", t.step_size);
  t.batch_size = static_cast<int>(kv.get_int(prefix + "batch_size", t.batch_size));
  t.epochs = static_cast<int>(kv.get_int(prefix + "epochs", t.epochs));
  t.l2_penalty = kv.get_double(prefix + "l2_penalty", t.l2_penalty);
  t.embed_dim = static_cast<int>(kv.get_int(prefix + "embed_dim", t.embed_dim));
  t.hidden_dim = static_cast<int>(kv.get_int(prefix + "hidden_dim", t.hidden_dim));
  if (kv.has(prefix + "ips_clip")) {
    const double clip = kv.get_double(prefix + "ips_clip", 0.0);
    t.ips_clip = clip <= 0.0 ? std::nullopt : std::optional<double>(clip);
  }
  if (kv.has(prefix + "init")) {
    const std::string init = kv.get_string(prefix + "init", "");
    if (init == "zeros") {
      t.init = ParamInit::kZeros;
    } else if (init == "scaled_random") {
      t.init = ParamInit::kScaledRandom;
    } else {
      throw std::runtime_error("train config: unknown init '" + init + "'");
    }
  }
  t.seed = static_cast<uint64_t>(kv.get_int(prefix + "seed", static_cast<long>(t.seed)));
  t.validate();
  return t;
}

namespace {

struct CandidateForward {
  Eigen::VectorXd features;
  Eigen::VectorXd hidden_pre;
  Eigen::VectorXd hidden;
};

struct InteractionForward {
  std::vector<CandidateForward> candidates;
  ActionDistribution dist;
};

InteractionForward forward(const PolicyParams& params, const LoggedInteraction& it) {
  InteractionForward fw;
  const auto w1 = params.scorer_w1();
  const auto b1 = params.scorer_b1();
  const auto w2 = params.scorer_w2();
  const double b2 = params.scorer_b2();
  Eigen::VectorXd logits(it.candidates.size());
  fw.candidates.reserve(it.candidates.size());
  for (size_t i = 0; i < it.candidates.size(); ++i) {
    CandidateForward cf;
    cf.features = featurize(it.candidates[i], params);
    cf.hidden_pre = w1 * cf.features + b1;
    cf.hidden = cf.hidden_pre.cwiseMax(0.0);
    logits[static_cast<Eigen::Index>(i)] = w2.dot(cf.hidden) + b2;
    fw.candidates.push_back(std::move(cf));
  }
  fw.dist = softmax(logits);
  return fw;
}

// Scatters d(objective)/d(logit_i) back through the shared scorer and the
// embedding tables into a flat gradient vector.
void backward_logits(const PolicyParams& params, const LoggedInteraction& it,
                     const InteractionForward& fw, const Eigen::VectorXd& dlogits,
                     Eigen::VectorXd& grad) {
  const int de = params.embed_dim;
  const int h = params.hidden_dim;
  const int d = params.feature_dim();
  const auto w1 = params.scorer_w1();
  const auto w2 = params.scorer_w2();
  Eigen::Map<Eigen::MatrixXd> g_intent(grad.data() + params.offset_intent(), de,
                                       params.intent_slots());
  Eigen::Map<Eigen::MatrixXd> g_skill(grad.data() + params.offset_skill(), de,
                                      params.skill_slots());
  Eigen::Map<Eigen::MatrixXd> g_context(grad.data() + params.offset_context(), de,
                                        params.context_slots());
  Eigen::Map<Eigen::MatrixXd> g_w1(grad.data() + params.offset_w1(), h, d);
  Eigen::Map<Eigen::VectorXd> g_b1(grad.data() + params.offset_b1(), h);
  Eigen::Map<Eigen::VectorXd> g_w2(grad.data() + params.offset_w2(), h);
  double& g_b2 = grad[params.offset_b2()];

  for (size_t i = 0; i < it.candidates.size(); ++i) {
    const double g = dlogits[static_cast<Eigen::Index>(i)];
    if (g == 0.0) continue;
    const auto& cf = fw.candidates[i];
    g_b2 += g;
    g_w2 += g * cf.hidden;
    Eigen::VectorXd dh_pre =
        (g * w2.array() * (cf.hidden_pre.array() > 0.0).cast<double>()).matrix();
    g_b1 += dh_pre;
    g_w1 += dh_pre * cf.features.transpose();
    const Eigen::VectorXd df = w1.transpose() * dh_pre;
    const auto& cand = it.candidates[i];
    g_intent.col(params.intent_index(cand.intent_id)) += df.segment(0, de);
    g_skill.col(params.skill_index(cand.skill_id)) += df.segment(de, de);
    for (const auto& token : cand.categorical_context) {
      g_context.col(params.context_index(token)) += df.segment(2 * de, de);
    }
  }
}

double ips_weight(const ActionDistribution& dist, const LoggedInteraction& it,
                  std::optional<double> clip) {
  const double w = dist[static_cast<size_t>(it.chosen_action)] / it.logging_propensity;
  return clip ? std::min(w, *clip) : w;
}

}  // namespace

double loss_rp(const PolicyParams& params, std::span<const LoggedInteraction> batch) {
  if (batch.empty()) throw std::invalid_argument("loss_rp: empty batch");
  double total = 0.0;
  for (const auto& it : batch) {
    const ActionDistribution dist = score(params, it.candidates);
    total += -std::log(dist[static_cast<size_t>(it.chosen_action)]);
  }
  return total / static_cast<double>(batch.size());
}

double loss_lp(const PolicyParams& params, std::span<const LoggedInteraction> batch,
               std::optional<double> ips_clip) {
  if (batch.empty()) throw std::invalid_argument("loss_lp: empty batch");
  double total = 0.0;
  for (const auto& it : batch) {
    if (!(it.logging_propensity > 0.0)) {
      throw std::invalid_argument("loss_lp: non-positive logging propensity in batch");
    }
    const ActionDistribution dist = score(params, it.candidates);
    total += it.reward * ips_weight(dist, it, ips_clip);
  }
  return total / static_cast<double>(batch.size());
}

Eigen::VectorXd grad_rp(const PolicyParams& params, std::span<const LoggedInteraction> batch) {
  if (batch.empty()) throw std::invalid_argument("grad_rp: empty batch");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.param_count());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& it : batch) {
    const InteractionForward fw = forward(params, it);
    Eigen::VectorXd dlogits(it.candidates.size());
    for (size_t i = 0; i < it.candidates.size(); ++i) {
      const double indicator = (static_cast<int>(i) == it.chosen_action) ? 1.0 : 0.0;
      dlogits[static_cast<Eigen::Index>(i)] = (fw.dist[i] - indicator) * inv_n;
    }
    backward_logits(params, it, fw, dlogits, grad);
  }
  return grad;
}

Eigen::VectorXd grad_lp(const PolicyParams& params, std::span<const LoggedInteraction> batch,
                        std::optional<double> ips_clip) {
  if (batch.empty()) throw std::invalid_argument("grad_lp: empty batch");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.param_count());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& it : batch) {
    const InteractionForward fw = forward(params, it);
    const size_t a = static_cast<size_t>(it.chosen_action);
    const double w = fw.dist[a] / it.logging_propensity;
    if (ips_clip && w >= *ips_clip) continue;  // clipped term is constant
    const double scale = it.reward * w * inv_n;
    if (scale == 0.0) continue;
    Eigen::VectorXd dlogits(it.candidates.size());
    for (size_t i = 0; i < it.candidates.size(); ++i) {
      const double indicator = (i == a) ? 1.0 : 0.0;
      dlogits[static_cast<Eigen::Index>(i)] = scale * (indicator - fw.dist[i]);
    }
    backward_logits(params, it, fw, dlogits, grad);
  }
  return grad;
}

PolicyParams adapt_to_schema(const PolicyParams& src, const FeatureSchema& schema) {
  if (!schema_compatible(src.schema, schema)) {
    throw ValidationError("adapt_to_schema: numeric dimensions differ");
  }
  if (src.schema == schema) return src;
  PolicyParams dst = make_policy_params(schema, src.embed_dim, src.hidden_dim, ParamInit::kZeros,
                                        0, src.artifact_id);
  dst.parent_artifact_id = src.parent_artifact_id;
  const int de = src.embed_dim;
  const auto remap = [de](const std::vector<std::string>& dst_vocab,
                          Eigen::Map<const Eigen::MatrixXd> src_emb,
                          const std::vector<std::string>& src_vocab, Eigen::VectorXd& theta,
                          int offset) {
    Eigen::Map<Eigen::MatrixXd> dst_emb(theta.data() + offset, de,
                                        static_cast<int>(dst_vocab.size()) + 1);
    const Eigen::VectorXd oov = src_emb.col(src_emb.cols() - 1);
    for (size_t c = 0; c < dst_vocab.size(); ++c) {
      const auto it = std::lower_bound(src_vocab.begin(), src_vocab.end(), dst_vocab[c]);
      if (it != src_vocab.end() && *it == dst_vocab[c]) {
        dst_emb.col(static_cast<int>(c)) = src_emb.col(it - src_vocab.begin());
      } else {
        dst_emb.col(static_cast<int>(c)) = oov;
      }
    }
    dst_emb.col(static_cast<int>(dst_vocab.size())) = oov;
  };
  remap(schema.intent_vocab, src.intent_embedding(), src.schema.intent_vocab, dst.theta,
        dst.offset_intent());
  remap(schema.skill_vocab, src.skill_embedding(), src.schema.skill_vocab, dst.theta,
        dst.offset_skill());
  remap(schema.context_vocab, src.context_embedding(), src.schema.context_vocab, dst.theta,
        dst.offset_context());
  const int scorer_len = dst.param_count() - dst.offset_w1();
  dst.theta.segment(dst.offset_w1(), scorer_len) =
      src.theta.segment(src.offset_w1(), scorer_len);
  return dst;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::optional<PolicyParams>& warm_start, std::string artifact_id) {
  config.validate();
  if (dataset.interactions.empty()) throw std::invalid_argument("train: empty dataset");

  PolicyParams params;
  if (warm_start) {
    if (!schema_compatible(warm_start->schema, dataset.schema)) {
      throw ValidationError("train: warm-start schema incompatible with dataset");
    }
    params = adapt_to_schema(*warm_start, dataset.schema);
    params.parent_artifact_id = warm_start->artifact_id;
  } else {
    params = make_policy_params(dataset.schema, config.embed_dim, config.hidden_dim, config.init,
                                config.seed, artifact_id);
  }
  params.artifact_id = std::move(artifact_id);

  const bool is_rp = config.objective == Objective::kReplication;
  const auto full_objective = [&](const PolicyParams& p) {
    return is_rp ? loss_rp(p, dataset.interactions)
                 : loss_lp(p, dataset.interactions, config.ips_clip);
  };
  const auto full_gradient = [&](const PolicyParams& p) {
    // Gradient of the MINIMIZED quantity, before L2.
    return is_rp ? grad_rp(p, dataset.interactions)
                 : Eigen::VectorXd(-grad_lp(p, dataset.interactions, config.ips_clip));
  };

  TrainResult result;
  result.trace.push_back({0, full_objective(params), full_gradient(params).norm()});

  const size_t n = dataset.interactions.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<LoggedInteraction> batch;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, "train-shuffle", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (size_t start = 0; start < n; start += static_cast<size_t>(config.batch_size)) {
      const size_t stop = std::min(n, start + static_cast<size_t>(config.batch_size));
      batch.clear();
      for (size_t k = start; k < stop; ++k) batch.push_back(dataset.interactions[order[k]]);
      Eigen::VectorXd grad =
          is_rp ? grad_rp(params, batch) : Eigen::VectorXd(-grad_lp(params, batch, config.ips_clip));
      if (config.l2_penalty > 0.0) grad += config.l2_penalty * params.theta;
      params.theta -= config.step_size * grad;
    }
    const double objective = full_objective(params);
    if (!std::isfinite(objective)) {
      throw std::runtime_error("train: non-finite objective at epoch " + std::to_string(epoch) +
                               " (step_size " + std::to_string(config.step_size) + ")");
    }
    result.trace.push_back({epoch, objective, full_gradient(params).norm()});
  }
  result.params = std::move(params);
  return result;
}

GradCheckReport grad_check(const PolicyParams& params, std::span<const LoggedInteraction> batch,
                           double tolerance, int n_coords, uint64_t seed,
                           std::optional<double> ips_clip) {
  GradCheckReport report;
  report.tolerance = tolerance;
  const double h = 1e-5;
  const Eigen::VectorXd analytic_rp = grad_rp(params, batch);
  const Eigen::VectorXd analytic_lp = grad_lp(params, batch, ips_clip);
  Rng rng(derive_seed(seed, "grad-check"));
  PolicyParams probe = params;
  const int total = params.param_count();
  const int coords = std::min(n_coords, total);
  const auto central_diff = [&](auto&& f, int idx) {
    const double saved = probe.theta[idx];
    probe.theta[idx] = saved + h;
    const double up = f(probe);
    probe.theta[idx] = saved - h;
    const double down = f(probe);
    probe.theta[idx] = saved;
    return (up - down) / (2.0 * h);
  };
  const auto rel_error = [](double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
  };
  for (int k = 0; k < coords; ++k) {
    const int idx = static_cast<int>(rng.index(static_cast<size_t>(total)));
    const double num_rp =
        central_diff([&](const PolicyParams& p) { return loss_rp(p, batch); }, idx);
    const double num_lp = central_diff(
        [&](const PolicyParams& p) { return loss_lp(p, batch, ips_clip); }, idx);
    report.max_rel_error_rp = std::max(report.max_rel_error_rp, rel_error(analytic_rp[idx], num_rp));
    report.max_rel_error_lp = std::max(report.max_rel_error_lp, rel_error(analytic_lp[idx], num_lp));
  }
  report.coords_checked = coords;
  report.pass = report.max_rel_error_rp < tolerance && report.max_rel_error_lp < tolerance;
  return report;
}

void write_trace_csv(const std::vector<EpochStat>& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_trace_csv: cannot open " + path);
  out << "epoch,objective,grad_norm\n";
  for (const auto& stat : trace) {
    out << stat.epoch << ',' << format_double(stat.objective) << ','
        << format_double(stat.grad_norm) << '\n';
  }
}

}  // namespace skillroute
