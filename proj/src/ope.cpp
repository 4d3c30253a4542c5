#include "skillroute/ope.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <vector>

#include "json.hpp"
#include "skillroute/rng.hpp"
#include "skillroute/stats.hpp"

namespace skillroute {

using nlohmann::json;

namespace {

// Per-interaction statistics; computing them once lets bootstrap resamples
// re-aggregate without re-scoring the policy.
struct Row {
  const std::string* segment;
  double replicated;   // argmax == logged action
  double match;        // propensity on the logged action
  double l1;           // NaN when no baseline
  double ips_weight;   // clipped
  double ips_reward;   // reward * clipped weight
  double exploration;  // 1 - max propensity
  bool defect;
};

std::vector<Row> compute_rows(const RoutingPolicy& policy, const Dataset& logs,
                              const EvalOptions& options) {
  std::vector<Row> rows;
  rows.reserve(logs.interactions.size());
  for (const auto& it : logs.interactions) {
    if (!(it.logging_propensity > 0.0)) {
      throw ValidationError("evaluate: interaction '" + it.interaction_id +
                            "' has non-positive logging propensity");
    }
    const ActionDistribution dist = policy.distribution(it.candidates);
    const size_t a = static_cast<size_t>(it.chosen_action);
    Row row;
    row.segment = &it.segment_id;
    row.replicated = (argmax_index(dist) == a) ? 1.0 : 0.0;
    row.match = dist[a];
    double w = dist[a] / it.logging_propensity;
    if (options.ips_clip) w = std::min(w, *options.ips_clip);
    row.ips_weight = w;
    row.ips_reward = it.reward * w;
    double max_prop = dist[0];
    for (size_t i = 1; i < dist.size(); ++i) max_prop = std::max(max_prop, dist[i]);
    row.exploration = 1.0 - max_prop;
    row.defect = it.reward < options.defect_threshold;
    if (options.baseline) {
      row.l1 = l1_distance(dist, options.baseline->distribution(it.candidates));
    } else {
      row.l1 = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(row);
  }
  return rows;
}

MetricBundle aggregate(const std::vector<const Row*>& rows, bool has_baseline) {
  MetricBundle b;
  b.n = rows.size();
  if (rows.empty()) return b;
  const double n = static_cast<double>(rows.size());
  double repl = 0, match = 0, w = 0, wr = 0, expl = 0, l1 = 0, l1_sq = 0;
  double repl_d = 0, expl_d = 0;
  size_t n_defect = 0;
  for (const Row* r : rows) {
    repl += r->replicated;
    match += r->match;
    w += r->ips_weight;
    wr += r->ips_reward;
    expl += r->exploration;
    if (has_baseline) {
      l1 += r->l1;
      l1_sq += r->l1 * r->l1;
    }
    if (r->defect) {
      ++n_defect;
      repl_d += r->replicated;
      expl_d += r->exploration;
    }
  }
  b.replication_rate.value = repl / n;
  b.expected_match.value = match / n;
  b.expected_ips_weight.value = w / n;
  b.expected_reward.value = wr / n;
  b.stochastic_exploration_rate.value = expl / n;
  if (has_baseline) {
    const double mean = l1 / n;
    b.l1_mean = Metric{mean, std::nullopt};
    b.l1_std = Metric{std::sqrt(std::max(0.0, l1_sq / n - mean * mean)), std::nullopt};
  }
  const size_t n_ok = rows.size() - n_defect;
  if (n_defect > 0) {
    b.replication_defect = Metric{repl_d / static_cast<double>(n_defect), std::nullopt};
    b.exploration_defect = Metric{expl_d / static_cast<double>(n_defect), std::nullopt};
  }
  if (n_ok > 0) {
    b.replication_nondefect =
        Metric{(repl - repl_d) / static_cast<double>(n_ok), std::nullopt};
    b.exploration_nondefect =
        Metric{(expl - expl_d) / static_cast<double>(n_ok), std::nullopt};
  }
  return b;
}

OpeReport aggregate_report(const std::vector<Row>& rows, bool has_baseline) {
  OpeReport report;
  report.n_interactions = rows.size();
  std::vector<const Row*> all;
  all.reserve(rows.size());
  std::map<std::string, std::vector<const Row*>> by_segment;
  for (const auto& row : rows) {
    all.push_back(&row);
    by_segment[*row.segment].push_back(&row);
  }
  report.overall = aggregate(all, has_baseline);
  for (const auto& [segment, seg_rows] : by_segment) {
    report.per_segment[segment] = aggregate(seg_rows, has_baseline);
  }
  return report;
}

}  // namespace

OpeReport evaluate(const RoutingPolicy& policy, const Dataset& logs, const EvalOptions& options) {
  const std::vector<Row> rows = compute_rows(policy, logs, options);
  OpeReport report = aggregate_report(rows, options.baseline != nullptr);
  report.policy_artifact_id = policy.id();
  if (options.baseline) report.baseline_artifact_id = options.baseline->id();
  return report;
}

namespace {

// Walks every Metric in a bundle in a fixed order. B is MetricBundle or
// const MetricBundle; the callback receives a possibly-null Metric pointer.
template <typename B, typename Fn>
void for_each_metric(B& b, Fn&& fn) {
  const auto opt = [](auto& o) { return o ? &*o : nullptr; };
  fn("replication_rate", &b.replication_rate);
  fn("replication_defect", opt(b.replication_defect));
  fn("replication_nondefect", opt(b.replication_nondefect));
  fn("expected_match", &b.expected_match);
  fn("l1_mean", opt(b.l1_mean));
  fn("l1_std", opt(b.l1_std));
  fn("expected_reward", &b.expected_reward);
  fn("expected_ips_weight", &b.expected_ips_weight);
  fn("stochastic_exploration_rate", &b.stochastic_exploration_rate);
  fn("exploration_defect", opt(b.exploration_defect));
  fn("exploration_nondefect", opt(b.exploration_nondefect));
}

void attach_cis(MetricBundle& point, std::vector<MetricBundle*> resampled, double level) {
  const double lo_q = (1.0 - level) / 2.0;
  const double hi_q = 1.0 - lo_q;
  // Collect this metric's value across resamples (where present), take the
  // percentile interval, and widen it to contain the point estimate.
  std::vector<std::pair<std::string, Metric*>> point_slots;
  for_each_metric(point, [&](const char* name, Metric* m) {
    point_slots.emplace_back(name, m);
  });
  std::vector<std::vector<double>> values(point_slots.size());
  for (MetricBundle* rb : resampled) {
    size_t slot = 0;
    for_each_metric(*rb, [&](const char*, const Metric* m) {
      if (m != nullptr) values[slot].push_back(m->value);
      ++slot;
    });
  }
  for (size_t slot = 0; slot < point_slots.size(); ++slot) {
    Metric* m = point_slots[slot].second;
    if (m == nullptr || values[slot].empty()) continue;
    std::sort(values[slot].begin(), values[slot].end());
    const double lo = std::min(quantile_sorted(values[slot], lo_q), m->value);
    const double hi = std::max(quantile_sorted(values[slot], hi_q), m->value);
    m->ci = std::make_pair(lo, hi);
  }
}

}  // namespace

OpeReport bootstrap(const RoutingPolicy& policy, const Dataset& logs, const EvalOptions& options,
                    int n_resamples, double level, uint64_t seed) {
  if (n_resamples < 2) throw std::invalid_argument("bootstrap: need n_resamples >= 2");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap: level in (0, 1)");
  const bool has_baseline = options.baseline != nullptr;
  const std::vector<Row> rows = compute_rows(policy, logs, options);
  OpeReport report = aggregate_report(rows, has_baseline);
  report.policy_artifact_id = policy.id();
  if (options.baseline) report.baseline_artifact_id = options.baseline->id();

  std::vector<OpeReport> resamples;
  resamples.reserve(static_cast<size_t>(n_resamples));
  for (int r = 0; r < n_resamples; ++r) {
    Rng rng(derive_seed(seed, "bootstrap-resample", static_cast<uint64_t>(r)));
    std::vector<Row> draw;
    draw.reserve(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) draw.push_back(rows[rng.index(rows.size())]);
    resamples.push_back(aggregate_report(draw, has_baseline));
  }

  std::vector<MetricBundle*> overall_bundles;
  for (auto& r : resamples) overall_bundles.push_back(&r.overall);
  attach_cis(report.overall, overall_bundles, level);
  for (auto& [segment, bundle] : report.per_segment) {
    std::vector<MetricBundle*> seg_bundles;
    for (auto& r : resamples) {
      const auto it = r.per_segment.find(segment);
      if (it != r.per_segment.end()) seg_bundles.push_back(&it->second);
    }
    attach_cis(bundle, seg_bundles, level);
  }
  return report;
}

namespace {

json metric_to_json(const Metric& m) {
  json j{{"value", m.value}};
  if (m.ci) j["ci"] = {m.ci->first, m.ci->second};
  return j;
}

Metric metric_from_json(const json& j) {
  Metric m;
  m.value = j.at("value").get<double>();
  if (j.contains("ci")) {
    m.ci = std::make_pair(j.at("ci").at(0).get<double>(), j.at("ci").at(1).get<double>());
  }
  return m;
}

json bundle_to_json(const MetricBundle& b) {
  json j{{"n", b.n}};
  for_each_metric(b, [&](const char* name, const Metric* m) {
    if (m != nullptr) j[name] = metric_to_json(*m);
  });
  return j;
}

MetricBundle bundle_from_json(const json& j) {
  MetricBundle b;
  b.n = j.at("n").get<size_t>();
  const auto opt = [&](const char* name) -> std::optional<Metric> {
    if (!j.contains(name)) return std::nullopt;
    return metric_from_json(j.at(name));
  };
  b.replication_rate = metric_from_json(j.at("replication_rate"));
  b.replication_defect = opt("replication_defect");
  b.replication_nondefect = opt("replication_nondefect");
  b.expected_match = metric_from_json(j.at("expected_match"));
  b.l1_mean = opt("l1_mean");
  b.l1_std = opt("l1_std");
  b.expected_reward = metric_from_json(j.at("expected_reward"));
  b.expected_ips_weight = metric_from_json(j.at("expected_ips_weight"));
  b.stochastic_exploration_rate = metric_from_json(j.at("stochastic_exploration_rate"));
  b.exploration_defect = opt("exploration_defect");
  b.exploration_nondefect = opt("exploration_nondefect");
  return b;
}

}  // namespace

json report_to_json(const OpeReport& report) {
  json segments = json::object();
  for (const auto& [segment, bundle] : report.per_segment) {
    segments[segment] = bundle_to_json(bundle);
  }
  return json{{"format_version", 1},
              {"type", "ope_report"},
              {"policy_artifact_id", report.policy_artifact_id},
              {"baseline_artifact_id", report.baseline_artifact_id},
              {"n_interactions", report.n_interactions},
              {"overall", bundle_to_json(report.overall)},
              {"per_segment", std::move(segments)}};
}

OpeReport report_from_json(const json& j) {
  OpeReport report;
  report.policy_artifact_id = j.at("policy_artifact_id").get<std::string>();
  report.baseline_artifact_id = j.at("baseline_artifact_id").get<std::string>();
  report.n_interactions = j.at("n_interactions").get<size_t>();
  report.overall = bundle_from_json(j.at("overall"));
  for (const auto& [segment, bj] : j.at("per_segment").items()) {
    report.per_segment[segment] = bundle_from_json(bj);
  }
  return report;
}

void write_report_json(const OpeReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_report_json: cannot open " + path);
  out << report_to_json(report).dump(2) << '\n';
}

OpeReport load_report_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_report_json: cannot open " + path);
  const json j = json::parse(in);
  if (j.at("type").get<std::string>() != "ope_report") {
    throw std::runtime_error("load_report_json: '" + path + "' is not an OPE report");
  }
  return report_from_json(j);
}

void write_report_csv(const OpeReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_report_csv: cannot open " + path);
  out << "segment,n";
  const MetricBundle probe;  // column order comes from the metric walk
  std::vector<std::string> names;
  for_each_metric(probe, [&](const char* name, const Metric*) { names.emplace_back(name); });
  for (const auto& name : names) out << ',' << name << ',' << name << "_lo," << name << "_hi";
  out << '\n';
  const auto emit = [&](const std::string& segment, const MetricBundle& b) {
    out << segment << ',' << b.n;
    for_each_metric(b, [&](const char*, const Metric* m) {
      if (m == nullptr) {
        out << ",,,";
      } else {
        out << ',' << format_double(m->value) << ',';
        if (m->ci) {
          out << format_double(m->ci->first) << ',' << format_double(m->ci->second);
        } else {
          out << ',';
        }
      }
    });
    out << '\n';
  };
  emit("__overall__", report.overall);
  for (const auto& [segment, bundle] : report.per_segment) emit(segment, bundle);
}

}  // namespace skillroute
