#include "skillroute/domain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "json.hpp"
#include "skillroute/rng.hpp"

namespace skillroute {

using nlohmann::json;

bool schema_compatible(const FeatureSchema& a, const FeatureSchema& b) {
  return a.version == b.version && a.numeric_dim == b.numeric_dim;
}

void validate_interaction(const LoggedInteraction& it, const FeatureSchema& schema) {
  const auto fail = [&](const std::string& why) {
    throw ValidationError("interaction '" + it.interaction_id + "': " + why);
  };
  if (it.interaction_id.empty()) fail("empty interaction_id");
  if (it.candidates.empty()) fail("candidate list is empty");
  const int t = static_cast<int>(it.candidates.size());
  if (it.chosen_action < 0 || it.chosen_action >= t) {
    fail("chosen_action " + std::to_string(it.chosen_action) + " outside [0, " +
         std::to_string(t) + ")");
  }
  if (!(it.logging_propensity > 0.0 && it.logging_propensity <= 1.0)) {
    fail("logging_propensity must be in (0, 1], got " + std::to_string(it.logging_propensity));
  }
  if (!(it.reward >= 0.0 && it.reward <= 1.0)) {
    fail("reward must be in [0, 1], got " + std::to_string(it.reward));
  }
  for (size_t i = 0; i < it.candidates.size(); ++i) {
    const auto& c = it.candidates[i];
    if (!(c.nlu_confidence >= 0.0 && c.nlu_confidence <= 1.0)) {
      fail("candidate " + std::to_string(i) + ": nlu_confidence outside [0, 1]");
    }
    if (static_cast<int>(c.numeric_context.size()) != schema.numeric_dim) {
      fail("candidate " + std::to_string(i) + ": numeric_context has " +
           std::to_string(c.numeric_context.size()) + " entries, schema declares " +
           std::to_string(schema.numeric_dim));
    }
    if (i > 0) {
      const auto& prev = it.candidates[i - 1];
      const bool ordered = prev.nlu_confidence > c.nlu_confidence ||
                           (prev.nlu_confidence == c.nlu_confidence &&
                            prev.intent_id <= c.intent_id);
      if (!ordered) {
        fail("candidates not sorted by descending nlu_confidence at position " +
             std::to_string(i));
      }
    }
  }
  if (it.segment_id != it.candidates[0].intent_id) {
    fail("segment_id '" + it.segment_id + "' does not equal top candidate intent '" +
         it.candidates[0].intent_id + "'");
  }
}

void validate_dataset(const Dataset& ds) {
  if (ds.schema.numeric_dim < 0) throw ValidationError("schema: negative numeric_dim");
  std::unordered_set<std::string> ids;
  ids.reserve(ds.interactions.size());
  for (const auto& it : ds.interactions) {
    validate_interaction(it, ds.schema);
    if (!ids.insert(it.interaction_id).second) {
      throw ValidationError("duplicate interaction_id '" + it.interaction_id + "'");
    }
  }
}

namespace {

json schema_to_json(const Dataset& ds) {
  return json{
      {"version", ds.schema.version},
      {"numeric_context_dim", ds.schema.numeric_dim},
      {"vocab_sizes",
       {{"intent", ds.schema.intent_vocab.size()},
        {"skill", ds.schema.skill_vocab.size()},
        {"context", ds.schema.context_vocab.size()}}},
      {"intent_vocab", ds.schema.intent_vocab},
      {"skill_vocab", ds.schema.skill_vocab},
      {"context_vocab", ds.schema.context_vocab},
      {"provenance", ds.provenance},
  };
}

json interaction_to_json(const LoggedInteraction& it) {
  json candidates = json::array();
  for (const auto& c : it.candidates) {
    candidates.push_back(json{
        {"intent_id", c.intent_id},
        {"skill_id", c.skill_id},
        {"nlu_confidence", c.nlu_confidence},
        {"numeric_context", c.numeric_context},
        {"categorical_context", c.categorical_context},
    });
  }
  return json{
      {"interaction_id", it.interaction_id},
      {"segment_id", it.segment_id},
      {"candidates", std::move(candidates)},
      {"chosen_action", it.chosen_action},
      {"logging_propensity", it.logging_propensity},
      {"reward", it.reward},
  };
}

LoggedInteraction interaction_from_json(const json& j) {
  LoggedInteraction it;
  it.interaction_id = j.at("interaction_id").get<std::string>();
  it.segment_id = j.at("segment_id").get<std::string>();
  it.chosen_action = j.at("chosen_action").get<int>();
  it.logging_propensity = j.at("logging_propensity").get<double>();
  it.reward = j.at("reward").get<double>();
  for (const auto& cj : j.at("candidates")) {
    CandidateRecord c;
    c.intent_id = cj.at("intent_id").get<std::string>();
    c.skill_id = cj.at("skill_id").get<std::string>();
    c.nlu_confidence = cj.at("nlu_confidence").get<double>();
    c.numeric_context = cj.at("numeric_context").get<std::vector<double>>();
    c.categorical_context = cj.at("categorical_context").get<std::vector<std::string>>();
    it.candidates.push_back(std::move(c));
  }
  return it;
}

}  // namespace

void write_jsonl(const Dataset& ds, const std::string& path) {
  validate_dataset(ds);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_jsonl: cannot open " + path);
  out << schema_to_json(ds).dump() << '\n';
  for (const auto& it : ds.interactions) {
    out << interaction_to_json(it).dump() << '\n';
  }
  if (!out) throw std::runtime_error("write_jsonl: write failed for " + path);
}

Dataset read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_jsonl: cannot open " + path);
  std::string line;
  int line_no = 0;
  Dataset ds;
  const auto parse_line = [&](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": malformed JSON: " + e.what());
    }
  };
  if (!std::getline(in, line)) {
    throw ValidationError(path + ": missing schema header line");
  }
  ++line_no;
  {
    const json header = parse_line(line);
    try {
      ds.schema.version = header.at("version").get<int>();
      ds.schema.numeric_dim = header.at("numeric_context_dim").get<int>();
      ds.schema.intent_vocab = header.at("intent_vocab").get<std::vector<std::string>>();
      ds.schema.skill_vocab = header.at("skill_vocab").get<std::vector<std::string>>();
      ds.schema.context_vocab = header.at("context_vocab").get<std::vector<std::string>>();
      ds.provenance = header.at("provenance").get<std::string>();
    } catch (const json::exception& e) {
      throw ValidationError(path + ":1: bad schema header: " + e.what());
    }
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse_line(line);
    LoggedInteraction it;
    try {
      it = interaction_from_json(j);
    } catch (const json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": bad interaction record: " + e.what());
    }
    try {
      validate_interaction(it, ds.schema);
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ds.interactions.push_back(std::move(it));
  }
  validate_dataset(ds);
  return ds;
}

SplitResult split(const Dataset& ds, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split: fraction must be in (0, 1)");
  }
  const size_t n = ds.interactions.size();
  if (n < 2) throw std::invalid_argument("split: dataset needs at least 2 interactions");

  // Group interaction indices by segment, keys sorted for determinism.
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < n; ++i) groups[ds.interactions[i].segment_id].push_back(i);

  // Target modeling count, clamped into the range the per-segment
  // constraints (both halves nonempty for segments with >= 2 rows) allow.
  size_t target = static_cast<size_t>(std::llround(static_cast<double>(n) * fraction));
  size_t min_total = 0, max_total = 0;
  for (const auto& [seg, idx] : groups) {
    if (idx.size() >= 2) {
      min_total += 1;
      max_total += idx.size() - 1;
    } else {
      max_total += 1;
    }
  }
  target = std::clamp(target, std::max<size_t>(min_total, 1), std::min(max_total, n - 1));

  // Largest-remainder apportionment of the target across segments.
  struct Alloc {
    const std::string* seg;
    size_t count;    // rows in segment
    size_t take;     // modeling allocation
    double remainder;
  };
  std::vector<Alloc> allocs;
  size_t base_sum = 0;
  for (const auto& [seg, idx] : groups) {
    const double quota = static_cast<double>(idx.size()) * fraction;
    size_t base = static_cast<size_t>(std::floor(quota));
    Alloc a{&seg, idx.size(), base, quota - std::floor(quota)};
    base_sum += base;
    allocs.push_back(a);
  }
  const auto lower = [](const Alloc& a) -> size_t { return a.count >= 2 ? 1 : 0; };
  const auto upper = [](const Alloc& a) -> size_t { return a.count >= 2 ? a.count - 1 : a.count; };
  if (base_sum < target) {
    std::vector<size_t> order(allocs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t l, size_t r) {
      if (allocs[l].remainder != allocs[r].remainder)
        return allocs[l].remainder > allocs[r].remainder;
      return *allocs[l].seg < *allocs[r].seg;
    });
    size_t deficit = target - base_sum;
    for (size_t pass = 0; deficit > 0; ++pass) {
      bool progressed = false;
      for (size_t i : order) {
        if (deficit == 0) break;
        if (allocs[i].take < upper(allocs[i])) {
          ++allocs[i].take;
          --deficit;
          progressed = true;
        }
      }
      if (!progressed) break;
    }
  }
  // Enforce per-segment bounds, then rebalance to the exact target.
  for (auto& a : allocs) a.take = std::clamp(a.take, lower(a), upper(a));
  size_t current = 0;
  for (const auto& a : allocs) current += a.take;
  while (current > target) {
    auto it = std::max_element(allocs.begin(), allocs.end(), [&](const Alloc& l, const Alloc& r) {
      const size_t ls = l.take - lower(l), rs = r.take - lower(r);
      if (ls != rs) return ls < rs;
      return *l.seg > *r.seg;
    });
    if (it->take <= lower(*it)) break;
    --it->take;
    --current;
  }
  while (current < target) {
    auto it = std::max_element(allocs.begin(), allocs.end(), [&](const Alloc& l, const Alloc& r) {
      const size_t ls = upper(l) - l.take, rs = upper(r) - r.take;
      if (ls != rs) return ls < rs;
      return *l.seg > *r.seg;
    });
    if (it->take >= upper(*it)) break;
    ++it->take;
    ++current;
  }

  // Per-segment deterministic shuffle; the rng stream is keyed on the
  // segment so results do not depend on segment enumeration order.
  std::vector<bool> to_modeling(n, false);
  for (const auto& a : allocs) {
    auto indices = groups[*a.seg];
    Rng rng(derive_seed(seed, "split", hash_name(*a.seg)));
    rng.shuffle(indices);
    for (size_t k = 0; k < a.take; ++k) to_modeling[indices[k]] = true;
  }

  SplitResult out;
  out.modeling.schema = ds.schema;
  out.modeling.provenance = ds.provenance;
  out.validation.schema = ds.schema;
  out.validation.provenance = ds.provenance;
  for (size_t i = 0; i < n; ++i) {
    (to_modeling[i] ? out.modeling : out.validation).interactions.push_back(ds.interactions[i]);
  }
  return out;
}

Dataset concat(const std::vector<const Dataset*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no datasets");
  Dataset out;
  out.schema = parts.front()->schema;
  std::set<std::string> intents, skills, contexts, provenances;
  size_t total = 0;
  for (const Dataset* p : parts) {
    if (!schema_compatible(out.schema, p->schema)) {
      throw ValidationError("concat: incompatible schemas (numeric dim or version differ)");
    }
    intents.insert(p->schema.intent_vocab.begin(), p->schema.intent_vocab.end());
    skills.insert(p->schema.skill_vocab.begin(), p->schema.skill_vocab.end());
    contexts.insert(p->schema.context_vocab.begin(), p->schema.context_vocab.end());
    if (!p->provenance.empty()) provenances.insert(p->provenance);
    total += p->interactions.size();
  }
  out.schema.intent_vocab.assign(intents.begin(), intents.end());
  out.schema.skill_vocab.assign(skills.begin(), skills.end());
  out.schema.context_vocab.assign(contexts.begin(), contexts.end());
  std::string prov;
  for (const auto& p : provenances) {
    if (!prov.empty()) prov += ",";
    prov += p;
  }
  out.provenance = prov;
  out.interactions.reserve(total);
  for (const Dataset* p : parts) {
    out.interactions.insert(out.interactions.end(), p->interactions.begin(),
                            p->interactions.end());
  }
  validate_dataset(out);
  return out;
}

}  // namespace skillroute
