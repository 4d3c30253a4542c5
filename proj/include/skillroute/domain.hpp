#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace skillroute {

// Dimensions and vocabularies a dataset (and any policy trained on it)
// conforms to. Vocab vectors are sorted and unique; tokens outside a vocab
// are legal in data and map to the out-of-vocabulary slot at featurization.
struct FeatureSchema {
  int version = 1;
  int numeric_dim = 0;
  std::vector<std::string> intent_vocab;
  std::vector<std::string> skill_vocab;
  std::vector<std::string> context_vocab;

  bool operator==(const FeatureSchema&) const = default;
};

// Two schemas are compatible when a policy built on one can score data held
// in the other. Vocabularies may differ (OOV absorbs unseen tokens); the
// numeric block must line up exactly.
bool schema_compatible(const FeatureSchema& a, const FeatureSchema& b);

// One routing candidate: an (NLU interpretation, skill) pair plus the
// contextual signals shared across the request.
struct CandidateRecord {
  std::string intent_id;
  std::string skill_id;
  double nlu_confidence = 0.0;
  std::vector<double> numeric_context;
  std::vector<std::string> categorical_context;

  bool operator==(const CandidateRecord&) const = default;
};

// One logged routing event. Candidates are ordered by descending
// nlu_confidence (ties by intent_id); segment_id always equals the top
// candidate's intent.
struct LoggedInteraction {
  std::string interaction_id;
  std::string segment_id;
  std::vector<CandidateRecord> candidates;
  int chosen_action = 0;
  double logging_propensity = 0.0;  // probability the logger gave the chosen action
  double reward = 0.0;              // in [0, 1]

  bool operator==(const LoggedInteraction&) const = default;
};

struct Dataset {
  FeatureSchema schema;
  std::string provenance;  // artifact id(s) of the policy that produced the logs
  std::vector<LoggedInteraction> interactions;

  size_t size() const { return interactions.size(); }
  bool operator==(const Dataset&) const = default;
};

// Thrown on any invariant violation; message names the offending field.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checks a single interaction against the schema (dimension, ranges,
// candidate ordering, segment consistency). Throws ValidationError.
void validate_interaction(const LoggedInteraction& it, const FeatureSchema& schema);

// Full-dataset validation, including interaction_id uniqueness.
void validate_dataset(const Dataset& ds);

// JSONL persistence. Line 1 is the schema header, then one interaction per
// line. Reals round-trip exactly; rewriting a read file is byte-identical.
void write_jsonl(const Dataset& ds, const std::string& path);
Dataset read_jsonl(const std::string& path);

struct SplitResult {
  Dataset modeling;
  Dataset validation;
};

// Deterministic split, stratified by segment_id: every segment with >= 2
// interactions lands in both halves; overall modeling size is
// round(n * fraction) whenever the stratification constraints allow it.
SplitResult split(const Dataset& ds, double fraction, uint64_t seed);

// Window concatenation for sliding training windows. Schemas must be
// compatible; vocabularies are unioned, provenance ids are merged.
Dataset concat(const std::vector<const Dataset*>& parts);

}  // namespace skillroute
