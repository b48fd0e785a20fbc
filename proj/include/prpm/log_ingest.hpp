// Event log ingestion: CSV parsing, cleaning, labelling, prefix extraction,
// inter-case enrichment, aggregate encoding and the temporal train/cal/test split.
#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "prpm/core.hpp"

namespace prpm {

using AttributeValue = std::variant<std::string, double, bool>;
using AttributeMap = std::map<std::string, AttributeValue>;

struct Event {
  std::string case_id;
  std::string activity;
  Instant timestamp;
  std::optional<std::string> resource;
  AttributeMap attributes;
};

struct Trace {
  std::string case_id;
  std::vector<Event> events;  // sorted by timestamp, non-decreasing
  AttributeMap case_attributes;

  Instant start() const { return events.front().timestamp; }
  Instant end() const { return events.back().timestamp; }
  std::size_t length() const noexcept { return events.size(); }
};

/// Which attributes are numeric vs categorical, at event and case level.
struct LogSchema {
  std::vector<std::string> event_numeric;
  std::vector<std::string> event_categorical;
  std::vector<std::string> case_numeric;
  std::vector<std::string> case_categorical;
};

struct EventLog {
  std::vector<Trace> traces;
  LogSchema schema;
};

// ---------------------------------------------------------------------------
// Parsing

struct CsvSchema {
  std::string case_id_column = "case_id";
  std::string activity_column = "activity";
  std::string timestamp_column = "timestamp";
  std::string resource_column;  // empty: no resource column
  std::string timestamp_format = "%Y-%m-%d %H:%M:%S";
  std::vector<std::string> numeric_attrs;
  std::vector<std::string> categorical_attrs;
  std::vector<std::string> case_categorical_attrs;
  std::vector<std::string> case_numeric_attrs;
  /// Drop rows whose timestamp cannot be parsed instead of failing.
  bool drop_unparseable_timestamps = false;
};

struct ParseStats {
  std::size_t rows = 0;
  std::size_t dropped_bad_timestamps = 0;
};

/// One trace per distinct case id, in order of first appearance; events sorted
/// by timestamp (stable, so equal timestamps keep file order).
EventLog parse_csv(std::istream& source, const CsvSchema& schema, ParseStats* stats = nullptr);

/// Writes a log in the layout parse_csv reads: case attributes repeated per row.
void write_log_csv(std::ostream& out, const EventLog& log, const CsvSchema& schema);

// ---------------------------------------------------------------------------
// Cleaning and labelling

struct CleaningRules {
  /// A trace is complete iff its last activity is in this set. Empty: all complete.
  std::set<std::string> terminal_activities;
  std::optional<Instant> min_valid;
  std::optional<Instant> max_valid;
};

struct CleaningReport {
  std::size_t dropped_incomplete_traces = 0;
  std::size_t dropped_outlier_events = 0;
  std::size_t dropped_empty_traces = 0;
};

struct CleanedLog {
  EventLog log;
  CleaningReport report;
};

/// Removes out-of-bounds events first, then traces left empty, then incomplete traces.
CleanedLog clean_log(const EventLog& log, const CleaningRules& rules);

using OutcomeRules = std::map<std::string, Outcome>;

/// Label per case from its last activity. Unmapped last activities are an error.
std::map<std::string, Outcome> label_outcomes(const EventLog& log, const OutcomeRules& rules);

struct TreatmentRule {
  std::string activity = "Create_Offer";
  int min_count = 1;
};

/// T = activity occurs at least min_count times in the full trace.
std::map<std::string, bool> derive_treatment(const EventLog& log, const TreatmentRule& rule);

/// The ceil(p/100 * n)-th smallest trace length.
std::size_t prefix_length_cap(const EventLog& log, double percentile);

// ---------------------------------------------------------------------------
// Prefixes and enrichment

/// The first `length` events of a trace. Views into the owning EventLog.
struct PrefixView {
  const Trace* trace = nullptr;
  std::size_t length = 0;

  const std::string& case_id() const { return trace->case_id; }
  std::span<const Event> events() const { return {trace->events.data(), length}; }
  Instant end_time() const { return trace->events[length - 1].timestamp; }
};

/// One prefix per K in [min_len, min(L, max_len)] for every trace of length L.
/// With exclude_last, K additionally stays below L so the terminal event never
/// appears in a prefix.
std::vector<PrefixView> extract_prefixes(const EventLog& log, std::size_t min_len,
                                         std::size_t max_len, bool exclude_last = false);

struct Enrichment {
  int day_of_week = 0;  // Monday = 0
  int hour_of_day = 0;
  int active_cases = 0;    // other cases started and not yet ended
  int idle_resources = 0;  // resources whose latest earlier event is not in an active case
};

/// Precomputed case intervals and per-resource timelines for inter-case features.
class InterCaseIndex {
 public:
  explicit InterCaseIndex(const EventLog& log);

  /// Cases with start <= t < end, excluding `own_case`.
  int active_cases_at(Instant t, const std::string& own_case) const;
  int idle_resources_at(Instant t) const;
  std::size_t resource_count() const noexcept { return timelines_.size(); }

 private:
  struct Interval {
    Instant start;
    Instant end;
  };
  bool active(std::size_t case_index, Instant t) const;

  std::vector<Interval> cases_;
  std::unordered_map<std::string, std::size_t> case_index_;
  std::vector<Instant> sorted_starts_;
  std::vector<Instant> sorted_ends_;
  // Per resource: (timestamp, case index) sorted by timestamp.
  std::vector<std::vector<std::pair<Instant, std::size_t>>> timelines_;
};

Enrichment enrich(const PrefixView& prefix, const InterCaseIndex& index);

// ---------------------------------------------------------------------------
// Aggregate encoding

struct EncoderInput {
  std::span<const Event> events;
  const AttributeMap* case_attributes = nullptr;
  Enrichment enrichment;
};

/// Fitted aggregate encoder. Immutable after fit; encode is safe to call concurrently.
class EncoderState {
 public:
  EncoderState() = default;

  static EncoderState fit(std::span<const EncoderInput> train, const LogSchema& schema);

  std::vector<double> encode(const EncoderInput& input) const;

  bool fitted() const noexcept { return fitted_; }
  std::size_t dimension() const noexcept { return names_.size(); }
  const std::vector<std::string>& feature_names() const noexcept { return names_; }
  std::size_t feature_index(const std::string& name) const;

  std::string to_json() const;
  static EncoderState from_json(const std::string& text);

  static constexpr const char* kOther = "__other__";

 private:
  struct CategoricalBlock {
    std::string attr;
    std::vector<std::string> vocabulary;  // sorted; "other" column follows
    std::size_t offset = 0;
  };
  struct NumericBlock {
    std::string attr;
    std::size_t offset = 0;  // mean, min, max, sum, std, missing
  };

  std::vector<double> encode_raw(const EncoderInput& input) const;
  void layout();

  bool fitted_ = false;
  LogSchema schema_;
  std::vector<std::string> activities_;
  std::vector<CategoricalBlock> event_categorical_;
  std::vector<NumericBlock> event_numeric_;
  std::vector<CategoricalBlock> case_categorical_;
  std::vector<NumericBlock> case_numeric_;  // value, missing
  std::size_t enrichment_offset_ = 0;
  std::vector<double> impute_means_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Samples and splitting

using FeatureVector = std::vector<double>;

struct PrefixSample {
  std::string case_id;
  std::size_t prefix_length = 0;
  FeatureVector features;
  bool treatment = false;
  Outcome outcome = Outcome::Desired;
  Instant prefix_end_time;
  Instant case_start_time;
};

struct SplitRatios {
  double train = 0.6;
  double cal = 0.2;
  double test = 0.2;
};

enum class Fold : std::uint8_t { Train, Cal, Test };

struct CaseStart {
  std::string case_id;
  Instant start;
};

/// Orders cases by (start, case_id); floor(train*n) to train, floor(cal*n) to
/// cal, the remainder to test.
std::map<std::string, Fold> assign_folds(std::vector<CaseStart> cases, const SplitRatios& ratios);

struct DatasetSplits {
  std::vector<PrefixSample> train;
  std::vector<PrefixSample> cal;
  std::vector<PrefixSample> test;
  std::size_t n_train = 0;  // case counts per fold
  std::size_t n_cal = 0;
  std::size_t n_test = 0;
};

DatasetSplits temporal_split(std::vector<PrefixSample> samples, const SplitRatios& ratios = {});

/// Encoded dataset CSV: case_id, prefix_len, T, Y, f_0..f_{d-1}, prefix_end_ms, case_start_ms.
void write_dataset_csv(std::ostream& out, std::span<const PrefixSample> samples,
                       std::size_t dimension);
std::vector<PrefixSample> read_dataset_csv(std::istream& in);

// ---------------------------------------------------------------------------
// Whole preparation pipeline

struct PrepareOptions {
  CleaningRules cleaning;
  OutcomeRules outcome_rules;
  TreatmentRule treatment;
  std::size_t min_prefix = 1;
  std::size_t max_prefix = 0;  // 0: derive from percentile
  double prefix_percentile = 90.0;
  bool exclude_terminal_event = true;
  SplitRatios ratios;
};

struct PreparedData {
  DatasetSplits splits;
  EncoderState encoder;
  CleaningReport cleaning;
  std::size_t max_prefix = 0;
  std::size_t n_traces = 0;
};

PreparedData prepare_dataset(const EventLog& raw, const PrepareOptions& options);

}  // namespace prpm
