#include "prpm/log_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <unordered_map>

#include "prpm/csv.hpp"

namespace prpm {

namespace {

using json = nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string line_prefix(std::size_t line) { return "line " + std::to_string(line) + ": "; }

std::size_t require_column(const std::map<std::string, std::size_t>& header,
                           const std::string& name, const char* role) {
  if (name.empty()) usage_error(std::string("schema does not name the ") + role + " column");
  const auto it = header.find(name);
  if (it == header.end()) {
    usage_error(std::string(role) + " column '" + name + "' not found in CSV header");
  }
  return it->second;
}

std::optional<double> numeric_value(const AttributeMap& attrs, const std::string& name) {
  const auto it = attrs.find(name);
  if (it == attrs.end()) return std::nullopt;
  if (const auto* d = std::get_if<double>(&it->second)) return *d;
  if (const auto* b = std::get_if<bool>(&it->second)) return *b ? 1.0 : 0.0;
  return std::nullopt;
}

std::optional<std::string> categorical_value(const AttributeMap& attrs, const std::string& name) {
  const auto it = attrs.find(name);
  if (it == attrs.end()) return std::nullopt;
  if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
  if (const auto* d = std::get_if<double>(&it->second)) return format_number(*d);
  return std::get<bool>(it->second) ? std::string("true") : std::string("false");
}

std::string attribute_text(const AttributeValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  if (const auto* d = std::get_if<double>(&v)) return format_number(*d);
  return std::get<bool>(v) ? "true" : "false";
}

}  // namespace

// ---------------------------------------------------------------------------

EventLog parse_csv(std::istream& source, const CsvSchema& schema, ParseStats* stats) {
  CsvReader reader(source);
  std::vector<std::string> row;
  EventLog log;
  log.schema = {schema.numeric_attrs, schema.categorical_attrs, schema.case_numeric_attrs,
                schema.case_categorical_attrs};
  if (!reader.next(row)) {
    usage_error("CSV input has no header row");
  }
  std::map<std::string, std::size_t> header;
  for (std::size_t i = 0; i < row.size(); ++i) header.emplace(std::string(trim(row[i])), i);
  const std::size_t n_cols = row.size();

  const auto case_col = require_column(header, schema.case_id_column, "case id");
  const auto act_col = require_column(header, schema.activity_column, "activity");
  const auto ts_col = require_column(header, schema.timestamp_column, "timestamp");
  std::optional<std::size_t> res_col;
  if (!schema.resource_column.empty()) {
    res_col = require_column(header, schema.resource_column, "resource");
  }
  const auto columns_of = [&](const std::vector<std::string>& names, const char* role) {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& n : names) out.emplace_back(n, require_column(header, n, role));
    return out;
  };
  const auto numeric = columns_of(schema.numeric_attrs, "numeric attribute");
  const auto categorical = columns_of(schema.categorical_attrs, "categorical attribute");
  const auto case_cat = columns_of(schema.case_categorical_attrs, "case attribute");
  const auto case_num = columns_of(schema.case_numeric_attrs, "case numeric attribute");

  ParseStats local;
  std::unordered_map<std::string, std::size_t> trace_of;
  while (reader.next(row)) {
    const auto line = reader.line();
    ++local.rows;
    if (row.size() != n_cols) {
      data_error(line_prefix(line) + "expected " + std::to_string(n_cols) + " fields, got " +
                 std::to_string(row.size()));
    }
    Event ev;
    ev.case_id = std::string(trim(row[case_col]));
    ev.activity = std::string(trim(row[act_col]));
    if (ev.case_id.empty()) data_error(line_prefix(line) + "empty case id");
    if (ev.activity.empty()) data_error(line_prefix(line) + "empty activity");
    try {
      ev.timestamp = parse_timestamp(row[ts_col], schema.timestamp_format);
    } catch (const Error& e) {
      if (schema.drop_unparseable_timestamps) {
        ++local.dropped_bad_timestamps;
        continue;
      }
      data_error(line_prefix(line) + e.what());
    }
    if (res_col) {
      const auto r = trim(row[*res_col]);
      if (!r.empty()) ev.resource = std::string(r);
    }
    for (const auto& [name, col] : numeric) {
      const auto cell = trim(row[col]);
      if (cell.empty()) continue;
      try {
        ev.attributes[name] = parse_number(cell);
      } catch (const Error& e) {
        data_error(line_prefix(line) + "attribute '" + name + "': " + e.what());
      }
    }
    for (const auto& [name, col] : categorical) {
      const auto cell = trim(row[col]);
      if (!cell.empty()) ev.attributes[name] = std::string(cell);
    }

    auto [it, inserted] = trace_of.emplace(ev.case_id, log.traces.size());
    if (inserted) {
      Trace t;
      t.case_id = ev.case_id;
      log.traces.push_back(std::move(t));
    }
    Trace& trace = log.traces[it->second];
    for (const auto& [name, col] : case_cat) {
      const auto cell = trim(row[col]);
      if (!cell.empty() && !trace.case_attributes.contains(name)) {
        trace.case_attributes[name] = std::string(cell);
      }
    }
    for (const auto& [name, col] : case_num) {
      const auto cell = trim(row[col]);
      if (cell.empty() || trace.case_attributes.contains(name)) continue;
      try {
        trace.case_attributes[name] = parse_number(cell);
      } catch (const Error& e) {
        data_error(line_prefix(line) + "case attribute '" + name + "': " + e.what());
      }
    }
    trace.events.push_back(std::move(ev));
  }
  for (auto& t : log.traces) {
    std::stable_sort(t.events.begin(), t.events.end(),
                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
  }
  // Rows with unparseable timestamps may have been the only rows of a case.
  std::erase_if(log.traces, [](const Trace& t) { return t.events.empty(); });
  if (stats) *stats = local;
  return log;
}

void write_log_csv(std::ostream& out, const EventLog& log, const CsvSchema& schema) {
  std::vector<std::string> header = {schema.case_id_column, schema.activity_column,
                                     schema.timestamp_column};
  const bool with_resource = !schema.resource_column.empty();
  if (with_resource) header.push_back(schema.resource_column);
  for (const auto* group : {&schema.numeric_attrs, &schema.categorical_attrs,
                            &schema.case_categorical_attrs, &schema.case_numeric_attrs}) {
    header.insert(header.end(), group->begin(), group->end());
  }
  write_csv_row(out, header);

  const auto lookup = [](const AttributeMap& attrs, const std::string& name) {
    const auto it = attrs.find(name);
    return it == attrs.end() ? std::string() : attribute_text(it->second);
  };
  std::vector<std::string> row;
  for (const auto& trace : log.traces) {
    for (const auto& ev : trace.events) {
      row = {ev.case_id, ev.activity, format_timestamp(ev.timestamp, schema.timestamp_format)};
      if (with_resource) row.push_back(ev.resource.value_or(""));
      for (const auto& n : schema.numeric_attrs) row.push_back(lookup(ev.attributes, n));
      for (const auto& n : schema.categorical_attrs) row.push_back(lookup(ev.attributes, n));
      for (const auto& n : schema.case_categorical_attrs) {
        row.push_back(lookup(trace.case_attributes, n));
      }
      for (const auto& n : schema.case_numeric_attrs) {
        row.push_back(lookup(trace.case_attributes, n));
      }
      write_csv_row(out, row);
    }
  }
}

// ---------------------------------------------------------------------------

CleanedLog clean_log(const EventLog& log, const CleaningRules& rules) {
  CleanedLog result;
  result.log.schema = log.schema;
  for (const auto& trace : log.traces) {
    Trace kept;
    kept.case_id = trace.case_id;
    kept.case_attributes = trace.case_attributes;
    for (const auto& ev : trace.events) {
      const bool too_early = rules.min_valid && ev.timestamp < *rules.min_valid;
      const bool too_late = rules.max_valid && ev.timestamp > *rules.max_valid;
      if (too_early || too_late) {
        ++result.report.dropped_outlier_events;
      } else {
        kept.events.push_back(ev);
      }
    }
    if (kept.events.empty()) {
      ++result.report.dropped_empty_traces;
      continue;
    }
    if (!rules.terminal_activities.empty() &&
        !rules.terminal_activities.contains(kept.events.back().activity)) {
      ++result.report.dropped_incomplete_traces;
      continue;
    }
    result.log.traces.push_back(std::move(kept));
  }
  return result;
}

std::map<std::string, Outcome> label_outcomes(const EventLog& log, const OutcomeRules& rules) {
  std::map<std::string, Outcome> labels;
  for (const auto& trace : log.traces) {
    if (trace.events.empty()) data_error("case " + trace.case_id + " has no events");
    const auto& last = trace.events.back().activity;
    const auto it = rules.find(last);
    if (it == rules.end()) data_error("unmapped terminal activity " + last);
    labels[trace.case_id] = it->second;
  }
  return labels;
}

std::map<std::string, bool> derive_treatment(const EventLog& log, const TreatmentRule& rule) {
  std::map<std::string, bool> treated;
  for (const auto& trace : log.traces) {
    const auto n = std::count_if(trace.events.begin(), trace.events.end(),
                                 [&](const Event& e) { return e.activity == rule.activity; });
    treated[trace.case_id] = n >= rule.min_count;
  }
  return treated;
}

std::size_t prefix_length_cap(const EventLog& log, double percentile) {
  if (log.traces.empty()) data_error("prefix length cap of an empty log");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    usage_error("percentile must lie in (0, 100], got " + format_number(percentile));
  }
  std::vector<std::size_t> lengths;
  lengths.reserve(log.traces.size());
  for (const auto& t : log.traces) lengths.push_back(t.length());
  std::sort(lengths.begin(), lengths.end());
  const double n = static_cast<double>(lengths.size());
  auto k = static_cast<std::size_t>(std::ceil(percentile * n / 100.0 - 1e-9));
  k = std::clamp<std::size_t>(k, 1, lengths.size());
  return lengths[k - 1];
}

std::vector<PrefixView> extract_prefixes(const EventLog& log, std::size_t min_len,
                                         std::size_t max_len, bool exclude_last) {
  if (min_len < 1 || min_len > max_len) {
    usage_error("prefix bounds must satisfy 1 <= min_len <= max_len");
  }
  std::vector<PrefixView> out;
  for (const auto& trace : log.traces) {
    std::size_t upper = std::min(trace.length(), max_len);
    if (exclude_last && upper == trace.length()) --upper;
    for (std::size_t k = min_len; k <= upper; ++k) out.push_back({&trace, k});
  }
  return out;
}

// ---------------------------------------------------------------------------

InterCaseIndex::InterCaseIndex(const EventLog& log) {
  std::map<std::string, std::size_t> resource_ids;
  for (const auto& trace : log.traces) {
    if (trace.events.empty()) continue;
    const std::size_t ci = cases_.size();
    cases_.push_back({trace.start(), trace.end()});
    case_index_.emplace(trace.case_id, ci);
    sorted_starts_.push_back(trace.start());
    sorted_ends_.push_back(trace.end());
    for (const auto& ev : trace.events) {
      if (!ev.resource) continue;
      auto [it, inserted] = resource_ids.emplace(*ev.resource, timelines_.size());
      if (inserted) timelines_.emplace_back();
      timelines_[it->second].emplace_back(ev.timestamp, ci);
    }
  }
  std::sort(sorted_starts_.begin(), sorted_starts_.end());
  std::sort(sorted_ends_.begin(), sorted_ends_.end());
  for (auto& tl : timelines_) std::stable_sort(tl.begin(), tl.end(), [](auto& a, auto& b) {
    return a.first < b.first;
  });
}

bool InterCaseIndex::active(std::size_t case_index, Instant t) const {
  const auto& c = cases_[case_index];
  return c.start <= t && t < c.end;
}

int InterCaseIndex::active_cases_at(Instant t, const std::string& own_case) const {
  const auto started = std::upper_bound(sorted_starts_.begin(), sorted_starts_.end(), t) -
                       sorted_starts_.begin();
  const auto ended = std::upper_bound(sorted_ends_.begin(), sorted_ends_.end(), t) -
                     sorted_ends_.begin();
  auto count = static_cast<int>(started - ended);
  const auto own = case_index_.find(own_case);
  if (own != case_index_.end() && active(own->second, t)) --count;
  return count;
}

int InterCaseIndex::idle_resources_at(Instant t) const {
  int occupied = 0;
  for (const auto& tl : timelines_) {
    // Latest event strictly before t.
    const auto it = std::lower_bound(tl.begin(), tl.end(), t,
                                     [](const auto& e, Instant v) { return e.first < v; });
    if (it == tl.begin()) continue;
    if (active(std::prev(it)->second, t)) ++occupied;
  }
  return static_cast<int>(timelines_.size()) - occupied;
}

Enrichment enrich(const PrefixView& prefix, const InterCaseIndex& index) {
  const Instant t = prefix.end_time();
  return {day_of_week(t), hour_of_day(t), index.active_cases_at(t, prefix.case_id()),
          index.idle_resources_at(t)};
}

// ---------------------------------------------------------------------------

EncoderState EncoderState::fit(std::span<const EncoderInput> train, const LogSchema& schema) {
  if (train.empty()) data_error("cannot fit the encoder on an empty training set");
  EncoderState s;
  s.schema_ = schema;

  std::set<std::string> activities;
  std::vector<std::set<std::string>> ev_vocab(schema.event_categorical.size());
  std::vector<std::set<std::string>> case_vocab(schema.case_categorical.size());
  for (const auto& in : train) {
    for (const auto& ev : in.events) {
      activities.insert(ev.activity);
      for (std::size_t a = 0; a < schema.event_categorical.size(); ++a) {
        if (auto v = categorical_value(ev.attributes, schema.event_categorical[a])) {
          ev_vocab[a].insert(*v);
        }
      }
    }
    if (in.case_attributes) {
      for (std::size_t a = 0; a < schema.case_categorical.size(); ++a) {
        if (auto v = categorical_value(*in.case_attributes, schema.case_categorical[a])) {
          case_vocab[a].insert(*v);
        }
      }
    }
  }
  s.activities_.assign(activities.begin(), activities.end());
  for (std::size_t a = 0; a < schema.event_categorical.size(); ++a) {
    s.event_categorical_.push_back(
        {schema.event_categorical[a], {ev_vocab[a].begin(), ev_vocab[a].end()}, 0});
  }
  for (const auto& n : schema.event_numeric) s.event_numeric_.push_back({n, 0});
  for (std::size_t a = 0; a < schema.case_categorical.size(); ++a) {
    s.case_categorical_.push_back(
        {schema.case_categorical[a], {case_vocab[a].begin(), case_vocab[a].end()}, 0});
  }
  for (const auto& n : schema.case_numeric) s.case_numeric_.push_back({n, 0});
  s.layout();

  // Imputation values: training means of each column over non-missing entries.
  std::vector<double> sum(s.dimension(), 0.0);
  std::vector<std::size_t> count(s.dimension(), 0);
  for (const auto& in : train) {
    const auto raw = s.encode_raw(in);
    for (std::size_t j = 0; j < raw.size(); ++j) {
      if (std::isnan(raw[j])) continue;
      sum[j] += raw[j];
      ++count[j];
    }
  }
  s.impute_means_.resize(s.dimension());
  for (std::size_t j = 0; j < sum.size(); ++j) {
    s.impute_means_[j] = count[j] ? sum[j] / static_cast<double>(count[j]) : 0.0;
  }
  s.fitted_ = true;
  return s;
}

void EncoderState::layout() {
  names_.clear();
  for (const auto& a : activities_) names_.push_back("activity=" + a);
  names_.push_back(std::string("activity=") + kOther);
  for (auto& block : event_categorical_) {
    block.offset = names_.size();
    for (const auto& v : block.vocabulary) names_.push_back(block.attr + "=" + v);
    names_.push_back(block.attr + "=" + kOther);
  }
  for (auto& block : event_numeric_) {
    block.offset = names_.size();
    for (const char* stat : {"mean", "min", "max", "sum", "std", "missing"}) {
      names_.push_back(block.attr + "." + stat);
    }
  }
  for (auto& block : case_categorical_) {
    block.offset = names_.size();
    for (const auto& v : block.vocabulary) names_.push_back("case." + block.attr + "=" + v);
    names_.push_back("case." + block.attr + "=" + kOther);
  }
  for (auto& block : case_numeric_) {
    block.offset = names_.size();
    names_.push_back("case." + block.attr);
    names_.push_back("case." + block.attr + ".missing");
  }
  enrichment_offset_ = names_.size();
  for (const char* n : {"day_of_week", "hour_of_day", "active_cases", "idle_resources"}) {
    names_.push_back(n);
  }
  index_.clear();
  for (std::size_t i = 0; i < names_.size(); ++i) index_.emplace(names_[i], i);
  if (index_.size() != names_.size()) data_error("encoder feature names collide");
}

std::size_t EncoderState::feature_index(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) usage_error("unknown feature '" + name + "'");
  return it->second;
}

std::vector<double> EncoderState::encode_raw(const EncoderInput& in) const {
  std::vector<double> f(names_.size(), 0.0);
  const auto bump = [&](const std::vector<std::string>& vocab, std::size_t offset,
                        const std::string& value) {
    const auto it = std::lower_bound(vocab.begin(), vocab.end(), value);
    const auto pos = (it != vocab.end() && *it == value)
                         ? static_cast<std::size_t>(it - vocab.begin())
                         : vocab.size();
    f[offset + pos] += 1.0;
  };

  for (const auto& ev : in.events) {
    bump(activities_, 0, ev.activity);
    for (const auto& block : event_categorical_) {
      if (auto v = categorical_value(ev.attributes, block.attr)) {
        bump(block.vocabulary, block.offset, *v);
      }
    }
  }
  std::vector<double> values;
  for (const auto& block : event_numeric_) {
    values.clear();
    for (const auto& ev : in.events) {
      if (auto v = numeric_value(ev.attributes, block.attr)) values.push_back(*v);
    }
    double* out = f.data() + block.offset;
    if (values.empty()) {
      std::fill(out, out + 5, kNaN);
      out[5] = 1.0;
      continue;
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    out[0] = mean;
    out[1] = *std::min_element(values.begin(), values.end());
    out[2] = *std::max_element(values.begin(), values.end());
    out[3] = sum;
    out[4] = std::sqrt(ss / static_cast<double>(values.size()));
    out[5] = 0.0;
  }
  for (const auto& block : case_categorical_) {
    if (!in.case_attributes) continue;
    if (auto v = categorical_value(*in.case_attributes, block.attr)) {
      bump(block.vocabulary, block.offset, *v);
    }
  }
  for (const auto& block : case_numeric_) {
    std::optional<double> v;
    if (in.case_attributes) v = numeric_value(*in.case_attributes, block.attr);
    f[block.offset] = v ? *v : kNaN;
    f[block.offset + 1] = v ? 0.0 : 1.0;
  }
  f[enrichment_offset_ + 0] = in.enrichment.day_of_week;
  f[enrichment_offset_ + 1] = in.enrichment.hour_of_day;
  f[enrichment_offset_ + 2] = in.enrichment.active_cases;
  f[enrichment_offset_ + 3] = in.enrichment.idle_resources;
  return f;
}

std::vector<double> EncoderState::encode(const EncoderInput& input) const {
  if (!fitted_) usage_error("encode called before the encoder was fitted");
  auto f = encode_raw(input);
  for (std::size_t j = 0; j < f.size(); ++j) {
    if (std::isnan(f[j])) f[j] = impute_means_[j];
  }
  return f;
}

std::string EncoderState::to_json() const {
  if (!fitted_) usage_error("cannot serialize an unfitted encoder");
  const auto blocks = [](const std::vector<CategoricalBlock>& bs) {
    json out = json::array();
    for (const auto& b : bs) out.push_back({{"attr", b.attr}, {"vocabulary", b.vocabulary}});
    return out;
  };
  json j;
  j["format"] = "prpm-encoder";
  j["version"] = 1;
  j["activities"] = activities_;
  j["event_categorical"] = blocks(event_categorical_);
  j["event_numeric"] = schema_.event_numeric;
  j["case_categorical"] = blocks(case_categorical_);
  j["case_numeric"] = schema_.case_numeric;
  j["impute_means"] = impute_means_;
  j["feature_names"] = names_;
  return j.dump(1);
}

EncoderState EncoderState::from_json(const std::string& text) {
  EncoderState s;
  try {
    const json j = json::parse(text);
    if (j.at("format") != "prpm-encoder" || j.at("version") != 1) {
      data_error("not a prpm encoder artifact (version 1)");
    }
    s.activities_ = j.at("activities").get<std::vector<std::string>>();
    for (const auto& b : j.at("event_categorical")) {
      s.event_categorical_.push_back(
          {b.at("attr"), b.at("vocabulary").get<std::vector<std::string>>(), 0});
      s.schema_.event_categorical.push_back(b.at("attr"));
    }
    s.schema_.event_numeric = j.at("event_numeric").get<std::vector<std::string>>();
    for (const auto& n : s.schema_.event_numeric) s.event_numeric_.push_back({n, 0});
    for (const auto& b : j.at("case_categorical")) {
      s.case_categorical_.push_back(
          {b.at("attr"), b.at("vocabulary").get<std::vector<std::string>>(), 0});
      s.schema_.case_categorical.push_back(b.at("attr"));
    }
    s.schema_.case_numeric = j.at("case_numeric").get<std::vector<std::string>>();
    for (const auto& n : s.schema_.case_numeric) s.case_numeric_.push_back({n, 0});
    s.layout();
    s.impute_means_ = j.at("impute_means").get<std::vector<double>>();
    if (s.impute_means_.size() != s.names_.size() ||
        j.at("feature_names").get<std::vector<std::string>>() != s.names_) {
      data_error("encoder artifact is inconsistent with its feature layout");
    }
  } catch (const json::exception& e) {
    data_error(std::string("malformed encoder artifact: ") + e.what());
  }
  s.fitted_ = true;
  return s;
}

// ---------------------------------------------------------------------------

std::map<std::string, Fold> assign_folds(std::vector<CaseStart> cases, const SplitRatios& ratios) {
  if (std::abs(ratios.train + ratios.cal + ratios.test - 1.0) > 1e-9 || ratios.train < 0 ||
      ratios.cal < 0 || ratios.test < 0) {
    usage_error("split ratios must be non-negative and sum to 1");
  }
  if (cases.size() < 3) data_error("insufficient cases for a three-way split");
  std::sort(cases.begin(), cases.end(), [](const CaseStart& a, const CaseStart& b) {
    return a.start != b.start ? a.start < b.start : a.case_id < b.case_id;
  });
  const double n = static_cast<double>(cases.size());
  const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * n + 1e-9));
  const auto n_cal = static_cast<std::size_t>(std::floor(ratios.cal * n + 1e-9));
  std::map<std::string, Fold> folds;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const Fold f = i < n_train ? Fold::Train : (i < n_train + n_cal ? Fold::Cal : Fold::Test);
    if (!folds.emplace(cases[i].case_id, f).second) {
      data_error("duplicate case id " + cases[i].case_id);
    }
  }
  return folds;
}

DatasetSplits temporal_split(std::vector<PrefixSample> samples, const SplitRatios& ratios) {
  std::map<std::string, Instant> starts;
  for (const auto& s : samples) {
    auto [it, inserted] = starts.emplace(s.case_id, s.case_start_time);
    if (!inserted && it->second != s.case_start_time) {
      data_error("case " + s.case_id + " has inconsistent start times across prefixes");
    }
  }
  std::vector<CaseStart> cases;
  for (const auto& [id, start] : starts) cases.push_back({id, start});
  const auto folds = assign_folds(cases, ratios);

  DatasetSplits out;
  for (const auto& [id, fold] : folds) {
    (fold == Fold::Train ? out.n_train : fold == Fold::Cal ? out.n_cal : out.n_test) += 1;
  }
  for (auto& s : samples) {
    switch (folds.at(s.case_id)) {
      case Fold::Train: out.train.push_back(std::move(s)); break;
      case Fold::Cal: out.cal.push_back(std::move(s)); break;
      case Fold::Test: out.test.push_back(std::move(s)); break;
    }
  }
  return out;
}

void write_dataset_csv(std::ostream& out, std::span<const PrefixSample> samples,
                       std::size_t dimension) {
  std::vector<std::string> row = {"case_id", "prefix_len", "T", "Y"};
  for (std::size_t j = 0; j < dimension; ++j) row.push_back("f_" + std::to_string(j));
  row.push_back("prefix_end_ms");
  row.push_back("case_start_ms");
  write_csv_row(out, row);
  for (const auto& s : samples) {
    if (s.features.size() != dimension) data_error("sample dimension mismatch in export");
    row = {s.case_id, std::to_string(s.prefix_length), s.treatment ? "1" : "0",
           s.outcome == Outcome::Undesired ? "1" : "0"};
    for (double v : s.features) row.push_back(format_number(v));
    row.push_back(std::to_string(to_epoch_ms(s.prefix_end_time)));
    row.push_back(std::to_string(to_epoch_ms(s.case_start_time)));
    write_csv_row(out, row);
  }
}

std::vector<PrefixSample> read_dataset_csv(std::istream& in) {
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) data_error("dataset CSV has no header");
  if (row.size() < 6 || row[0] != "case_id" || row[1] != "prefix_len" || row[2] != "T" ||
      row[3] != "Y" || row[row.size() - 2] != "prefix_end_ms" ||
      row[row.size() - 1] != "case_start_ms") {
    data_error("dataset CSV header does not match the encoded dataset layout");
  }
  const std::size_t n_cols = row.size();
  const std::size_t dim = n_cols - 6;
  std::vector<PrefixSample> out;
  while (reader.next(row)) {
    if (row.size() != n_cols) {
      data_error(line_prefix(reader.line()) + "expected " + std::to_string(n_cols) + " fields");
    }
    PrefixSample s;
    s.case_id = row[0];
    s.prefix_length = static_cast<std::size_t>(parse_integer(row[1]));
    s.treatment = parse_bool(row[2]);
    s.outcome = parse_outcome(row[3]);
    s.features.reserve(dim);
    for (std::size_t j = 0; j < dim; ++j) s.features.push_back(parse_number(row[4 + j]));
    s.prefix_end_time = from_epoch_ms(parse_integer(row[4 + dim]));
    s.case_start_time = from_epoch_ms(parse_integer(row[5 + dim]));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

PreparedData prepare_dataset(const EventLog& raw, const PrepareOptions& options) {
  if (options.outcome_rules.empty()) usage_error("no outcome rules configured");
  CleaningRules rules = options.cleaning;
  if (rules.terminal_activities.empty()) {
    for (const auto& [activity, label] : options.outcome_rules) {
      rules.terminal_activities.insert(activity);
    }
  }
  PreparedData out;
  auto cleaned = clean_log(raw, rules);
  out.cleaning = cleaned.report;
  const EventLog& log = cleaned.log;
  out.n_traces = log.traces.size();

  const auto labels = label_outcomes(log, options.outcome_rules);
  const auto treated = derive_treatment(log, options.treatment);
  out.max_prefix = options.max_prefix ? options.max_prefix
                                      : prefix_length_cap(log, options.prefix_percentile);
  if (out.max_prefix < options.min_prefix) out.max_prefix = options.min_prefix;
  const auto prefixes =
      extract_prefixes(log, options.min_prefix, out.max_prefix, options.exclude_terminal_event);

  std::vector<CaseStart> cases;
  std::set<std::string> seen;
  for (const auto& p : prefixes) {
    if (seen.insert(p.case_id()).second) cases.push_back({p.case_id(), p.trace->start()});
  }
  const auto folds = assign_folds(cases, options.ratios);

  const InterCaseIndex index(log);
  std::vector<EncoderInput> inputs;
  inputs.reserve(prefixes.size());
  for (const auto& p : prefixes) {
    inputs.push_back({p.events(), &p.trace->case_attributes, enrich(p, index)});
  }
  std::vector<EncoderInput> train_inputs;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    if (folds.at(prefixes[i].case_id()) == Fold::Train) train_inputs.push_back(inputs[i]);
  }
  out.encoder = EncoderState::fit(train_inputs, log.schema);

  std::vector<PrefixSample> samples;
  samples.reserve(prefixes.size());
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const auto& p = prefixes[i];
    PrefixSample s;
    s.case_id = p.case_id();
    s.prefix_length = p.length;
    s.features = out.encoder.encode(inputs[i]);
    s.treatment = treated.at(s.case_id);
    s.outcome = labels.at(s.case_id);
    s.prefix_end_time = p.end_time();
    s.case_start_time = p.trace->start();
    samples.push_back(std::move(s));
  }
  out.splits = temporal_split(std::move(samples), options.ratios);
  return out;
}

}  // namespace prpm
