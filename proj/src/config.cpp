#include "prpm/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace prpm {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"log", "", "event log CSV (prepare)"},
      {"out_dir", "out", "directory for artifacts and reports"},
      {"case_col", "case_id", "case identifier column"},
      {"activity_col", "activity", "activity column"},
      {"timestamp_col", "timestamp", "timestamp column"},
      {"resource_col", "", "resource column; empty for none"},
      {"timestamp_format", "%Y-%m-%d %H:%M:%S", "strftime-style timestamp format"},
      {"numeric_attrs", "", "event-level numeric attribute columns"},
      {"categorical_attrs", "", "event-level categorical attribute columns"},
      {"case_attrs", "", "case-level categorical attribute columns"},
      {"case_numeric_attrs", "", "case-level numeric attribute columns"},
      {"drop_bad_timestamps", "false", "drop rows with unparseable timestamps"},
      {"terminal_activities", "", "activities that complete a trace; empty: outcome rule keys"},
      {"min_valid_time", "", "events before this timestamp are dropped"},
      {"max_valid_time", "", "events after this timestamp are dropped"},
      {"outcome_rules", "Approved:dout,Canceled:uout", "last activity to outcome"},
      {"treatment_activity", "Create_Offer", "activity marking the intervention"},
      {"treatment_min_count", "1", "occurrences needed for T = 1"},
      {"prefix_min", "1", "shortest prefix length"},
      {"prefix_max", "0", "longest prefix length; 0: use prefix_percentile"},
      {"prefix_percentile", "90", "trace-length percentile capping prefix length"},
      {"prefix_exclude_last", "true", "never include the terminal event in a prefix"},
      {"split", "0.6,0.2,0.2", "train,cal,test case fractions by start time"},
      {"n_trees", "100", "boosting rounds"},
      {"max_depth", "4", "tree depth"},
      {"min_leaf", "20", "minimum samples per leaf"},
      {"learning_rate", "0.1", "shrinkage"},
      {"l2", "1", "leaf-value regularisation"},
      {"subsample", "1", "row fraction per tree"},
      {"ensemble_size", "5", "bagged members for the uncertainty baseline; 0 skips"},
      {"method", "naive", "conformal method: naive, balanced, adaptive"},
      {"alpha", "0.2", "significance level"},
      {"alphas", "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "sweep significance levels"},
      {"tie_break", "uout_first", "outcome order on equal probabilities"},
      {"policy", "conformal-cate:naive", "replay policy"},
      {"policies", "predictive,predictive-uncertainty,predictive-cate,conformal:naive,conformal-cate:naive",
       "sweep policies"},
      {"c_uout", "20", "value of preventing an undesired outcome"},
      {"c_in", "1", "cost of one intervention"},
      {"tau", "0.5", "p_uout threshold"},
      {"u_max", "0.75", "total-uncertainty ceiling"},
      {"loss_mode", "full", "full: c_in + cate*c_uout; cost_only: c_in"},
      {"capacity", "1", "intervention resources"},
      {"capacities", "1,5,10", "sweep resource counts"},
      {"pool_mode", "fixed_budget", "fixed_budget or renewable"},
      {"block_duration", "3600", "seconds a renewable resource stays busy"},
      {"seed", "42", "random seed"},
      {"jobs", "1", "parallel sweep workers"},
      {"scores", "", "external P(uout) CSV replacing the trained model"},
      {"estimates", "", "precomputed per-prefix estimates for replay"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) missing_artifact("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  load_text(buf.str());
}

void RunConfig::load_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    set_assignment(std::string(t));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) usage_error("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) usage_error("expected key=value, got '" + assignment + "'");
  set(std::string(trim(std::string_view(assignment).substr(0, eq))),
      std::string(trim(std::string_view(assignment).substr(eq + 1))));
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) usage_error("unknown config key '" + key + "'");
  return it->second;
}

namespace {

template <typename F>
auto as_usage(const std::string& key, const std::string& value, F&& parse) {
  try {
    return parse(value);
  } catch (const Error&) {
    usage_error("invalid value '" + value + "' for " + key);
  }
}

}  // namespace

double RunConfig::number(const std::string& key) const {
  return as_usage(key, get(key), [](const std::string& v) { return parse_number(v); });
}

long long RunConfig::integer(const std::string& key) const {
  return as_usage(key, get(key), [](const std::string& v) { return parse_integer(v); });
}

std::size_t RunConfig::count(const std::string& key) const {
  const auto v = integer(key);
  if (v < 0) usage_error(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

bool RunConfig::flag(const std::string& key) const {
  return as_usage(key, get(key), [](const std::string& v) { return parse_bool(v); });
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& part : split(get(key), ',')) {
    const auto t = trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::vector<double> RunConfig::numbers(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : list(key)) {
    out.push_back(as_usage(key, item, [](const std::string& v) { return parse_number(v); }));
  }
  return out;
}

std::vector<std::string> RunConfig::resolved() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k + "=" + v);
  return out;
}

CsvSchema RunConfig::csv_schema() const {
  CsvSchema s;
  s.case_id_column = get("case_col");
  s.activity_column = get("activity_col");
  s.timestamp_column = get("timestamp_col");
  s.resource_column = get("resource_col");
  s.timestamp_format = get("timestamp_format");
  s.numeric_attrs = list("numeric_attrs");
  s.categorical_attrs = list("categorical_attrs");
  s.case_categorical_attrs = list("case_attrs");
  s.case_numeric_attrs = list("case_numeric_attrs");
  s.drop_unparseable_timestamps = flag("drop_bad_timestamps");
  return s;
}

PrepareOptions RunConfig::prepare_options() const {
  PrepareOptions o;
  for (const auto& rule : list("outcome_rules")) {
    const auto colon = rule.rfind(':');
    if (colon == std::string::npos) usage_error("outcome rule '" + rule + "' lacks ':'");
    const auto outcome = as_usage("outcome_rules", rule.substr(colon + 1),
                                  [](const std::string& v) { return parse_outcome(v); });
    o.outcome_rules[std::string(trim(std::string_view(rule).substr(0, colon)))] = outcome;
  }
  if (o.outcome_rules.empty()) usage_error("outcome_rules must not be empty");
  for (const auto& a : list("terminal_activities")) o.cleaning.terminal_activities.insert(a);
  const auto bound = [&](const char* key) -> std::optional<Instant> {
    const auto& v = get(key);
    if (v.empty()) return std::nullopt;
    return as_usage(key, v, [&](const std::string& t) {
      return parse_timestamp(t, get("timestamp_format"));
    });
  };
  o.cleaning.min_valid = bound("min_valid_time");
  o.cleaning.max_valid = bound("max_valid_time");
  o.treatment.activity = get("treatment_activity");
  o.treatment.min_count = static_cast<int>(integer("treatment_min_count"));
  o.min_prefix = count("prefix_min");
  o.max_prefix = count("prefix_max");
  o.prefix_percentile = number("prefix_percentile");
  o.exclude_terminal_event = flag("prefix_exclude_last");
  const auto r = numbers("split");
  if (r.size() != 3) usage_error("split needs three fractions");
  o.ratios = {r[0], r[1], r[2]};
  if (o.min_prefix == 0) usage_error("prefix_min must be positive");
  if (!(o.prefix_percentile > 0.0 && o.prefix_percentile <= 100.0)) {
    usage_error("prefix_percentile must lie in (0, 100]");
  }
  return o;
}

GbdtParams RunConfig::gbdt_params() const {
  GbdtParams p;
  p.n_trees = static_cast<int>(integer("n_trees"));
  p.max_depth = static_cast<int>(integer("max_depth"));
  p.min_leaf = static_cast<int>(integer("min_leaf"));
  p.learning_rate = number("learning_rate");
  p.l2 = number("l2");
  p.subsample = number("subsample");
  if (p.n_trees < 0 || p.max_depth < 0 || p.min_leaf < 1 || !(p.learning_rate > 0.0) ||
      p.l2 < 0.0 || !(p.subsample > 0.0 && p.subsample <= 1.0)) {
    usage_error("invalid model hyperparameters");
  }
  return p;
}

CostParams RunConfig::cost_params() const {
  return {number("c_uout"), number("c_in"), number("tau")};
}

ReplayOptions RunConfig::replay_options() const {
  ReplayOptions o;
  o.costs = cost_params();
  o.u_max = number("u_max");
  const auto& mode = get("loss_mode");
  if (mode == "full") o.loss_mode = LossMode::Full;
  else if (mode == "cost_only") o.loss_mode = LossMode::CostOnly;
  else usage_error("invalid loss_mode '" + mode + "'");
  return o;
}

PoolMode RunConfig::pool_mode() const { return parse_pool_mode(get("pool_mode")); }

Duration RunConfig::block_duration() const {
  const double s = number("block_duration");
  if (!(s > 0.0)) usage_error("block_duration must be positive");
  return Duration(static_cast<long long>(s * 1000.0));
}

std::uint64_t RunConfig::seed() const {
  return static_cast<std::uint64_t>(integer("seed"));
}

}  // namespace prpm
