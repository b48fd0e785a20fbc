#include "prpm/replay.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <set>
#include <thread>
#include <unordered_map>

#include "prpm/csv.hpp"

namespace prpm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string_view method_suffix(std::string_view text, std::string_view prefix) {
  return text.substr(prefix.size());
}

bool stream_order(const ScoredPrefix& a, const ScoredPrefix& b) {
  if (a.est.estimate_time != b.est.estimate_time) return a.est.estimate_time < b.est.estimate_time;
  if (a.est.case_id != b.est.case_id) return a.est.case_id < b.est.case_id;
  return a.est.prefix_length < b.est.prefix_length;
}

/// Policy filter. Returns the gain the case would be credited with, or nullopt.
std::optional<double> qualifies(const PolicyKind& policy, const ScoredPrefix& item,
                                const ReplayOptions& opt) {
  const auto& e = item.est;
  const CostParams costs = effective_costs(e, opt.costs);
  if (!(e.p_uout > costs.tau)) return std::nullopt;
  using K = PolicyKind::Kind;
  switch (policy.kind) {
    case K::PurePredictive: break;
    case K::PredictiveUncertainty:
      if (!(item.total_uncertainty < opt.u_max)) return std::nullopt;
      break;
    case K::PredictiveCate:
      if (!(e.cate > 0.0)) return std::nullopt;
      break;
    case K::Conformal:
      if (!e.pset.is_only(Outcome::Undesired)) return std::nullopt;
      break;
    case K::ConformalCate: {
      const auto kept = filter_candidates(std::span<const CaseEstimates>(&e, 1), opt.costs);
      if (kept.empty()) return std::nullopt;
      return kept.front().gain;
    }
  }
  return compute_gain(e.cate, costs);
}

struct Pending {
  const ScoredPrefix* item;
  double gain;
};

bool pending_before(const PolicyKind& policy, const Pending& a, const Pending& b) {
  if (policy.ranks_by_gain()) {
    return ranks_before({a.item->est, a.gain}, {b.item->est, b.gain});
  }
  if (a.item->est.p_uout != b.item->est.p_uout) return a.item->est.p_uout > b.item->est.p_uout;
  return a.item->est.case_id < b.item->est.case_id;
}

std::string optional_number(const std::optional<double>& v) {
  return v ? format_number(*v) : std::string();
}

void write_provenance(std::ostream& out, const ProvenanceLines& lines) {
  for (const auto& l : lines) out << "# " << l << '\n';
}

const std::vector<std::string> kReportColumns = {
    "policy",         "method",       "alpha",      "capacity",         "pool_mode",
    "n_prefixes",     "n_cases",      "n_allocated", "n_correct",       "total_gain",
    "accuracy_per_resource", "auc",   "f_score",    "coverage_marginal", "coverage_dout",
    "coverage_uout",  "sets_empty",   "sets_dout",  "sets_uout",        "sets_both",
    "max_in_flight"};

std::vector<std::string> report_row(const ReplayReport& r) {
  const auto cov = [&](std::optional<Outcome> o) -> std::string {
    if (!r.coverage) return {};
    if (!o) return format_number(r.coverage->marginal);
    const auto it = r.coverage->per_outcome.find(*o);
    return it == r.coverage->per_outcome.end() ? std::string() : format_number(it->second);
  };
  const auto hist = [&](std::size_t SetHistogram::*field) {
    return r.histogram ? std::to_string((*r.histogram).*field) : std::string();
  };
  return {r.policy.to_string(),
          r.policy.is_conformal() ? std::string(to_string(r.policy.method)) : std::string(),
          optional_number(r.alpha),
          std::to_string(r.capacity),
          std::string(to_string(r.pool_mode)),
          std::to_string(r.n_prefixes),
          std::to_string(r.n_cases),
          std::to_string(r.n_allocated),
          std::to_string(r.n_correct),
          format_number(r.total_gain),
          format_number(r.accuracy_per_resource),
          format_number(r.auc),
          format_number(r.f_score),
          cov(std::nullopt),
          cov(Outcome::Desired),
          cov(Outcome::Undesired),
          hist(&SetHistogram::empty),
          hist(&SetHistogram::dout),
          hist(&SetHistogram::uout),
          hist(&SetHistogram::both),
          std::to_string(r.max_in_flight)};
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(PoolMode m) noexcept {
  return m == PoolMode::FixedBudget ? "fixed_budget" : "renewable";
}

PoolMode parse_pool_mode(std::string_view text) {
  const auto t = trim(text);
  if (t == "fixed_budget" || t == "fixed") return PoolMode::FixedBudget;
  if (t == "renewable") return PoolMode::Renewable;
  usage_error("unknown pool mode '" + std::string(t) + "'");
}

ResourcePool::ResourcePool(std::size_t capacity, PoolMode mode, Duration block)
    : capacity_(capacity), mode_(mode), block_(block) {
  if (mode == PoolMode::Renewable && block <= Duration::zero()) {
    usage_error("renewable pools need a positive block duration");
  }
}

std::size_t ResourcePool::in_flight(Instant now) const {
  return static_cast<std::size_t>(
      std::count_if(busy_until_.begin(), busy_until_.end(), [&](Instant t) { return t > now; }));
}

std::optional<std::size_t> ResourcePool::acquire(Instant now) {
  const Instant until =
      mode_ == PoolMode::FixedBudget ? Instant::max() : now + block_;
  for (std::size_t r = 0; r < busy_until_.size(); ++r) {
    if (busy_until_[r] <= now) {
      busy_until_[r] = until;
      return r;
    }
  }
  if (busy_until_.size() < capacity_) {
    busy_until_.push_back(until);
    return busy_until_.size() - 1;
  }
  return std::nullopt;
}

std::string PolicyKind::to_string() const {
  switch (kind) {
    case Kind::PurePredictive: return "predictive";
    case Kind::PredictiveUncertainty: return "predictive-uncertainty";
    case Kind::PredictiveCate: return "predictive-cate";
    case Kind::Conformal: return "conformal:" + std::string(prpm::to_string(method));
    case Kind::ConformalCate: return "conformal-cate:" + std::string(prpm::to_string(method));
  }
  return {};
}

PolicyKind PolicyKind::parse(std::string_view text) {
  const auto t = trim(text);
  if (t == "predictive") return {Kind::PurePredictive};
  if (t == "predictive-uncertainty") return {Kind::PredictiveUncertainty};
  if (t == "predictive-cate") return {Kind::PredictiveCate};
  if (t.starts_with("conformal-cate:")) {
    return {Kind::ConformalCate, parse_conformal_method(method_suffix(t, "conformal-cate:"))};
  }
  if (t.starts_with("conformal:")) {
    return {Kind::Conformal, parse_conformal_method(method_suffix(t, "conformal:"))};
  }
  usage_error("unknown policy '" + std::string(t) + "'");
}

// ---------------------------------------------------------------------------

UoutPredictor model_predictor(const GbdtModel& model) {
  return [&model](const PrefixSample& s) { return model.predict_proba(s.features).uout; };
}

UoutPredictor imported_predictor(const ScoreTable& scores) {
  return [&scores](const PrefixSample& s) { return scores.at(s.case_id, s.prefix_length); };
}

std::vector<ScoredPrefix> score_prefixes(std::span<const PrefixSample> samples,
                                         const UoutPredictor& predictor,
                                         const CausalEstimator* causal,
                                         const BaggedEnsemble* ensemble) {
  std::vector<ScoredPrefix> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    ScoredPrefix p;
    p.est.case_id = s.case_id;
    p.est.prefix_length = s.prefix_length;
    p.est.p_uout = predictor(s);
    p.est.cate = causal ? causal->estimate_cate(s.features) : kNaN;
    p.est.estimate_time = s.prefix_end_time;
    p.actual = s.outcome;
    if (ensemble) p.total_uncertainty = ensemble->total_uncertainty(s.features);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ScoredPrefix> read_estimates_csv(std::istream& in) {
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) data_error("estimates file has no header");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < row.size(); ++i) col[std::string(trim(row[i]))] = i;
  for (const char* required : {"case_id", "prefix_len", "time_ms", "p_uout", "cate", "pset", "actual"}) {
    if (!col.contains(required)) {
      data_error(std::string("estimates file lacks the '") + required + "' column");
    }
  }
  const std::size_t n_cols = row.size();
  const auto optional_cell = [&](const char* name) -> std::optional<std::string> {
    const auto it = col.find(name);
    if (it == col.end()) return std::nullopt;
    const auto v = trim(row[it->second]);
    if (v.empty() || v == "-") return std::nullopt;
    return std::string(v);
  };
  std::vector<ScoredPrefix> out;
  while (reader.next(row)) {
    if (row.size() != n_cols) {
      data_error("line " + std::to_string(reader.line()) + ": wrong number of fields");
    }
    ScoredPrefix p;
    p.est.case_id = row[col["case_id"]];
    p.est.prefix_length = static_cast<std::size_t>(parse_integer(row[col["prefix_len"]]));
    p.est.estimate_time = from_epoch_ms(parse_integer(row[col["time_ms"]]));
    p.est.p_uout = parse_number(row[col["p_uout"]]);
    p.est.cate = parse_number(row[col["cate"]]);
    if (auto ps = optional_cell("pset")) {
      p.est.pset = PredictionSet::parse(*ps);
      p.has_pset = true;
    }
    const auto actual = optional_cell("actual");
    if (!actual) data_error("missing ground truth for case " + p.est.case_id);
    p.actual = parse_outcome(*actual);
    if (auto v = optional_cell("c_uout")) p.est.c_uout = parse_number(*v);
    if (auto v = optional_cell("c_in")) p.est.c_in = parse_number(*v);
    if (auto v = optional_cell("total_uncertainty")) p.total_uncertainty = parse_number(*v);
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------

double total_gain(const GainLedger& ledger) noexcept {
  double sum = 0.0;
  for (const auto& a : ledger.allocations) sum += a.realized_value;
  return sum;
}

double accuracy_per_resource(const GainLedger& ledger) noexcept {
  if (ledger.n_allocated == 0) return 0.0;
  return static_cast<double>(ledger.n_correct) / static_cast<double>(ledger.n_allocated);
}

double recompute_total_gain(const GainLedger& ledger, LossMode mode) noexcept {
  double sum = 0.0;
  for (const auto& a : ledger.allocations) {
    const CostParams c{a.c_uout, a.c_in, 0.5};
    sum += a.actual == Outcome::Undesired ? a.cate * c.c_uout - c.c_in
                                          : -compute_loss(a.cate, c, mode);
  }
  return sum;
}

ReplayResult replay(std::vector<ScoredPrefix> stream, const PolicyKind& policy,
                    const ConformalCalibrator* calibrator, const ReplayOptions& options,
                    ResourcePool pool) {
  std::sort(stream.begin(), stream.end(), stream_order);

  bool psets_known = calibrator != nullptr;
  if (calibrator) {
    for (auto& p : stream) p.est.pset = calibrator->prediction_set(Probabilities::from_uout(p.est.p_uout));
  } else {
    psets_known = !stream.empty() && std::all_of(stream.begin(), stream.end(),
                                                 [](const ScoredPrefix& p) { return p.has_pset; });
  }
  if (policy.is_conformal() && !psets_known) {
    usage_error("policy " + policy.to_string() + " needs a calibrator or supplied prediction sets");
  }
  for (const auto& p : stream) {
    if (std::isnan(p.est.cate)) usage_error("replay needs CATE estimates for every prefix");
    if (policy.kind == PolicyKind::Kind::PredictiveUncertainty && std::isnan(p.total_uncertainty)) {
      usage_error("policy predictive-uncertainty needs total-uncertainty estimates");
    }
  }

  std::unordered_map<std::string, std::size_t> final_length;
  for (const auto& p : stream) {
    auto& f = final_length[p.est.case_id];
    f = std::max(f, p.est.prefix_length);
  }

  ReplayResult result;
  GainLedger& ledger = result.ledger;
  std::map<std::string, const ScoredPrefix*> active;  // ordered: deterministic scans
  std::set<std::string> treated;

  for (std::size_t i = 0; i < stream.size();) {
    const Instant now = stream[i].est.estimate_time;
    std::size_t j = i;
    for (; j < stream.size() && stream[j].est.estimate_time == now; ++j) {
      active[stream[j].est.case_id] = &stream[j];
    }

    // One round per distinct arriving case whose latest state qualifies.
    std::set<std::string> arrived;
    for (std::size_t k = i; k < j; ++k) arrived.insert(stream[k].est.case_id);
    std::size_t rounds = 0;
    for (const auto& id : arrived) {
      rounds += !treated.contains(id) && qualifies(policy, *active.at(id), options).has_value();
    }
    for (; rounds > 0 && pool.has_free(now); --rounds) {
      std::optional<Pending> best;
      for (const auto& [case_id, item] : active) {
        if (treated.contains(case_id)) continue;
        const auto gain = qualifies(policy, *item, options);
        if (!gain) continue;
        const Pending cand{item, *gain};
        if (!best || pending_before(policy, cand, *best)) best = cand;
      }
      if (!best) break;
      const auto resource = pool.acquire(now);
      if (!resource) break;
      const auto& e = best->item->est;
      const CostParams c = effective_costs(e, options.costs);
      Allocation a;
      a.case_id = e.case_id;
      a.prefix_length = e.prefix_length;
      a.time = now;
      a.resource = *resource;
      a.p_uout = e.p_uout;
      a.cate = e.cate;
      a.c_uout = c.c_uout;
      a.c_in = c.c_in;
      a.estimated_gain = compute_gain(e.cate, c);
      a.actual = best->item->actual;
      a.realized_value = a.actual == Outcome::Undesired
                             ? a.estimated_gain
                             : -compute_loss(e.cate, c, options.loss_mode);
      ledger.n_correct += a.actual == Outcome::Undesired;
      ledger.allocations.push_back(std::move(a));
      treated.insert(e.case_id);
      result.report.max_in_flight = std::max(result.report.max_in_flight, pool.in_flight(now));
    }

    for (std::size_t k = i; k < j; ++k) {
      const auto& e = stream[k].est;
      if (e.prefix_length == final_length[e.case_id]) active.erase(e.case_id);
    }
    i = j;
  }
  ledger.n_allocated = ledger.allocations.size();
  ledger.total_gain = total_gain(ledger);

  ReplayReport& r = result.report;
  r.policy = policy;
  if (policy.is_conformal() && calibrator) r.alpha = calibrator->alpha;
  r.capacity = pool.capacity();
  r.pool_mode = pool.mode();
  r.n_prefixes = stream.size();
  r.n_cases = final_length.size();
  r.n_allocated = ledger.n_allocated;
  r.n_correct = ledger.n_correct;
  r.total_gain = ledger.total_gain;
  r.accuracy_per_resource = accuracy_per_resource(ledger);

  std::vector<double> scores;
  std::vector<Outcome> labels;
  std::vector<PredictionSet> sets;
  for (const auto& p : stream) {
    scores.push_back(p.est.p_uout);
    labels.push_back(p.actual);
    sets.push_back(p.est.pset);
  }
  const bool both_classes =
      std::count(labels.begin(), labels.end(), Outcome::Undesired) > 0 &&
      std::count(labels.begin(), labels.end(), Outcome::Desired) > 0;
  r.auc = both_classes ? auc(scores, labels) : kNaN;
  r.f_score = f_score_at(scores, labels, options.costs.tau);
  if (psets_known && !stream.empty()) {
    r.coverage = empirical_coverage(sets, labels);
    r.histogram = set_histogram(sets);
  }
  return result;
}

ReplayResult replay(std::span<const PrefixSample> test, const GbdtModel& model,
                    const CausalEstimator& causal, const ConformalCalibrator* calibrator,
                    const PolicyKind& policy, const ReplayOptions& options, ResourcePool pool,
                    const BaggedEnsemble* ensemble) {
  return replay(score_prefixes(test, model_predictor(model), &causal, ensemble), policy,
                calibrator, options, std::move(pool));
}

// ---------------------------------------------------------------------------

SweepResult sweep(std::span<const ScoredPrefix> test, std::span<const double> cal_p_uout,
                  std::span<const Outcome> cal_labels, const SweepConfig& config) {
  std::vector<double> alphas = config.alphas;
  std::sort(alphas.begin(), alphas.end());
  alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());

  std::vector<ConformalMethod> methods;
  for (const auto& p : config.policies) {
    if (p.is_conformal() &&
        std::find(methods.begin(), methods.end(), p.method) == methods.end()) {
      methods.push_back(p.method);
    }
  }
  if (!methods.empty() && alphas.empty()) usage_error("conformal policies need at least one alpha");

  SweepResult result;
  std::map<std::pair<ConformalMethod, double>, ConformalCalibrator> calibrators;
  std::vector<Outcome> test_labels;
  for (const auto& p : test) test_labels.push_back(p.actual);
  for (const auto m : methods) {
    std::size_t best_uout = 0;
    std::optional<std::size_t> best_row;
    for (const double a : alphas) {
      auto cal = calibrate(m, cal_p_uout, cal_labels, a, config.ties);
      std::vector<PredictionSet> sets;
      sets.reserve(test.size());
      for (const auto& p : test) sets.push_back(cal.prediction_set(Probabilities::from_uout(p.est.p_uout)));
      HistogramRow row{m, a, set_histogram(sets), {}, false};
      if (!sets.empty()) row.coverage = empirical_coverage(sets, test_labels);
      // Alphas ascend, so a strict comparison keeps the smallest alpha on ties.
      if (!best_row || row.histogram.uout > best_uout) {
        best_uout = row.histogram.uout;
        best_row = result.histograms.size();
      }
      result.histograms.push_back(row);
      calibrators.emplace(std::make_pair(m, a), std::move(cal));
    }
    result.histograms[*best_row].best = true;
    result.best_alpha[m] = result.histograms[*best_row].alpha;
  }

  struct Task {
    PolicyKind policy;
    const ConformalCalibrator* calibrator;
    std::size_t capacity;
  };
  std::vector<Task> tasks;
  for (const auto& p : config.policies) {
    if (p.is_conformal()) {
      for (const double a : alphas) {
        for (const auto c : config.capacities) tasks.push_back({p, &calibrators.at({p.method, a}), c});
      }
    } else {
      for (const auto c : config.capacities) tasks.push_back({p, nullptr, c});
    }
  }

  const std::vector<ScoredPrefix> base(test.begin(), test.end());
  result.reports.resize(tasks.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      const auto& task = tasks[t];
      result.reports[t] = replay(base, task.policy, task.calibrator, config.options,
                                 ResourcePool(task.capacity, config.pool_mode, config.block))
                              .report;
    }
  };
  const int jobs = std::max(1, std::min<int>(config.jobs, static_cast<int>(tasks.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int k = 0; k < jobs; ++k) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  return result;
}

// ---------------------------------------------------------------------------

void write_report_csv(std::ostream& out, std::span<const ReplayReport> reports,
                      const ProvenanceLines& provenance) {
  write_provenance(out, provenance);
  write_csv_row(out, kReportColumns);
  for (const auto& r : reports) write_csv_row(out, report_row(r));
}

void write_ledger_csv(std::ostream& out, const GainLedger& ledger,
                      const ProvenanceLines& provenance) {
  write_provenance(out, provenance);
  write_csv_row(out, {"case_id", "prefix_len", "time_ms", "resource", "p_uout", "cate", "c_uout",
                      "c_in", "estimated_gain", "actual", "realized_value"});
  for (const auto& a : ledger.allocations) {
    write_csv_row(out, {a.case_id, std::to_string(a.prefix_length),
                        std::to_string(to_epoch_ms(a.time)), std::to_string(a.resource),
                        format_number(a.p_uout), format_number(a.cate), format_number(a.c_uout),
                        format_number(a.c_in), format_number(a.estimated_gain),
                        std::string(to_string(a.actual)), format_number(a.realized_value)});
  }
}

void write_sweep_csv(std::ostream& out, const SweepResult& result,
                     const ProvenanceLines& provenance) {
  write_provenance(out, provenance);
  std::vector<std::string> header = {"row_type"};
  header.insert(header.end(), kReportColumns.begin(), kReportColumns.end());
  header.push_back("best_alpha");
  write_csv_row(out, header);
  for (const auto& h : result.histograms) {
    std::vector<std::string> row(header.size());
    const auto set = [&](const char* name, std::string v) {
      const auto it = std::find(header.begin(), header.end(), name);
      row[static_cast<std::size_t>(it - header.begin())] = std::move(v);
    };
    set("row_type", "histogram");
    set("method", std::string(to_string(h.method)));
    set("alpha", format_number(h.alpha));
    set("n_prefixes", std::to_string(h.coverage.n));
    if (h.coverage.n > 0) {
      set("coverage_marginal", format_number(h.coverage.marginal));
      for (const auto& [o, v] : h.coverage.per_outcome) {
        set(o == Outcome::Desired ? "coverage_dout" : "coverage_uout", format_number(v));
      }
    }
    set("sets_empty", std::to_string(h.histogram.empty));
    set("sets_dout", std::to_string(h.histogram.dout));
    set("sets_uout", std::to_string(h.histogram.uout));
    set("sets_both", std::to_string(h.histogram.both));
    set("best_alpha", h.best ? "1" : "0");
    write_csv_row(out, row);
  }
  for (const auto& r : result.reports) {
    std::vector<std::string> row = {"replay"};
    const auto body = report_row(r);
    row.insert(row.end(), body.begin(), body.end());
    row.emplace_back();
    write_csv_row(out, row);
  }
}

}  // namespace prpm
