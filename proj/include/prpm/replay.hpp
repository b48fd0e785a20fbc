// Chronological replay of a scored prefix stream under a limited resource pool.
#pragma once

#include <cstddef>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prpm/conformal.hpp"
#include "prpm/learners.hpp"
#include "prpm/log_ingest.hpp"
#include "prpm/policy.hpp"

namespace prpm {

enum class PoolMode : std::uint8_t { FixedBudget, Renewable };

std::string_view to_string(PoolMode m) noexcept;
PoolMode parse_pool_mode(std::string_view text);

/// Intervention resources. In fixed-budget mode an allocated resource is never
/// released; in renewable mode it is busy for `block` after each allocation.
class ResourcePool {
 public:
  explicit ResourcePool(std::size_t capacity, PoolMode mode = PoolMode::FixedBudget,
                        Duration block = std::chrono::hours(1));

  std::size_t capacity() const noexcept { return capacity_; }
  PoolMode mode() const noexcept { return mode_; }
  Duration block() const noexcept { return block_; }

  std::size_t in_flight(Instant now) const;
  bool has_free(Instant now) const { return in_flight(now) < capacity_; }
  /// Index of the acquired resource, or nullopt when none is free.
  std::optional<std::size_t> acquire(Instant now);

 private:
  std::size_t capacity_;
  PoolMode mode_;
  Duration block_;
  std::vector<Instant> busy_until_;  // one slot per resource used so far
};

struct PolicyKind {
  enum class Kind : std::uint8_t {
    PurePredictive,         // p_uout > tau
    PredictiveUncertainty,  // p_uout > tau and total uncertainty < u_max
    PredictiveCate,         // p_uout > tau and cate > 0
    Conformal,              // p_uout > tau and pset == {uout}
    ConformalCate,          // all of the above plus gain > 0
  };
  Kind kind = Kind::ConformalCate;
  ConformalMethod method = ConformalMethod::Naive;  // conformal kinds only

  bool is_conformal() const noexcept {
    return kind == Kind::Conformal || kind == Kind::ConformalCate;
  }
  /// Candidates are ordered by estimated gain; otherwise by p_uout.
  bool ranks_by_gain() const noexcept {
    return kind == Kind::PredictiveCate || kind == Kind::ConformalCate;
  }

  /// "predictive", "predictive-uncertainty", "predictive-cate",
  /// "conformal:<method>", "conformal-cate:<method>".
  std::string to_string() const;
  static PolicyKind parse(std::string_view text);

  friend bool operator==(const PolicyKind&, const PolicyKind&) = default;
};

/// One test prefix with everything the policies look at.
struct ScoredPrefix {
  CaseEstimates est;
  Outcome actual = Outcome::Desired;
  double total_uncertainty = std::numeric_limits<double>::quiet_NaN();
  bool has_pset = false;  // est.pset was supplied with the input
};

using UoutPredictor = std::function<double(const PrefixSample&)>;
UoutPredictor model_predictor(const GbdtModel& model);
UoutPredictor imported_predictor(const ScoreTable& scores);

/// Scores test prefixes. `causal` and `ensemble` may be null, leaving cate or
/// total_uncertainty as NaN.
std::vector<ScoredPrefix> score_prefixes(std::span<const PrefixSample> samples,
                                         const UoutPredictor& predictor,
                                         const CausalEstimator* causal,
                                         const BaggedEnsemble* ensemble);

/// Table-style estimates: case_id, prefix_len, time_ms, p_uout, cate, pset, actual
/// and optional c_uout, c_in, total_uncertainty columns.
std::vector<ScoredPrefix> read_estimates_csv(std::istream& in);

struct ReplayOptions {
  CostParams costs;
  double u_max = 0.75;
  LossMode loss_mode = LossMode::Full;
};

struct Allocation {
  std::string case_id;
  std::size_t prefix_length = 0;
  Instant time;
  std::size_t resource = 0;
  double p_uout = 0.0;
  double cate = 0.0;
  double c_uout = 0.0;
  double c_in = 0.0;
  double estimated_gain = 0.0;
  Outcome actual = Outcome::Desired;
  double realized_value = 0.0;  // gain when actual is uout, -loss otherwise
};

struct GainLedger {
  std::vector<Allocation> allocations;
  double total_gain = 0.0;
  std::size_t n_correct = 0;
  std::size_t n_allocated = 0;
};

double total_gain(const GainLedger& ledger) noexcept;
double accuracy_per_resource(const GainLedger& ledger) noexcept;

struct ReplayReport {
  PolicyKind policy;
  std::optional<double> alpha;
  std::size_t capacity = 0;
  PoolMode pool_mode = PoolMode::FixedBudget;
  std::size_t n_prefixes = 0;
  std::size_t n_cases = 0;
  std::size_t n_allocated = 0;
  std::size_t n_correct = 0;
  double total_gain = 0.0;
  double accuracy_per_resource = 0.0;
  double auc = 0.0;  // NaN when the stream holds a single outcome class
  double f_score = 0.0;
  std::optional<Coverage> coverage;
  std::optional<SetHistogram> histogram;
  std::size_t max_in_flight = 0;
};

struct ReplayResult {
  ReplayReport report;
  GainLedger ledger;
};

/// Processes prefixes in (time, case_id, prefix_length) order. Arrivals sharing a
/// timestamp are applied together; each arrival that passes the policy filter
/// triggers one allocation, if a resource is free, to the best-ranked qualifying
/// untreated active case. A case is treated at most once and leaves the active set
/// after its last prefix. When `calibrator` is given, prediction sets are
/// recomputed from it.
ReplayResult replay(std::vector<ScoredPrefix> stream, const PolicyKind& policy,
                    const ConformalCalibrator* calibrator, const ReplayOptions& options,
                    ResourcePool pool);

/// Convenience form that scores `test` with the given models first.
ReplayResult replay(std::span<const PrefixSample> test, const GbdtModel& model,
                    const CausalEstimator& causal, const ConformalCalibrator* calibrator,
                    const PolicyKind& policy, const ReplayOptions& options, ResourcePool pool,
                    const BaggedEnsemble* ensemble = nullptr);

/// Independent recomputation of the ledger total from each entry's outcome, costs and cate.
double recompute_total_gain(const GainLedger& ledger, LossMode mode) noexcept;

// ---------------------------------------------------------------------------

struct SweepConfig {
  std::vector<PolicyKind> policies;
  std::vector<double> alphas;
  std::vector<std::size_t> capacities;
  ReplayOptions options;
  PoolMode pool_mode = PoolMode::FixedBudget;
  Duration block = std::chrono::hours(1);
  TieBreak ties = TieBreak::UoutFirst;
  int jobs = 1;
};

struct HistogramRow {
  ConformalMethod method = ConformalMethod::Naive;
  double alpha = 0.0;
  SetHistogram histogram;
  Coverage coverage;
  bool best = false;  // alpha with the most {uout}-only sets for this method
};

struct SweepResult {
  std::vector<ReplayReport> reports;
  std::vector<HistogramRow> histograms;
  std::map<ConformalMethod, double> best_alpha;
};

/// Conformal policies run once per (alpha, capacity), other policies once per
/// capacity. Alphas are deduplicated and sorted; each (method, alpha) pair is
/// calibrated once. Output order does not depend on `jobs`.
SweepResult sweep(std::span<const ScoredPrefix> test, std::span<const double> cal_p_uout,
                  std::span<const Outcome> cal_labels, const SweepConfig& config);

// ---------------------------------------------------------------------------

/// Lines written as "# ..." before the CSV header.
using ProvenanceLines = std::vector<std::string>;

void write_report_csv(std::ostream& out, std::span<const ReplayReport> reports,
                      const ProvenanceLines& provenance = {});
void write_ledger_csv(std::ostream& out, const GainLedger& ledger,
                      const ProvenanceLines& provenance = {});
void write_sweep_csv(std::ostream& out, const SweepResult& result,
                     const ProvenanceLines& provenance = {});

}  // namespace prpm
