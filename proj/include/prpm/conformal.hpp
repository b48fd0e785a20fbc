// Inductive conformal prediction over the binary outcome {dout, uout}.
//
// Three non-conformity scores are supported:
//   Naive            s = 1 - p(true outcome); one quantile over all calibration scores.
//   OutcomeBalanced  the naive score, but one quantile per outcome stratum, which
//                    gives coverage conditional on each outcome.
//   Adaptive         s = cumulative probability mass of the outcomes ranked at or
//                    above the true one.
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prpm/core.hpp"
#include "prpm/learners.hpp"
#include "prpm/log_ingest.hpp"

namespace prpm {

enum class ConformalMethod : std::uint8_t { Naive, OutcomeBalanced, Adaptive };

std::string_view to_string(ConformalMethod m) noexcept;
/// "naive", "balanced" (or "outcome-balanced"), "adaptive".
ConformalMethod parse_conformal_method(std::string_view text);

/// How equal probabilities are ordered when ranking outcomes.
enum class TieBreak : std::uint8_t { UoutFirst, DoutFirst };

/// A subset of {dout, uout}.
class PredictionSet {
 public:
  constexpr PredictionSet() = default;
  static constexpr PredictionSet empty() { return PredictionSet(0); }
  static constexpr PredictionSet only(Outcome o) { return PredictionSet(bit(o)); }
  static constexpr PredictionSet both() { return PredictionSet(3); }

  constexpr bool contains(Outcome o) const { return (bits_ & bit(o)) != 0; }
  constexpr bool is_empty() const { return bits_ == 0; }
  constexpr bool is_only(Outcome o) const { return bits_ == bit(o); }
  constexpr std::size_t size() const { return (bits_ & 1) + ((bits_ >> 1) & 1); }
  constexpr bool subset_of(PredictionSet other) const { return (bits_ & ~other.bits_) == 0; }
  void insert(Outcome o) { bits_ |= bit(o); }

  /// "{}", "{dout}", "{uout}", "{dout,uout}".
  std::string to_string() const;
  static PredictionSet parse(std::string_view text);

  friend constexpr bool operator==(PredictionSet, PredictionSet) = default;

 private:
  constexpr explicit PredictionSet(std::uint8_t bits) : bits_(bits) {}
  static constexpr std::uint8_t bit(Outcome o) { return o == Outcome::Undesired ? 2 : 1; }
  std::uint8_t bits_ = 0;
};

double score_naive(const Probabilities& probs, Outcome truth) noexcept;
double score_adaptive(const Probabilities& probs, Outcome truth,
                      TieBreak ties = TieBreak::UoutFirst) noexcept;

/// k-th smallest score with k = ceil((n + 1)(1 - alpha)); +inf when k > n.
double conformal_quantile(std::span<const double> scores, double alpha);

struct ConformalCalibrator {
  ConformalMethod method = ConformalMethod::Naive;
  double alpha = 0.1;
  TieBreak ties = TieBreak::UoutFirst;
  double qhat = 0.0;       // Naive, Adaptive
  double qhat_dout = 0.0;  // OutcomeBalanced
  double qhat_uout = 0.0;  // OutcomeBalanced
  std::size_t n_cal = 0;
  std::size_t n_cal_dout = 0;
  std::size_t n_cal_uout = 0;
  std::string model_fingerprint;

  PredictionSet prediction_set(const Probabilities& probs) const;

  /// key=value text artifact; numbers in shortest round-trip form.
  std::string to_text() const;
  static ConformalCalibrator from_text(const std::string& text);

  friend bool operator==(const ConformalCalibrator&, const ConformalCalibrator&) = default;
};

inline PredictionSet prediction_set(const ConformalCalibrator& cal, const Probabilities& probs) {
  return cal.prediction_set(probs);
}

ConformalCalibrator calibrate(ConformalMethod method, std::span<const double> p_uout,
                              std::span<const Outcome> labels, double alpha,
                              TieBreak ties = TieBreak::UoutFirst);

ConformalCalibrator calibrate(ConformalMethod method, const GbdtModel& model,
                              std::span<const PrefixSample> cal, double alpha,
                              TieBreak ties = TieBreak::UoutFirst);

struct Coverage {
  double marginal = 0.0;
  std::map<Outcome, double> per_outcome;  // only strata present in the test data
  std::size_t n = 0;
};

Coverage empirical_coverage(std::span<const PredictionSet> sets, std::span<const Outcome> labels);
Coverage empirical_coverage(const ConformalCalibrator& cal, const GbdtModel& model,
                            std::span<const PrefixSample> test);

struct SetHistogram {
  std::size_t empty = 0;
  std::size_t dout = 0;
  std::size_t uout = 0;
  std::size_t both = 0;

  friend bool operator==(const SetHistogram&, const SetHistogram&) = default;
};

SetHistogram set_histogram(std::span<const PredictionSet> sets) noexcept;

}  // namespace prpm
