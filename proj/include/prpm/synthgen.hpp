// Synthetic event logs with known outcome probabilities and treatment effects.
//
// Each case draws features x ~ N(0, I_d) and z = intercept + w.x. With effect
// delta(x) in [0, 1] the latent probabilities of an undesired outcome are
//   control:  delta + (1 - delta) * sigmoid(z)
//   treated:  (1 - delta) * sigmoid(z)
// so the true CATE is delta(x) exactly. Cases in the noisy segment have their
// recorded label flipped with probability label_noise. Without label noise every
// case is in the regular segment.
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "prpm/core.hpp"
#include "prpm/log_ingest.hpp"

namespace prpm {

struct SynthConfig {
  std::size_t n_cases = 200;
  std::size_t min_length = 4;  // events per trace, including start and end
  std::size_t max_length = 10;
  std::size_t n_features = 4;
  double intercept = -0.5;
  std::vector<double> weights = {1.5, -1.0, 0.75, 0.0};  // padded with zeros to n_features
  double effect = 0.2;        // delta at x = 0
  double effect_slope = 0.0;  // delta(x) = clamp(effect + effect_slope * x0, 0, 1)
  double treatment_probability = 0.5;
  double label_noise = 0.0;
  double noise_fraction = 1.0;  // share of cases in the noisy segment
  double mean_interarrival_s = 600.0;
  double mean_event_gap_s = 1800.0;
  std::size_t n_resources = 5;
  std::uint64_t seed = 42;

  /// Throws a usage error naming the first invalid field.
  void validate() const;

  /// "key=value" lines; from_text accepts the same keys (unknown keys are errors).
  std::string to_text() const;
  static SynthConfig from_text(const std::string& text);
};

struct CaseTruth {
  std::string case_id;
  bool treated = false;
  bool noisy = false;
  double p_uout = 0.0;           // latent, under the assigned arm
  double p_uout_recorded = 0.0;  // after label noise
  double cate = 0.0;
  Outcome outcome = Outcome::Desired;  // recorded label
};

struct SynthLog {
  EventLog log;
  std::vector<CaseTruth> truth;
};

/// Activities: "Submit", middle steps from {Check, Review, Call, Update}, treated
/// cases get one "Create_Offer", then "Approved" (dout) or "Canceled" (uout).
SynthLog generate_log(const SynthConfig& cfg);

/// Column layout parse_csv needs to read a generated log back.
CsvSchema synth_csv_schema(const SynthConfig& cfg);
OutcomeRules synth_outcome_rules();

void write_ground_truth_csv(std::ostream& out, const SynthLog& synth);

}  // namespace prpm
