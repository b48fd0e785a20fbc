// Candidate filtering, gain/loss accounting and ranking of cases for intervention.
#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "prpm/conformal.hpp"
#include "prpm/core.hpp"

namespace prpm {

struct CostParams {
  double c_uout = 20.0;  // value of avoiding one undesired outcome
  double c_in = 1.0;     // cost of one intervention
  double tau = 0.5;      // P(uout) must exceed this
};

/// Full charges c_in + cate * c_uout for a wasted intervention; CostOnly charges c_in.
enum class LossMode : std::uint8_t { Full, CostOnly };

double compute_gain(double cate, const CostParams& costs) noexcept;
double compute_loss(double cate, const CostParams& costs, LossMode mode = LossMode::Full) noexcept;

struct CaseEstimates {
  std::string case_id;
  std::size_t prefix_length = 0;
  double p_uout = 0.0;
  double cate = 0.0;
  PredictionSet pset;
  Instant estimate_time;
  // Per-case cost overrides; unset fields fall back to the policy defaults.
  std::optional<double> c_uout;
  std::optional<double> c_in;
};

/// Defaults with the case's overrides applied.
CostParams effective_costs(const CaseEstimates& est, const CostParams& defaults) noexcept;

struct Candidate {
  CaseEstimates estimates;
  double gain = 0.0;
};

/// Keeps p_uout > tau, pset == {uout}, cate > 0 and gain > 0, attaching the gain.
std::vector<Candidate> filter_candidates(std::span<const CaseEstimates> estimates,
                                         const CostParams& costs);

/// Strict total order: gain desc, p_uout desc, case_id asc, prefix_length asc.
bool ranks_before(const Candidate& a, const Candidate& b) noexcept;
std::vector<Candidate> rank(std::vector<Candidate> candidates);

/// case_id, p_uout, cate, pset, gain
void write_candidates_csv(std::ostream& out, std::span<const Candidate> candidates);

}  // namespace prpm
