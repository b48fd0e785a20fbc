#include "prpm/policy.hpp"

#include <algorithm>

#include "prpm/csv.hpp"

namespace prpm {

double compute_gain(double cate, const CostParams& costs) noexcept {
  return cate * costs.c_uout - costs.c_in;
}

double compute_loss(double cate, const CostParams& costs, LossMode mode) noexcept {
  return mode == LossMode::Full ? costs.c_in + cate * costs.c_uout : costs.c_in;
}

CostParams effective_costs(const CaseEstimates& est, const CostParams& defaults) noexcept {
  CostParams c = defaults;
  if (est.c_uout) c.c_uout = *est.c_uout;
  if (est.c_in) c.c_in = *est.c_in;
  return c;
}

std::vector<Candidate> filter_candidates(std::span<const CaseEstimates> estimates,
                                         const CostParams& costs) {
  std::vector<Candidate> out;
  for (const auto& e : estimates) {
    if (!(e.p_uout > costs.tau) || !e.pset.is_only(Outcome::Undesired) || !(e.cate > 0.0)) {
      continue;
    }
    const double gain = compute_gain(e.cate, effective_costs(e, costs));
    if (gain > 0.0) out.push_back({e, gain});
  }
  return out;
}

bool ranks_before(const Candidate& a, const Candidate& b) noexcept {
  if (a.gain != b.gain) return a.gain > b.gain;
  if (a.estimates.p_uout != b.estimates.p_uout) return a.estimates.p_uout > b.estimates.p_uout;
  if (a.estimates.case_id != b.estimates.case_id) return a.estimates.case_id < b.estimates.case_id;
  return a.estimates.prefix_length < b.estimates.prefix_length;
}

std::vector<Candidate> rank(std::vector<Candidate> candidates) {
  std::sort(candidates.begin(), candidates.end(), ranks_before);
  return candidates;
}

void write_candidates_csv(std::ostream& out, std::span<const Candidate> candidates) {
  write_csv_row(out, {"case_id", "p_uout", "cate", "pset", "gain"});
  for (const auto& c : candidates) {
    write_csv_row(out, {c.estimates.case_id, format_number(c.estimates.p_uout),
                        format_number(c.estimates.cate), c.estimates.pset.to_string(),
                        format_number(c.gain)});
  }
}

}  // namespace prpm
