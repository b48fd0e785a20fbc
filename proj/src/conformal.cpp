#include "prpm/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace prpm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Ranked {
  Outcome first;
  double p_first;
  double p_second;
};

Ranked rank_outcomes(const Probabilities& probs, TieBreak ties) noexcept {
  const bool uout_first = probs.uout > probs.dout ||
                          (probs.uout == probs.dout && ties == TieBreak::UoutFirst);
  return uout_first ? Ranked{Outcome::Undesired, probs.uout, probs.dout}
                    : Ranked{Outcome::Desired, probs.dout, probs.uout};
}

}  // namespace

std::string_view to_string(ConformalMethod m) noexcept {
  switch (m) {
    case ConformalMethod::Naive: return "naive";
    case ConformalMethod::OutcomeBalanced: return "balanced";
    case ConformalMethod::Adaptive: return "adaptive";
  }
  return "naive";
}

ConformalMethod parse_conformal_method(std::string_view text) {
  const auto t = trim(text);
  if (t == "naive") return ConformalMethod::Naive;
  if (t == "balanced" || t == "outcome-balanced") return ConformalMethod::OutcomeBalanced;
  if (t == "adaptive") return ConformalMethod::Adaptive;
  usage_error("unknown conformal method '" + std::string(t) + "'");
}

std::string PredictionSet::to_string() const {
  switch (bits_) {
    case 0: return "{}";
    case 1: return "{dout}";
    case 2: return "{uout}";
    default: return "{dout,uout}";
  }
}

PredictionSet PredictionSet::parse(std::string_view text) {
  std::string t(trim(text));
  if (t.size() < 2 || t.front() != '{' || t.back() != '}') {
    data_error("invalid prediction set '" + t + "'");
  }
  PredictionSet s;
  for (const auto& part : split(std::string_view(t).substr(1, t.size() - 2), ',')) {
    if (part.empty()) continue;
    s.insert(parse_outcome(part));
  }
  return s;
}

double score_naive(const Probabilities& probs, Outcome truth) noexcept {
  return 1.0 - probs.of(truth);
}

double score_adaptive(const Probabilities& probs, Outcome truth, TieBreak ties) noexcept {
  const auto r = rank_outcomes(probs, ties);
  return truth == r.first ? r.p_first : r.p_first + r.p_second;
}

double conformal_quantile(std::span<const double> scores, double alpha) {
  if (scores.empty()) data_error("conformal quantile of an empty score set");
  if (!(alpha > 0.0 && alpha < 1.0)) usage_error("alpha must lie in (0, 1)");
  const double n = static_cast<double>(scores.size());
  // The small offset keeps products that are integers in exact arithmetic from
  // rounding up to the next index.
  const double target = (n + 1.0) * (1.0 - alpha);
  const double k_real = std::max(1.0, std::ceil(target - 1e-9 * (n + 1.0)));
  if (k_real > n) return kInf;
  const auto k = static_cast<std::size_t>(k_real);
  std::vector<double> sorted(scores.begin(), scores.end());
  const auto nth = sorted.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(sorted.begin(), nth, sorted.end());
  return *nth;
}

PredictionSet ConformalCalibrator::prediction_set(const Probabilities& probs) const {
  PredictionSet set;
  switch (method) {
    case ConformalMethod::Naive:
      for (Outcome o : {Outcome::Desired, Outcome::Undesired}) {
        if (probs.of(o) >= 1.0 - qhat) set.insert(o);
      }
      break;
    case ConformalMethod::OutcomeBalanced:
      if (probs.dout >= 1.0 - qhat_dout) set.insert(Outcome::Desired);
      if (probs.uout >= 1.0 - qhat_uout) set.insert(Outcome::Undesired);
      break;
    case ConformalMethod::Adaptive: {
      const auto r = rank_outcomes(probs, ties);
      set.insert(r.first);
      if (r.p_first + r.p_second <= qhat) set = PredictionSet::both();
      break;
    }
  }
  return set;
}

std::string ConformalCalibrator::to_text() const {
  std::ostringstream out;
  out << "format=prpm-calibration\n"
      << "version=1\n"
      << "method=" << to_string(method) << '\n'
      << "alpha=" << format_number(alpha) << '\n'
      << "tie_break=" << (ties == TieBreak::UoutFirst ? "uout_first" : "dout_first") << '\n';
  if (method == ConformalMethod::OutcomeBalanced) {
    out << "qhat_dout=" << format_number(qhat_dout) << '\n'
        << "qhat_uout=" << format_number(qhat_uout) << '\n';
  } else {
    out << "qhat=" << format_number(qhat) << '\n';
  }
  out << "n_cal=" << n_cal << '\n'
      << "n_cal_dout=" << n_cal_dout << '\n'
      << "n_cal_uout=" << n_cal_uout << '\n'
      << "model_fingerprint=" << model_fingerprint << '\n';
  return out.str();
}

ConformalCalibrator ConformalCalibrator::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) data_error("malformed calibration line '" + std::string(t) + "'");
    kv[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
  }
  const auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) data_error("calibration artifact lacks '" + key + "'");
    return it->second;
  };
  if (get("format") != "prpm-calibration" || get("version") != "1") {
    data_error("not a prpm calibration artifact (version 1)");
  }
  ConformalCalibrator c;
  c.method = parse_conformal_method(get("method"));
  c.alpha = parse_number(get("alpha"));
  const auto& tb = get("tie_break");
  if (tb == "uout_first") c.ties = TieBreak::UoutFirst;
  else if (tb == "dout_first") c.ties = TieBreak::DoutFirst;
  else data_error("invalid tie_break '" + tb + "'");
  if (c.method == ConformalMethod::OutcomeBalanced) {
    c.qhat_dout = parse_number(get("qhat_dout"));
    c.qhat_uout = parse_number(get("qhat_uout"));
  } else {
    c.qhat = parse_number(get("qhat"));
  }
  c.n_cal = static_cast<std::size_t>(parse_integer(get("n_cal")));
  c.n_cal_dout = static_cast<std::size_t>(parse_integer(get("n_cal_dout")));
  c.n_cal_uout = static_cast<std::size_t>(parse_integer(get("n_cal_uout")));
  c.model_fingerprint = get("model_fingerprint");
  return c;
}

ConformalCalibrator calibrate(ConformalMethod method, std::span<const double> p_uout,
                              std::span<const Outcome> labels, double alpha, TieBreak ties) {
  if (p_uout.size() != labels.size()) usage_error("probabilities and labels differ in length");
  if (p_uout.empty()) data_error("empty calibration set");
  ConformalCalibrator c;
  c.method = method;
  c.alpha = alpha;
  c.ties = ties;
  c.n_cal = p_uout.size();

  std::vector<double> all, dout, uout;
  for (std::size_t i = 0; i < p_uout.size(); ++i) {
    const auto probs = Probabilities::from_uout(p_uout[i]);
    const double s = method == ConformalMethod::Adaptive ? score_adaptive(probs, labels[i], ties)
                                                         : score_naive(probs, labels[i]);
    all.push_back(s);
    (labels[i] == Outcome::Undesired ? uout : dout).push_back(s);
  }
  c.n_cal_dout = dout.size();
  c.n_cal_uout = uout.size();
  if (method == ConformalMethod::OutcomeBalanced) {
    if (dout.empty()) data_error("calibration stratum dout is empty");
    if (uout.empty()) data_error("calibration stratum uout is empty");
    c.qhat_dout = conformal_quantile(dout, alpha);
    c.qhat_uout = conformal_quantile(uout, alpha);
  } else {
    c.qhat = conformal_quantile(all, alpha);
  }
  return c;
}

ConformalCalibrator calibrate(ConformalMethod method, const GbdtModel& model,
                              std::span<const PrefixSample> cal, double alpha, TieBreak ties) {
  std::vector<double> p;
  std::vector<Outcome> y;
  p.reserve(cal.size());
  y.reserve(cal.size());
  for (const auto& s : cal) {
    p.push_back(model.predict_proba(s.features).uout);
    y.push_back(s.outcome);
  }
  return calibrate(method, p, y, alpha, ties);
}

Coverage empirical_coverage(std::span<const PredictionSet> sets, std::span<const Outcome> labels) {
  if (sets.size() != labels.size()) usage_error("sets and labels differ in length");
  if (sets.empty()) data_error("empirical coverage of an empty test set");
  Coverage cov;
  cov.n = sets.size();
  std::size_t hit = 0;
  std::map<Outcome, std::pair<std::size_t, std::size_t>> strata;  // hits, total
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const bool covered = sets[i].contains(labels[i]);
    hit += covered;
    auto& s = strata[labels[i]];
    s.first += covered;
    ++s.second;
  }
  cov.marginal = static_cast<double>(hit) / static_cast<double>(sets.size());
  for (const auto& [o, s] : strata) {
    cov.per_outcome[o] = static_cast<double>(s.first) / static_cast<double>(s.second);
  }
  return cov;
}

Coverage empirical_coverage(const ConformalCalibrator& cal, const GbdtModel& model,
                            std::span<const PrefixSample> test) {
  std::vector<PredictionSet> sets;
  std::vector<Outcome> y;
  for (const auto& s : test) {
    sets.push_back(cal.prediction_set(model.predict_proba(s.features)));
    y.push_back(s.outcome);
  }
  return empirical_coverage(sets, y);
}

SetHistogram set_histogram(std::span<const PredictionSet> sets) noexcept {
  SetHistogram h;
  for (const auto& s : sets) {
    if (s.is_empty()) ++h.empty;
    else if (s.size() == 2) ++h.both;
    else if (s.contains(Outcome::Undesired)) ++h.uout;
    else ++h.dout;
  }
  return h;
}

}  // namespace prpm
