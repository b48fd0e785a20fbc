#include "prpm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "prpm/csv.hpp"

namespace prpm {

namespace {

const std::vector<std::string> kMiddle = {"Check", "Review", "Call", "Update"};

bool in_unit(double p) { return p >= 0.0 && p <= 1.0; }

std::string case_name(std::size_t i, std::size_t n) {
  const std::string digits = std::to_string(i + 1);
  const std::size_t width = std::to_string(n).size();
  return "case_" + std::string(width - digits.size(), '0') + digits;
}

std::string feature_name(std::size_t j) { return "x" + std::to_string(j); }

}  // namespace

void SynthConfig::validate() const {
  if (n_cases < 3) usage_error("synth n_cases must be at least 3");
  if (min_length < 3) usage_error("synth min_length must be at least 3");
  if (max_length < min_length) usage_error("synth max_length must be >= min_length");
  if (!in_unit(effect)) usage_error("synth effect must lie in [0, 1]");
  if (!std::isfinite(effect_slope)) usage_error("synth effect_slope must be finite");
  if (!in_unit(treatment_probability)) usage_error("synth treatment_probability must lie in [0, 1]");
  if (!in_unit(label_noise)) usage_error("synth label_noise must lie in [0, 1]");
  if (!in_unit(noise_fraction)) usage_error("synth noise_fraction must lie in [0, 1]");
  if (!(mean_interarrival_s > 0.0)) usage_error("synth mean_interarrival_s must be positive");
  if (!(mean_event_gap_s > 0.0)) usage_error("synth mean_event_gap_s must be positive");
  if (n_resources == 0) usage_error("synth n_resources must be positive");
  if (weights.size() > n_features) usage_error("synth weights exceed n_features");
  if (!std::isfinite(intercept) ||
      !std::all_of(weights.begin(), weights.end(), [](double w) { return std::isfinite(w); })) {
    usage_error("synth coefficients must be finite");
  }
}

std::string SynthConfig::to_text() const {
  std::ostringstream out;
  std::vector<std::string> w;
  for (double v : weights) w.push_back(format_number(v));
  out << "n_cases=" << n_cases << '\n'
      << "min_length=" << min_length << '\n'
      << "max_length=" << max_length << '\n'
      << "n_features=" << n_features << '\n'
      << "intercept=" << format_number(intercept) << '\n'
      << "weights=" << join(w, ",") << '\n'
      << "effect=" << format_number(effect) << '\n'
      << "effect_slope=" << format_number(effect_slope) << '\n'
      << "treatment_probability=" << format_number(treatment_probability) << '\n'
      << "label_noise=" << format_number(label_noise) << '\n'
      << "noise_fraction=" << format_number(noise_fraction) << '\n'
      << "mean_interarrival_s=" << format_number(mean_interarrival_s) << '\n'
      << "mean_event_gap_s=" << format_number(mean_event_gap_s) << '\n'
      << "n_resources=" << n_resources << '\n'
      << "seed=" << seed << '\n';
  return out.str();
}

SynthConfig SynthConfig::from_text(const std::string& text) {
  SynthConfig c;
  const auto size = [](std::size_t& dst) {
    return [&dst](std::string_view v) { dst = static_cast<std::size_t>(parse_integer(v)); };
  };
  const auto real = [](double& dst) { return [&dst](std::string_view v) { dst = parse_number(v); }; };
  const std::map<std::string, std::function<void(std::string_view)>, std::less<>> setters = {
      {"n_cases", size(c.n_cases)},
      {"min_length", size(c.min_length)},
      {"max_length", size(c.max_length)},
      {"n_features", size(c.n_features)},
      {"intercept", real(c.intercept)},
      {"weights",
       [&c](std::string_view v) {
         c.weights.clear();
         for (const auto& part : split(v, ',')) {
           if (!trim(part).empty()) c.weights.push_back(parse_number(part));
         }
       }},
      {"effect", real(c.effect)},
      {"effect_slope", real(c.effect_slope)},
      {"treatment_probability", real(c.treatment_probability)},
      {"label_noise", real(c.label_noise)},
      {"noise_fraction", real(c.noise_fraction)},
      {"mean_interarrival_s", real(c.mean_interarrival_s)},
      {"mean_event_gap_s", real(c.mean_event_gap_s)},
      {"n_resources", size(c.n_resources)},
      {"seed", [&c](std::string_view v) { c.seed = static_cast<std::uint64_t>(parse_integer(v)); }},
  };
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) usage_error("malformed synth config line '" + std::string(t) + "'");
    const auto key = trim(t.substr(0, eq));
    const auto it = setters.find(key);
    if (it == setters.end()) usage_error("unknown synth config key '" + std::string(key) + "'");
    it->second(trim(t.substr(eq + 1)));
  }
  return c;
}

CsvSchema synth_csv_schema(const SynthConfig& cfg) {
  CsvSchema s;
  s.resource_column = "resource";
  s.numeric_attrs = {"amount"};
  s.case_categorical_attrs = {"segment"};
  for (std::size_t j = 0; j < cfg.n_features; ++j) s.case_numeric_attrs.push_back(feature_name(j));
  return s;
}

OutcomeRules synth_outcome_rules() {
  return {{"Approved", Outcome::Desired}, {"Canceled", Outcome::Undesired}};
}

SynthLog generate_log(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<double> w = cfg.weights;
  w.resize(cfg.n_features, 0.0);

  SynthLog out;
  const CsvSchema schema = synth_csv_schema(cfg);
  out.log.schema = {schema.numeric_attrs, schema.categorical_attrs, schema.case_numeric_attrs,
                    schema.case_categorical_attrs};

  // 2024-01-01T00:00:00Z
  Instant clock = from_epoch_ms(1704067200000LL);
  const auto seconds = [](double s) {
    return Duration(std::max<long long>(1, std::llround(s)) * 1000);
  };
  const auto resource = [&] { return "R" + std::to_string(rng.index(cfg.n_resources) + 1); };

  for (std::size_t i = 0; i < cfg.n_cases; ++i) {
    clock += seconds(rng.exponential(cfg.mean_interarrival_s));

    Trace trace;
    trace.case_id = case_name(i, cfg.n_cases);
    std::vector<double> x(cfg.n_features);
    double z = cfg.intercept;
    for (std::size_t j = 0; j < cfg.n_features; ++j) {
      x[j] = rng.normal();
      z += w[j] * x[j];
      trace.case_attributes[feature_name(j)] = x[j];
    }
    const double x0 = cfg.n_features > 0 ? x[0] : 0.0;
    const double delta = std::clamp(cfg.effect + cfg.effect_slope * x0, 0.0, 1.0);
    const bool treated = rng.bernoulli(cfg.treatment_probability);
    const bool noisy = rng.bernoulli(cfg.noise_fraction) && cfg.label_noise > 0.0;
    trace.case_attributes["segment"] = std::string(noisy ? "noisy" : "regular");

    const double base = sigmoid(z);
    const double p = treated ? (1.0 - delta) * base : delta + (1.0 - delta) * base;
    bool uout = rng.bernoulli(p);
    if (noisy && rng.bernoulli(cfg.label_noise)) uout = !uout;

    const std::size_t length =
        cfg.min_length + rng.index(cfg.max_length - cfg.min_length + 1);
    std::vector<std::string> activities(length);
    activities.front() = "Submit";
    activities.back() = uout ? "Canceled" : "Approved";
    for (std::size_t k = 1; k + 1 < length; ++k) activities[k] = kMiddle[rng.index(kMiddle.size())];
    if (treated) activities[1 + rng.index(length - 2)] = "Create_Offer";

    Instant t = clock;
    for (std::size_t k = 0; k < length; ++k) {
      if (k > 0) t += seconds(rng.exponential(cfg.mean_event_gap_s));
      Event e;
      e.case_id = trace.case_id;
      e.activity = activities[k];
      e.timestamp = t;
      e.resource = resource();
      e.attributes["amount"] = std::round(rng.exponential(100.0) * 100.0) / 100.0;
      trace.events.push_back(std::move(e));
    }

    const double p_recorded = noisy ? p * (1.0 - cfg.label_noise) + (1.0 - p) * cfg.label_noise : p;
    out.truth.push_back({trace.case_id, treated, noisy, p, p_recorded, delta,
                         uout ? Outcome::Undesired : Outcome::Desired});
    out.log.traces.push_back(std::move(trace));
  }
  return out;
}

void write_ground_truth_csv(std::ostream& out, const SynthLog& synth) {
  write_csv_row(out, {"case_id", "treated", "noisy", "p_uout", "p_uout_recorded", "cate", "outcome"});
  for (const auto& c : synth.truth) {
    write_csv_row(out, {c.case_id, c.treated ? "1" : "0", c.noisy ? "1" : "0",
                        format_number(c.p_uout), format_number(c.p_uout_recorded),
                        format_number(c.cate), std::string(to_string(c.outcome))});
  }
}

}  // namespace prpm
