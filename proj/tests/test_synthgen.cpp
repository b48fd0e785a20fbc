#include <doctest.h>

#include <set>
#include <sstream>

#include "prpm/learners.hpp"
#include "prpm/synthgen.hpp"
#include "test_support.hpp"

using namespace prpm;
using prpm::testing::thrown_by;

namespace {

std::string log_text(const SynthConfig& cfg, const SynthLog& s) {
  std::ostringstream out;
  write_log_csv(out, s.log, synth_csv_schema(cfg));
  write_ground_truth_csv(out, s);
  return out.str();
}

FeatureMatrix case_features(const SynthConfig& cfg, const SynthLog& s) {
  FeatureMatrix x(s.log.traces.size(), cfg.n_features);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < cfg.n_features; ++j) {
      x(i, j) = std::get<double>(s.log.traces[i].case_attributes.at("x" + std::to_string(j)));
    }
  }
  return x;
}

/// Trains on the first half of the cases and returns AUC on the second half.
double holdout_auc(const SynthConfig& cfg) {
  const auto s = generate_log(cfg);
  const auto x = case_features(cfg, s);
  const std::size_t half = x.rows() / 2;
  FeatureMatrix train(half, x.cols()), test(x.rows() - half, x.cols());
  std::vector<Outcome> ytrain, ytest;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto& dst = i < half ? train : test;
    const std::size_t r = i < half ? i : i - half;
    for (std::size_t j = 0; j < x.cols(); ++j) dst(r, j) = x(i, j);
    (i < half ? ytrain : ytest).push_back(s.truth[i].outcome);
  }
  const auto model = train_gbdt(train, ytrain, {}, 3);
  std::vector<double> scores;
  for (std::size_t i = 0; i < test.rows(); ++i) scores.push_back(model.predict_proba(test.row(i)).uout);
  return auc(scores, ytest);
}

}  // namespace

TEST_CASE("same seed, same log") {
  SynthConfig cfg;
  cfg.n_cases = 50;
  CHECK(log_text(cfg, generate_log(cfg)) == log_text(cfg, generate_log(cfg)));
  auto other = cfg;
  other.seed = 43;
  CHECK(log_text(cfg, generate_log(cfg)) != log_text(other, generate_log(other)));
}

TEST_CASE("config validation") {
  const auto bad = [](auto mutate) {
    SynthConfig c;
    mutate(c);
    const auto e = thrown_by([&] { c.validate(); });
    return e && e->kind == ErrorKind::Usage;
  };
  CHECK(bad([](SynthConfig& c) { c.n_cases = 0; }));
  CHECK(bad([](SynthConfig& c) { c.min_length = 2; }));
  CHECK(bad([](SynthConfig& c) { c.max_length = 3; }));
  CHECK(bad([](SynthConfig& c) { c.n_features = 0; }));
  CHECK(bad([](SynthConfig& c) { c.label_noise = 1.5; }));
  CHECK(bad([](SynthConfig& c) { c.noise_fraction = -0.1; }));
  CHECK(bad([](SynthConfig& c) { c.treatment_probability = 2; }));
  CHECK(bad([](SynthConfig& c) { c.mean_event_gap_s = 0; }));
  CHECK_NOTHROW(SynthConfig{}.validate());
}

TEST_CASE("config text round trip") {
  SynthConfig cfg;
  cfg.n_cases = 77;
  cfg.weights = {2.5, -1.25};
  cfg.label_noise = 0.3;
  cfg.noise_fraction = 0.5;
  cfg.seed = 123456789;
  const auto back = SynthConfig::from_text(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.n_cases == 77);
  CHECK(back.weights == cfg.weights);
  CHECK(thrown_by([] { SynthConfig::from_text("colour=blue\n"); })->kind == ErrorKind::Usage);
}

TEST_CASE("trace structure") {
  SynthConfig cfg;
  cfg.n_cases = 300;
  const auto s = generate_log(cfg);
  REQUIRE(s.log.traces.size() == cfg.n_cases);
  REQUIRE(s.truth.size() == cfg.n_cases);
  const std::set<std::string> middle = {"Check", "Review", "Call", "Update", "Create_Offer"};
  for (std::size_t i = 0; i < s.log.traces.size(); ++i) {
    const auto& t = s.log.traces[i];
    const auto& truth = s.truth[i];
    CHECK(t.case_id == truth.case_id);
    if (i > 0) CHECK(s.log.traces[i - 1].start() < t.start());
    CHECK(t.length() >= cfg.min_length);
    CHECK(t.length() <= cfg.max_length + 1);  // treated cases carry one extra step
    CHECK(t.events.front().activity == "Submit");
    CHECK(t.events.back().activity == (truth.outcome == Outcome::Undesired ? "Canceled" : "Approved"));
    std::size_t offers = 0;
    for (std::size_t k = 1; k < t.length(); ++k) {
      CHECK(t.events[k - 1].timestamp <= t.events[k].timestamp);
      if (k + 1 < t.length()) CHECK(middle.contains(t.events[k].activity));
      offers += t.events[k].activity == "Create_Offer";
    }
    CHECK(offers == (truth.treated ? 1u : 0u));
    CHECK(truth.cate == 0.2);
  }
}

TEST_CASE("latent probabilities follow the model") {
  SynthConfig cfg;
  cfg.n_cases = 400;
  cfg.effect = 0.1;
  cfg.effect_slope = 0.3;
  const auto s = generate_log(cfg);
  const auto x = case_features(cfg, s);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double z = cfg.intercept;
    for (std::size_t j = 0; j < cfg.weights.size(); ++j) z += cfg.weights[j] * x(i, j);
    const double delta = std::clamp(cfg.effect + cfg.effect_slope * x(i, 0), 0.0, 1.0);
    const double base = sigmoid(z);
    const auto& t = s.truth[i];
    CHECK(t.cate == doctest::Approx(delta).epsilon(1e-12));
    CHECK(t.p_uout == doctest::Approx(t.treated ? (1 - delta) * base : delta + (1 - delta) * base)
                          .epsilon(1e-12));
    CHECK(t.p_uout_recorded == t.p_uout);
  }
}

TEST_CASE("empirical outcome rates match the latent probabilities") {
  SynthConfig cfg;
  cfg.n_cases = 20000;
  cfg.min_length = 3;
  cfg.max_length = 3;
  const auto s = generate_log(cfg);
  double expected = 0, observed = 0;
  for (const auto& t : s.truth) {
    expected += t.p_uout;
    observed += t.outcome == Outcome::Undesired;
  }
  const double n = static_cast<double>(cfg.n_cases);
  CHECK(std::abs(observed - expected) / n < 4 * 0.5 / std::sqrt(n));
}

TEST_CASE("noise-free separable logs are learnable") {
  SynthConfig cfg;
  cfg.n_cases = 2000;
  cfg.effect = 0;
  cfg.weights = {12.0, -8.0, 6.0, 0.0};
  cfg.intercept = 0;
  CHECK(holdout_auc(cfg) >= 0.95);
}

TEST_CASE("labels flipped at rate one half carry no signal") {
  SynthConfig cfg;
  cfg.n_cases = 2000;
  cfg.effect = 0;
  cfg.weights = {12.0, -8.0, 6.0, 0.0};
  cfg.label_noise = 0.5;
  cfg.noise_fraction = 1.0;
  CHECK(holdout_auc(cfg) <= 0.55);
}

TEST_CASE("noisy segment") {
  SynthConfig cfg;
  cfg.n_cases = 4000;
  cfg.label_noise = 0.3;
  cfg.noise_fraction = 0.25;
  const auto s = generate_log(cfg);
  double noisy = 0;
  for (std::size_t i = 0; i < s.truth.size(); ++i) {
    const auto& t = s.truth[i];
    noisy += t.noisy;
    CHECK(std::get<std::string>(s.log.traces[i].case_attributes.at("segment")) ==
          (t.noisy ? "noisy" : "regular"));
    if (t.noisy) {
      CHECK(t.p_uout_recorded == doctest::Approx(0.7 * t.p_uout + 0.3 * (1 - t.p_uout)));
    } else {
      CHECK(t.p_uout_recorded == t.p_uout);
    }
  }
  CHECK(std::abs(noisy / 4000.0 - 0.25) < 0.03);
}

TEST_CASE("CSV output parses back") {
  SynthConfig cfg;
  cfg.n_cases = 40;
  const auto s = generate_log(cfg);
  std::ostringstream out;
  write_log_csv(out, s.log, synth_csv_schema(cfg));
  std::istringstream in(out.str());
  const auto back = parse_csv(in, synth_csv_schema(cfg));
  REQUIRE(back.traces.size() == s.log.traces.size());
  for (std::size_t i = 0; i < back.traces.size(); ++i) {
    const auto& a = back.traces[i];
    const auto& b = s.log.traces[i];
    CHECK(a.case_id == b.case_id);
    REQUIRE(a.length() == b.length());
    for (std::size_t k = 0; k < a.length(); ++k) {
      CHECK(a.events[k].activity == b.events[k].activity);
      CHECK(a.events[k].timestamp == b.events[k].timestamp);
      CHECK(a.events[k].resource == b.events[k].resource);
    }
    CHECK(a.case_attributes.at("segment") == b.case_attributes.at("segment"));
  }
  const auto labels = label_outcomes(back, synth_outcome_rules());
  for (std::size_t i = 0; i < s.truth.size(); ++i) CHECK(labels.at(s.truth[i].case_id) == s.truth[i].outcome);
}
