#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "prpm/conformal.hpp"
#include "test_support.hpp"

using namespace prpm;
using prpm::testing::thrown_by;

namespace {

constexpr Outcome U = Outcome::Undesired;
constexpr Outcome D = Outcome::Desired;
constexpr double kInf = std::numeric_limits<double>::infinity();
const auto kUout = PredictionSet::only(U);
const auto kDout = PredictionSet::only(D);

ConformalCalibrator naive(double qhat) {
  ConformalCalibrator c;
  c.method = ConformalMethod::Naive;
  c.qhat = qhat;
  return c;
}

double oracle_quantile(std::vector<double> s, double alpha) {
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  // Smallest integer k with k >= (n + 1)(1 - alpha), found by counting.
  std::size_t k = 0;
  while (static_cast<double>(k) < (n + 1.0) * (1.0 - alpha) - 1e-9 * (n + 1.0)) ++k;
  k = std::max<std::size_t>(k, 1);
  return k > s.size() ? kInf : s[k - 1];
}

struct Draws {
  std::vector<double> p;
  std::vector<Outcome> y;
};

/// Exchangeable draws: the classifier sees a noisy version of the true log-odds.
Draws draw(std::size_t n, double intercept, Rng& rng) {
  Draws d;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = intercept + 1.5 * rng.normal();
    d.y.push_back(rng.bernoulli(sigmoid(z)) ? U : D);
    d.p.push_back(sigmoid(0.8 * z + 0.3 * rng.normal()));
  }
  return d;
}

std::vector<PredictionSet> sets_for(const ConformalCalibrator& c, const std::vector<double>& p) {
  std::vector<PredictionSet> out;
  for (double v : p) out.push_back(c.prediction_set(Probabilities::from_uout(v)));
  return out;
}

}  // namespace

TEST_CASE("prediction set basics") {
  CHECK(PredictionSet::empty().to_string() == "{}");
  CHECK(kDout.to_string() == "{dout}");
  CHECK(kUout.to_string() == "{uout}");
  CHECK(PredictionSet::both().to_string() == "{dout,uout}");
  for (const auto s : {PredictionSet::empty(), kDout, kUout, PredictionSet::both()}) {
    CHECK(PredictionSet::parse(s.to_string()) == s);
    CHECK(PredictionSet::empty().subset_of(s));
    CHECK(s.subset_of(PredictionSet::both()));
  }
  CHECK(PredictionSet::parse("{uout,dout}") == PredictionSet::both());
  CHECK_FALSE(kUout.subset_of(kDout));
  CHECK(thrown_by([] { PredictionSet::parse("uout"); }));
}

TEST_CASE("naive scores") {
  CHECK(score_naive({0.72, 0.28}, U) == doctest::Approx(0.28).epsilon(1e-15));
  CHECK(score_naive({0.5, 0.5}, U) == 0.5);
  CHECK(score_naive({0.5, 0.5}, D) == 0.5);
  CHECK(score_naive({1.0, 0.0}, D) == 1.0);
}

TEST_CASE("adaptive scores") {
  CHECK(score_adaptive({0.7, 0.3}, U) == 0.7);
  CHECK(score_adaptive({0.7, 0.3}, D) == 1.0);
  CHECK(score_adaptive({0.5, 0.5}, D) == 1.0);
  CHECK(score_adaptive({0.5, 0.5}, U) == 0.5);
  CHECK(score_adaptive({0.5, 0.5}, U, TieBreak::DoutFirst) == 1.0);
}

TEST_CASE("conformal quantile examples") {
  CHECK(conformal_quantile(std::vector<double>{0.1, 0.2, 0.3, 0.9}, 0.5) == 0.3);
  CHECK(conformal_quantile(std::vector<double>{0.1, 0.2, 0.3, 0.9}, 0.1) == kInf);
  CHECK(conformal_quantile(std::vector<double>{0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4, 0.5}, 0.2) == 0.8);
  CHECK(thrown_by([] { conformal_quantile(std::vector<double>{}, 0.1); }));
  CHECK(thrown_by([] { conformal_quantile(std::vector<double>{0.1}, 1.0); }));
}

TEST_CASE("conformal quantile equals the order-statistic oracle") {
  Rng rng(99);
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> s(1 + rng.index(300));
    for (auto& v : s) v = static_cast<double>(rng.index(50)) / 49.0;  // ties included
    const double alpha = rep % 10 == 0 ? 0.1 * static_cast<double>(1 + rng.index(9))
                                       : 0.001 + 0.998 * rng.uniform();
    CHECK(conformal_quantile(s, alpha) == oracle_quantile(s, alpha));
  }
}

TEST_CASE("worked prediction-set examples") {
  CHECK(naive(0.7).prediction_set({0.72, 0.28}) == kUout);

  ConformalCalibrator ob;
  ob.method = ConformalMethod::OutcomeBalanced;
  ob.qhat_dout = 0.7;
  ob.qhat_uout = 0.4;
  CHECK(ob.prediction_set({0.3, 0.7}) == kDout);

  ConformalCalibrator ad;
  ad.method = ConformalMethod::Adaptive;
  ad.qhat = 0.8;
  CHECK(ad.prediction_set({0.45, 0.55}) == kDout);

  CHECK(naive(kInf).prediction_set({0.9, 0.1}) == PredictionSet::both());
  CHECK(naive(0.0).prediction_set({0.9, 0.1}) == PredictionSet::empty());
}

TEST_CASE("calibrate") {
  const std::vector<double> p = {0.9, 0.8, 0.3, 0.6, 0.2, 0.55};
  const std::vector<Outcome> y = {U, U, D, D, D, U};
  const auto c = calibrate(ConformalMethod::Naive, p, y, 0.3);
  std::vector<double> scores;
  for (std::size_t i = 0; i < p.size(); ++i) scores.push_back(score_naive(Probabilities::from_uout(p[i]), y[i]));
  CHECK(c.qhat == conformal_quantile(scores, 0.3));
  CHECK(c.n_cal == 6);
  CHECK(c.n_cal_uout == 3);

  const auto b = calibrate(ConformalMethod::OutcomeBalanced, p, y, 0.5);
  std::vector<double> su, sd;
  for (std::size_t i = 0; i < p.size(); ++i) {
    (y[i] == U ? su : sd).push_back(score_naive(Probabilities::from_uout(p[i]), y[i]));
  }
  CHECK(b.qhat_uout == conformal_quantile(su, 0.5));
  CHECK(b.qhat_dout == conformal_quantile(sd, 0.5));

  const std::vector<Outcome> all_d(p.size(), D);
  const auto e = thrown_by([&] { calibrate(ConformalMethod::OutcomeBalanced, p, all_d, 0.2); });
  REQUIRE(e);
  CHECK(e->message.find("uout") != std::string::npos);
  CHECK(thrown_by([&] { calibrate(ConformalMethod::Naive, std::vector<double>{}, std::vector<Outcome>{}, 0.2); }));
}

TEST_CASE("calibration artifact round-trips exactly") {
  Rng rng(5);
  const auto d = draw(200, 0.0, rng);
  for (auto m : {ConformalMethod::Naive, ConformalMethod::OutcomeBalanced, ConformalMethod::Adaptive}) {
    auto c = calibrate(m, d.p, d.y, 0.15, TieBreak::DoutFirst);
    c.model_fingerprint = "00ff00ff00ff00ff";
    const auto back = ConformalCalibrator::from_text(c.to_text());
    CHECK(back == c);
  }
  auto inf = naive(kInf);
  CHECK(ConformalCalibrator::from_text(inf.to_text()).qhat == kInf);
  CHECK(thrown_by([] { ConformalCalibrator::from_text("format=other\n"); }));
}

TEST_CASE("coverage and histogram") {
  const std::vector<Outcome> y = {U, D, U};
  const std::vector<PredictionSet> both(3, PredictionSet::both());
  const std::vector<PredictionSet> none(3, PredictionSet::empty());
  CHECK(empirical_coverage(both, y).marginal == 1.0);
  CHECK(empirical_coverage(none, y).marginal == 0.0);
  const std::vector<PredictionSet> mixed = {kUout, kUout, kDout};
  const auto cov = empirical_coverage(mixed, y);
  CHECK(cov.marginal == doctest::Approx(1.0 / 3.0));
  CHECK(cov.per_outcome.at(U) == 0.5);
  CHECK(cov.per_outcome.at(D) == 0.0);

  const auto h = set_histogram(mixed);
  CHECK(h.uout == 2);
  CHECK(h.dout == 1);
  CHECK(h.empty == 0);
  CHECK(h.both == 0);
  CHECK(set_histogram({}) == SetHistogram{});
}

TEST_CASE("marginal coverage on exchangeable data") {
  Rng rng(2024);
  const double alpha = 0.2;
  const auto cal = draw(1000, 0.0, rng);
  const auto test = draw(2000, 0.0, rng);
  for (auto m : {ConformalMethod::Naive, ConformalMethod::OutcomeBalanced, ConformalMethod::Adaptive}) {
    const auto c = calibrate(m, cal.p, cal.y, alpha);
    const auto cov = empirical_coverage(sets_for(c, test.p), test.y);
    CHECK(cov.marginal >= 0.78);
  }
}

TEST_CASE("outcome-balanced coverage holds per stratum under imbalance") {
  Rng rng(77);
  const double alpha = 0.2;
  const auto cal = draw(1000, -2.0, rng);  // roughly 80/20 dout/uout
  const auto test = draw(4000, -2.0, rng);
  const auto c = calibrate(ConformalMethod::OutcomeBalanced, cal.p, cal.y, alpha);
  const auto cov = empirical_coverage(sets_for(c, test.p), test.y);
  for (const auto& [o, v] : cov.per_outcome) {
    const auto n = static_cast<double>(std::count(test.y.begin(), test.y.end(), o));
    CHECK(v >= 1.0 - alpha - 3.0 * std::sqrt(alpha * (1.0 - alpha) / n));
  }
}

TEST_CASE("sets are nested in alpha, adaptive sets are never empty") {
  Rng rng(8);
  const auto cal = draw(500, 0.3, rng);
  const auto test = draw(500, 0.3, rng);
  const std::vector<double> alphas = {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9};
  for (auto m : {ConformalMethod::Naive, ConformalMethod::OutcomeBalanced, ConformalMethod::Adaptive}) {
    std::vector<std::vector<PredictionSet>> by_alpha;
    for (double a : alphas) by_alpha.push_back(sets_for(calibrate(m, cal.p, cal.y, a), test.p));
    for (std::size_t k = 1; k < alphas.size(); ++k) {
      for (std::size_t i = 0; i < test.p.size(); ++i) {
        CHECK(by_alpha[k][i].subset_of(by_alpha[k - 1][i]));
        if (m == ConformalMethod::Adaptive) CHECK_FALSE(by_alpha[k][i].is_empty());
      }
    }
  }
}

TEST_CASE("sets do not depend on test order") {
  Rng rng(4);
  const auto cal = draw(300, 0.0, rng);
  auto test = draw(300, 0.0, rng);
  const auto c = calibrate(ConformalMethod::Adaptive, cal.p, cal.y, 0.3);
  const auto before = sets_for(c, test.p);
  std::vector<std::size_t> perm(test.p.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::vector<double> shuffled;
  for (auto i : perm) shuffled.push_back(test.p[i]);
  const auto after = sets_for(c, shuffled);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(after[i] == before[perm[i]]);
}
