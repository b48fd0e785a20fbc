#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "prpm/learners.hpp"
#include "prpm/synthgen.hpp"
#include "test_support.hpp"

using namespace prpm;
using prpm::testing::thrown_by;

namespace {

constexpr Outcome U = Outcome::Undesired;
constexpr Outcome D = Outcome::Desired;

double logit(double p) { return std::log(p / (1.0 - p)); }

struct Toy {
  FeatureMatrix x;
  std::vector<Outcome> y;
};

Toy separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Toy t{FeatureMatrix(n, 2), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.normal(), b = rng.normal();
    t.x(i, 0) = a;
    t.x(i, 1) = b;
    t.y.push_back(a + 0.5 * b > 0.0 ? U : D);
  }
  return t;
}

Toy noisy(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Toy t{FeatureMatrix(n, d), {}};
  for (std::size_t i = 0; i < n; ++i) {
    double z = -0.3;
    for (std::size_t j = 0; j < d; ++j) {
      t.x(i, j) = rng.normal();
      z += (j % 2 ? -0.8 : 1.1) * t.x(i, j);
    }
    t.y.push_back(rng.bernoulli(sigmoid(z)) ? U : D);
  }
  return t;
}

std::vector<double> scores_of(const GbdtModel& m, const FeatureMatrix& x) {
  std::vector<double> s;
  for (std::size_t i = 0; i < x.rows(); ++i) s.push_back(m.predict_proba(x.row(i)).uout);
  return s;
}

double pairwise_auc(const std::vector<double>& s, const std::vector<Outcome>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != U || y[j] != D) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("separable toy set is learned") {
  const auto t = separable(200, 1);
  const auto model = train_gbdt(t.x, t.y, {}, 7);
  CHECK(auc(scores_of(model, t.x), t.y) >= 0.95);
}

TEST_CASE("constant features predict the prevalence") {
  FeatureMatrix x(50, 3);
  std::vector<Outcome> y;
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = 1.5;
    y.push_back(i % 5 == 0 ? U : D);
  }
  const auto model = train_gbdt(x, y, {}, 3);
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    const std::vector<double> probe = {rng.normal(), rng.normal(), rng.normal()};
    CHECK(std::abs(model.predict_proba(probe).uout - 0.2) <= 1e-9);
  }
}

TEST_CASE("training is deterministic and serialization is bit-exact") {
  const auto t = noisy(300, 4, 9);
  GbdtParams p;
  p.n_trees = 30;
  p.subsample = 0.7;
  const auto a = train_gbdt(t.x, t.y, p, 5);
  const auto b = train_gbdt(t.x, t.y, p, 5);
  CHECK(a == b);
  CHECK(a.to_json() == b.to_json());
  const auto c = GbdtModel::from_json(a.to_json());
  CHECK(c == a);
  for (std::size_t i = 0; i < t.x.rows(); ++i) {
    CHECK(c.predict_raw(t.x.row(i)) == a.predict_raw(t.x.row(i)));
  }
  const auto other_seed = train_gbdt(t.x, t.y, p, 6);
  CHECK_FALSE(other_seed == a);
}

TEST_CASE("training loss does not exceed the base-score predictor") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto t = noisy(400, 5, seed);
    GbdtParams p;
    p.n_trees = 40;
    const auto model = train_gbdt(t.x, t.y, p, seed);
    const GbdtModel base(p, 5, model.base_score(), seed, {});
    CHECK(logistic_loss(model, t.x, t.y) <= logistic_loss(base, t.x, t.y));
  }
}

TEST_CASE("training preconditions") {
  FeatureMatrix x(4, 1);
  CHECK(thrown_by([&] { train_gbdt(x, std::vector<Outcome>{D, D, D, D}, {}, 1); })->message ==
        "degenerate labels");
  CHECK(thrown_by([&] { train_gbdt(FeatureMatrix(1, 1), std::vector<Outcome>{U}, {}, 1); }));
  GbdtParams bad;
  bad.learning_rate = 0;
  CHECK(thrown_by([&] { train_gbdt(x, std::vector<Outcome>{D, U, D, U}, bad, 1); })->kind ==
        ErrorKind::Usage);
}

TEST_CASE("predict_proba") {
  const GbdtModel empty({}, 2, 0.0, 0, {});
  const std::vector<double> x = {0.3, -1.0};
  CHECK(empty.predict_proba(x).uout == 0.5);
  CHECK(empty.predict_proba(x).dout == 0.5);
  CHECK(thrown_by([&] { empty.predict_proba(std::vector<double>{1.0}); }));

  const auto t = noisy(300, 3, 4);
  const auto model = train_gbdt(t.x, t.y, {}, 4);
  Rng rng(8);
  std::vector<std::pair<double, double>> raw_prob;
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> probe = {3 * rng.normal(), 3 * rng.normal(), 3 * rng.normal()};
    const auto p = model.predict_proba(probe);
    CHECK(p.uout + p.dout == 1.0);
    CHECK(p.uout > 0.0);
    CHECK(p.uout < 1.0);
    raw_prob.emplace_back(model.predict_raw(probe), p.uout);
  }
  std::sort(raw_prob.begin(), raw_prob.end());
  for (std::size_t i = 1; i < raw_prob.size(); ++i) CHECK(raw_prob[i - 1].second <= raw_prob[i].second);
}

TEST_CASE("tree splits send x <= threshold left") {
  FeatureMatrix x(60, 1);
  std::vector<Outcome> y;
  for (std::size_t i = 0; i < 60; ++i) {
    x(i, 0) = static_cast<double>(i);
    y.push_back(i < 30 ? D : U);
  }
  GbdtParams p;
  p.n_trees = 1;
  p.max_depth = 1;
  p.min_leaf = 5;
  const auto model = train_gbdt(x, y, p, 1);
  REQUIRE(model.trees().size() == 1);
  const auto& root = model.trees()[0].nodes[0];
  CHECK(root.feature == 0);
  CHECK(root.threshold == 29.0);
  const auto& left = model.trees()[0].nodes[static_cast<std::size_t>(root.left)];
  // Newton step on residuals -0.5 with hessian 0.25 each and l2 = 1.
  CHECK(left.value == doctest::Approx(30 * -0.5 / (30 * 0.25 + 1.0)));
}

// ---------------------------------------------------------------------------

TEST_CASE("CATE from stratum probabilities") {
  const GbdtModel control({}, 1, logit(0.6), 0, {});  // P(dout | T=0) = 0.4
  const GbdtModel treated({}, 1, logit(0.3), 0, {});  // P(dout | T=1) = 0.7
  const CausalEstimator est(treated, control);
  CHECK(est.estimate_cate(std::vector<double>{0.0}) == doctest::Approx(0.3).epsilon(1e-12));
  const CausalEstimator same(control, control);
  CHECK(same.estimate_cate(std::vector<double>{5.0}) == 0.0);
}

TEST_CASE("T-learner identity, range and persistence") {
  const auto t = noisy(400, 3, 12);
  std::vector<bool> treat;
  Rng rng(1);
  for (std::size_t i = 0; i < t.x.rows(); ++i) treat.push_back(rng.bernoulli(0.5));
  GbdtParams p;
  p.n_trees = 20;
  const auto est = train_tlearner(t.x, treat, t.y, p, 10);
  CHECK(est.treated().seed() == 10);
  CHECK(est.control().seed() == 11);
  const auto back = CausalEstimator::from_json(est.to_json());
  for (std::size_t i = 0; i < t.x.rows(); ++i) {
    const auto x = t.x.row(i);
    const double c = est.estimate_cate(x);
    CHECK(c == est.control().predict_proba(x).uout - est.treated().predict_proba(x).uout);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(back.estimate_cate(x) == c);
  }
}

TEST_CASE("T-learner names the degenerate stratum") {
  const auto t = noisy(100, 2, 3);
  std::vector<bool> all_control(t.x.rows(), false);
  const auto e = thrown_by([&] { train_tlearner(t.x, all_control, t.y, {}, 1); });
  REQUIRE(e);
  CHECK(e->message.find("treated") != std::string::npos);

  std::vector<bool> treat(t.x.rows());
  std::vector<Outcome> y = t.y;
  for (std::size_t i = 0; i < y.size(); ++i) {
    treat[i] = i % 2 == 0;
    if (!treat[i]) y[i] = D;
  }
  const auto e2 = thrown_by([&] { train_tlearner(t.x, treat, y, {}, 1); });
  REQUIRE(e2);
  CHECK(e2->message.find("control") != std::string::npos);
}

TEST_CASE("T-learner recovers a constant synthetic effect") {
  SynthConfig cfg;
  cfg.n_cases = 5000;
  cfg.effect = 0.2;
  cfg.seed = 2024;
  const auto synth = generate_log(cfg);
  FeatureMatrix x(cfg.n_cases, cfg.n_features);
  std::vector<bool> treat;
  std::vector<Outcome> y;
  for (std::size_t i = 0; i < cfg.n_cases; ++i) {
    const auto& attrs = synth.log.traces[i].case_attributes;
    for (std::size_t j = 0; j < cfg.n_features; ++j) {
      x(i, j) = std::get<double>(attrs.at("x" + std::to_string(j)));
    }
    treat.push_back(synth.truth[i].treated);
    y.push_back(synth.truth[i].outcome);
  }
  const auto est = train_tlearner(x, treat, y, {}, 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) sum += est.estimate_cate(x.row(i));
  const double mean = sum / static_cast<double>(x.rows());
  CHECK(mean >= 0.15);
  CHECK(mean <= 0.25);
}

// ---------------------------------------------------------------------------

TEST_CASE("binary entropy") {
  CHECK(binary_entropy(0.5) == 1.0);
  CHECK(binary_entropy(0.0) == 0.0);
  CHECK(binary_entropy(1.0) == 0.0);
  CHECK(binary_entropy(0.9) == doctest::Approx(0.4690).epsilon(1e-4 / 0.469));
  CHECK(binary_entropy(0.9) == doctest::Approx(-(0.9 * std::log2(0.9) + 0.1 * std::log2(0.1))));
}

TEST_CASE("bagged ensemble") {
  const auto t = noisy(300, 3, 21);
  GbdtParams p;
  p.n_trees = 15;
  const auto ens = train_ensemble(t.x, t.y, 4, p, 3);
  REQUIRE(ens.members().size() == 4);
  for (std::size_t b = 0; b < 4; ++b) CHECK(ens.members()[b].seed() == 4 + b);
  CHECK_FALSE(ens.members()[0] == ens.members()[1]);
  const auto back = BaggedEnsemble::from_json(ens.to_json());
  for (std::size_t i = 0; i < 50; ++i) {
    const auto x = t.x.row(i);
    double mean = 0.0;
    for (const auto& m : ens.members()) mean += m.predict_proba(x).uout;
    mean /= 4.0;
    CHECK(ens.mean_uout(x) == doctest::Approx(mean).epsilon(1e-14));
    const double u = ens.total_uncertainty(x);
    CHECK(u == doctest::Approx(binary_entropy(mean)).epsilon(1e-12));
    CHECK(u >= 0.0);
    CHECK(u <= 1.0);
    CHECK(back.total_uncertainty(x) == u);
  }
  CHECK(thrown_by([&] { train_ensemble(t.x, t.y, 1, p, 3); }));
}

// ---------------------------------------------------------------------------

TEST_CASE("AUC") {
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<Outcome>{U, U, D, D}) == 1.0);
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.7, 0.6}, std::vector<Outcome>{U, D, U, D}) == 0.75);
  CHECK(auc(std::vector<double>{0.5, 0.5}, std::vector<Outcome>{U, D}) == 0.5);
  CHECK(thrown_by([] { auc(std::vector<double>{0.1, 0.2}, std::vector<Outcome>{U, U}); }));
}

TEST_CASE("AUC matches the pairwise oracle and ignores monotone transforms") {
  Rng rng(31);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rng.index(60);
    std::vector<double> s(n);
    std::vector<Outcome> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.index(10)) / 10.0;  // many ties
      y[i] = rng.bernoulli(0.4) ? U : D;
    }
    y[0] = U;
    y[1] = D;
    const double a = auc(s, y);
    CHECK(a == doctest::Approx(pairwise_auc(s, y)).epsilon(1e-12));
    std::vector<double> t(n);
    std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(3 * v) - 7; });
    CHECK(auc(t, y) == doctest::Approx(a).epsilon(1e-12));
  }
}

TEST_CASE("F-score on the uout class") {
  const std::vector<Outcome> y = {U, D, U, D};
  CHECK(f_score(std::vector<bool>{true, false, true, false}, y) == 1.0);
  CHECK(f_score(std::vector<bool>{false, false, false, false}, y) == 0.0);
  // TP 1, FP 1, FN 1.
  CHECK(f_score(std::vector<bool>{true, true, false, false}, y) == doctest::Approx(0.5));
  CHECK(f_score_at(std::vector<double>{0.9, 0.2, 0.6, 0.5}, y, 0.5) == 1.0);
}

TEST_CASE("score import") {
  std::istringstream in("case_id,prefix_len,p_uout\nA,1,0.25\nA,2,0.5\nB,1,1\n");
  const auto table = ScoreTable::read_csv(in);
  CHECK(table.size() == 3);
  CHECK(table.at("A", 2) == 0.5);
  CHECK(thrown_by([&] { table.at("C", 1); })->kind == ErrorKind::Data);
  std::istringstream bad("case_id,prefix_len,p_uout\nA,1,1.5\n");
  CHECK(thrown_by([&] { ScoreTable::read_csv(bad); }));
}
