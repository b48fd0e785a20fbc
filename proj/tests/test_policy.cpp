#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "prpm/csv.hpp"
#include "prpm/policy.hpp"

using namespace prpm;

namespace {

const auto kUout = PredictionSet::only(Outcome::Undesired);
const auto kDout = PredictionSet::only(Outcome::Desired);

CaseEstimates est(std::string id, double p, double cate, PredictionSet pset,
                  std::optional<double> c_uout = {}, std::optional<double> c_in = {}) {
  CaseEstimates e;
  e.case_id = std::move(id);
  e.prefix_length = 1;
  e.p_uout = p;
  e.cate = cate;
  e.pset = pset;
  e.c_uout = c_uout;
  e.c_in = c_in;
  return e;
}

std::vector<CaseEstimates> cost_example() {
  return {est("A", 0.52, 5, kUout, 6, 6),  est("B", 0.54, -1, kDout),
          est("C", 0.7, 6, kUout, 10, 5),  est("D", 0.7, 3, PredictionSet::empty()),
          est("E", 0.55, 3, kUout, 2, 12), est("F", 0.76, 4, kUout, 10, 5)};
}

std::vector<std::string> ids(const std::vector<Candidate>& c) {
  std::vector<std::string> out;
  for (const auto& x : c) out.push_back(x.estimates.case_id);
  return out;
}

}  // namespace

TEST_CASE("gain") {
  CHECK(compute_gain(5, {6, 6, 0.5}) == 24);
  CHECK(compute_gain(6, {10, 5, 0.5}) == 55);
  CHECK(compute_gain(3, {2, 12, 0.5}) == -6);
  CHECK(compute_gain(4, {10, 5, 0.5}) == 35);
  CHECK(compute_gain(0, {20, 1, 0.5}) == -1);
}

TEST_CASE("loss") {
  CHECK(compute_loss(0.3, {}) == doctest::Approx(7.0).epsilon(1e-15));
  CHECK(compute_loss(0, {20, 1, 0.5}) == 1);
  CHECK(compute_loss(0, {20, 0, 0.5}) == 0);
  CHECK(compute_loss(0.3, {}, LossMode::CostOnly) == 1);
}

TEST_CASE("gain is affine in cate and scales with the costs") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const CostParams c{10 * rng.uniform(), 5 * rng.uniform(), 0.5};
    const double a = rng.normal(), b = rng.normal(), w = rng.uniform();
    const double lhs = compute_gain(w * a + (1 - w) * b, c);
    const double rhs = w * compute_gain(a, c) + (1 - w) * compute_gain(b, c);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    const double lambda = 0.1 + 3 * rng.uniform();
    const CostParams scaled{lambda * c.c_uout, lambda * c.c_in, 0.5};
    CHECK(compute_gain(a, scaled) == doctest::Approx(lambda * compute_gain(a, c)).epsilon(1e-12));
  }
}

TEST_CASE("cost example filter and rank") {
  const auto rows = cost_example();
  const auto kept = filter_candidates(rows, {});
  CHECK(ids(kept) == std::vector<std::string>{"A", "C", "F"});
  CHECK(kept[0].gain == 24);
  CHECK(kept[1].gain == 55);
  CHECK(kept[2].gain == 35);
  const auto ranked = rank(kept);
  CHECK(ids(ranked) == std::vector<std::string>{"C", "F", "A"});
}

TEST_CASE("filter edge cases") {
  CHECK(filter_candidates(std::vector<CaseEstimates>{}, {}).empty());
  CHECK(filter_candidates(std::vector{est("x", 0.5, 0.5, kUout)}, {}).empty());
  CHECK(filter_candidates(std::vector{est("x", 0.51, 0.5, kUout)}, {}).size() == 1);
  CHECK(filter_candidates(std::vector{est("x", 0.9, 0.0, kUout)}, {}).empty());
  CHECK(filter_candidates(std::vector{est("x", 0.9, 0.05, kUout)}, {}).empty());  // gain 0
  CHECK(filter_candidates(std::vector{est("x", 0.9, 0.5, PredictionSet::both())}, {}).empty());
}

TEST_CASE("rank ties") {
  const std::vector<Candidate> two = {{est("a", 0.6, 1, kUout), 10}, {est("b", 0.7, 1, kUout), 10}};
  CHECK(ids(rank(two)) == std::vector<std::string>{"b", "a"});
  const std::vector<Candidate> same = {{est("b", 0.7, 1, kUout), 10}, {est("a", 0.7, 1, kUout), 10}};
  CHECK(ids(rank(same)) == std::vector<std::string>{"a", "b"});
  const std::vector<Candidate> one = {{est("z", 0.9, 1, kUout), 1}};
  CHECK(ids(rank(one)) == std::vector<std::string>{"z"});
}

TEST_CASE("filter and rank properties on random estimates") {
  Rng rng(12);
  const PredictionSet shapes[] = {PredictionSet::empty(), kDout, kUout, PredictionSet::both()};
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<CaseEstimates> in;
    const std::size_t n = rng.index(30);
    for (std::size_t i = 0; i < n; ++i) {
      in.push_back(est("c" + std::to_string(rng.index(1000)), rng.uniform(), rng.normal() * 0.3,
                       shapes[rng.index(4)]));
    }
    const CostParams costs{20, 1, 0.5};
    const auto kept = filter_candidates(in, costs);
    for (const auto& c : kept) {
      CHECK(c.estimates.p_uout > costs.tau);
      CHECK(c.estimates.pset == kUout);
      CHECK(c.estimates.cate > 0);
      CHECK(c.gain > 0);
      CHECK(c.gain == compute_gain(c.estimates.cate, costs));
    }
    std::vector<CaseEstimates> again;
    for (const auto& c : kept) again.push_back(c.estimates);
    CHECK(filter_candidates(again, costs).size() == kept.size());

    const auto ranked = rank(kept);
    CHECK(ranked.size() == kept.size());
    for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].gain >= ranked[i].gain);

    const CostParams scaled{2.5 * costs.c_uout, 2.5 * costs.c_in, costs.tau};
    CHECK(ids(rank(filter_candidates(in, scaled))) == ids(ranked));
  }
}

TEST_CASE("candidate CSV export") {
  const auto ranked = rank(filter_candidates(cost_example(), {}));
  std::ostringstream out;
  write_candidates_csv(out, ranked);
  std::istringstream in(out.str());
  CsvReader reader(in);
  std::vector<std::string> row;
  REQUIRE(reader.next(row));
  CHECK(row == std::vector<std::string>{"case_id", "p_uout", "cate", "pset", "gain"});
  REQUIRE(reader.next(row));
  CHECK(row == std::vector<std::string>{"C", "0.7", "6", "{uout}", "55"});
}
