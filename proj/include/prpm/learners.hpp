// Gradient-boosted trees for P(uout | x), a two-model CATE estimator, a bagged
// ensemble for the total-uncertainty baseline, and ranking/classification metrics.
#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prpm/core.hpp"

namespace prpm {

/// Dense row-major feature matrix.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}
  static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  FeatureMatrix select_rows(std::span<const std::size_t> indices) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Probabilities {
  double uout = 0.5;
  double dout = 0.5;

  double of(Outcome o) const noexcept { return o == Outcome::Undesired ? uout : dout; }
  static Probabilities from_uout(double p) noexcept { return {p, 1.0 - p}; }
};

struct GbdtParams {
  int n_trees = 100;
  int max_depth = 4;
  int min_leaf = 20;
  double learning_rate = 0.1;
  double l2 = 1.0;         // added to the hessian sum in leaf values
  double subsample = 1.0;  // row fraction drawn per tree

  friend bool operator==(const GbdtParams&, const GbdtParams&) = default;
};

/// Axis-aligned regression tree. Samples with x[feature] <= threshold go left.
struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;

    friend bool operator==(const Node&, const Node&) = default;
  };
  std::vector<Node> nodes;

  double predict(std::span<const double> x) const;

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

class GbdtModel {
 public:
  GbdtModel() = default;
  GbdtModel(GbdtParams params, std::size_t n_features, double base_score, std::uint64_t seed,
            std::vector<RegressionTree> trees);

  /// base + sum of learning_rate * tree(x).
  double predict_raw(std::span<const double> x) const;
  Probabilities predict_proba(std::span<const double> x) const;

  std::size_t n_features() const noexcept { return n_features_; }
  double base_score() const noexcept { return base_score_; }
  const GbdtParams& params() const noexcept { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<RegressionTree>& trees() const noexcept { return trees_; }

  std::string to_json() const;
  static GbdtModel from_json(const std::string& text);

  friend bool operator==(const GbdtModel&, const GbdtModel&) = default;

 private:
  GbdtParams params_;
  std::size_t n_features_ = 0;
  double base_score_ = 0.0;
  std::uint64_t seed_ = 0;
  std::vector<RegressionTree> trees_;
};

/// Stagewise logistic-loss boosting. Each stage grows a tree on the residuals
/// y - p (variance-reduction splits, exact greedy over sorted values, ties to the
/// lowest feature index then lowest threshold) and uses Newton leaf values
/// sum(y - p) / (sum(p(1 - p)) + l2).
GbdtModel train_gbdt(const FeatureMatrix& x, std::span<const Outcome> y, const GbdtParams& params,
                     std::uint64_t seed);

double logistic_loss(const GbdtModel& model, const FeatureMatrix& x, std::span<const Outcome> y);

// ---------------------------------------------------------------------------

/// Two-model (T-learner) estimate of the reduction in P(uout) from intervening.
class CausalEstimator {
 public:
  CausalEstimator() = default;
  CausalEstimator(GbdtModel treated, GbdtModel control)
      : treated_(std::move(treated)), control_(std::move(control)) {}

  /// P(uout | x, T=0) - P(uout | x, T=1).
  double estimate_cate(std::span<const double> x) const;

  const GbdtModel& treated() const noexcept { return treated_; }
  const GbdtModel& control() const noexcept { return control_; }

  std::string to_json() const;
  static CausalEstimator from_json(const std::string& text);

 private:
  GbdtModel treated_;
  GbdtModel control_;
};

CausalEstimator train_tlearner(const FeatureMatrix& x, const std::vector<bool>& treatment,
                               std::span<const Outcome> y, const GbdtParams& params,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------

class BaggedEnsemble {
 public:
  BaggedEnsemble() = default;
  BaggedEnsemble(std::vector<GbdtModel> members, std::uint64_t seed)
      : members_(std::move(members)), seed_(seed) {}

  /// Mean member P(uout).
  double mean_uout(std::span<const double> x) const;
  /// Binary entropy (bits) of the mean member prediction.
  double total_uncertainty(std::span<const double> x) const;

  const std::vector<GbdtModel>& members() const noexcept { return members_; }

  std::string to_json() const;
  static BaggedEnsemble from_json(const std::string& text);

 private:
  std::vector<GbdtModel> members_;
  std::uint64_t seed_ = 0;
};

BaggedEnsemble train_ensemble(const FeatureMatrix& x, std::span<const Outcome> y, int members,
                              const GbdtParams& params, std::uint64_t seed);

/// -p log2 p - (1-p) log2 (1-p), with 0 log 0 = 0.
double binary_entropy(double p) noexcept;

// ---------------------------------------------------------------------------

/// Mann-Whitney AUC: P(score(uout) > score(dout)), ties count one half.
double auc(std::span<const double> scores, std::span<const Outcome> labels);

/// Binary F1 on the uout class; 0 when nothing is predicted positive.
double f_score(const std::vector<bool>& predicted_uout, std::span<const Outcome> labels);

/// F1 of the rule score > threshold.
double f_score_at(std::span<const double> scores, std::span<const Outcome> labels,
                  double threshold);

// ---------------------------------------------------------------------------

/// Externally produced P(uout) keyed by (case_id, prefix_len).
class ScoreTable {
 public:
  static ScoreTable read_csv(std::istream& in);
  void set(const std::string& case_id, std::size_t prefix_len, double p_uout);
  double at(const std::string& case_id, std::size_t prefix_len) const;
  std::size_t size() const noexcept { return scores_.size(); }

 private:
  std::map<std::pair<std::string, std::size_t>, double> scores_;
};

}  // namespace prpm
