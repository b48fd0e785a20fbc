#include "prpm/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <nlohmann/json.hpp>

#include "prpm/csv.hpp"

namespace prpm {

namespace {

using json = nlohmann::json;

constexpr double kMinSplitGain = 1e-12;

double label_value(Outcome o) { return o == Outcome::Undesired ? 1.0 : 0.0; }

void check_params(const GbdtParams& p) {
  if (p.n_trees < 0) usage_error("n_trees must be >= 0");
  if (p.max_depth < 0) usage_error("max_depth must be >= 0");
  if (p.min_leaf < 1) usage_error("min_leaf must be >= 1");
  if (!(p.learning_rate > 0.0)) usage_error("learning_rate must be > 0");
  if (!(p.l2 >= 0.0)) usage_error("l2 must be >= 0");
  if (!(p.subsample > 0.0 && p.subsample <= 1.0)) usage_error("subsample must lie in (0, 1]");
}

/// Grows one tree level by level. Every level scans each presorted feature
/// column once, accumulating left-side statistics for all open nodes at once.
class TreeGrower {
 public:
  TreeGrower(const std::vector<std::vector<double>>& columns,
             const std::vector<std::vector<std::uint32_t>>& order, const GbdtParams& params)
      : columns_(columns), order_(order), params_(params) {}

  RegressionTree grow(std::span<const double> grad, std::span<const double> hess,
                      const std::vector<char>& in_bag) {
    const std::size_t n = grad.size();
    RegressionTree tree;
    tree.nodes.emplace_back();
    node_of_.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) node_of_[i] = 0;
    }
    std::vector<int> frontier = {0};

    for (int depth = 0; depth < params_.max_depth && !frontier.empty(); ++depth) {
      std::vector<int> slot_of(tree.nodes.size(), -1);
      for (std::size_t k = 0; k < frontier.size(); ++k) slot_of[frontier[k]] = static_cast<int>(k);

      std::vector<double> total_sum(frontier.size(), 0.0);
      std::vector<std::size_t> total_cnt(frontier.size(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        if (node_of_[i] < 0) continue;
        const int k = slot_of[node_of_[i]];
        if (k < 0) continue;
        total_sum[k] += grad[i];
        ++total_cnt[k];
      }

      struct Best {
        double gain = kMinSplitGain;
        int feature = -1;
        double threshold = 0.0;
      };
      struct Acc {
        std::size_t cnt = 0;
        double sum = 0.0;
        double last = 0.0;
      };
      std::vector<Best> best(frontier.size());
      std::vector<Acc> acc(frontier.size());
      const auto min_leaf = static_cast<std::size_t>(params_.min_leaf);

      for (std::size_t f = 0; f < columns_.size(); ++f) {
        std::fill(acc.begin(), acc.end(), Acc{});
        const auto& col = columns_[f];
        for (const std::uint32_t idx : order_[f]) {
          const int node = node_of_[idx];
          if (node < 0) continue;
          const int k = slot_of[node];
          if (k < 0) continue;
          Acc& a = acc[k];
          const double v = col[idx];
          if (a.cnt > 0 && v != a.last) {
            const std::size_t nl = a.cnt;
            const std::size_t nr = total_cnt[k] - nl;
            if (nl >= min_leaf && nr >= min_leaf) {
              const double sr = total_sum[k] - a.sum;
              const double gain = a.sum * a.sum / static_cast<double>(nl) +
                                  sr * sr / static_cast<double>(nr) -
                                  total_sum[k] * total_sum[k] / static_cast<double>(total_cnt[k]);
              if (gain > best[k].gain) best[k] = {gain, static_cast<int>(f), a.last};
            }
          }
          ++a.cnt;
          a.sum += grad[idx];
          a.last = v;
        }
      }

      std::vector<int> next;
      std::vector<char> split_node(tree.nodes.size(), 0);
      for (std::size_t k = 0; k < frontier.size(); ++k) {
        if (best[k].feature < 0) continue;
        const int id = frontier[k];
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& node = tree.nodes[id];
        node.feature = best[k].feature;
        node.threshold = best[k].threshold;
        node.left = left;
        node.right = left + 1;
        split_node[id] = 1;
        next.push_back(left);
        next.push_back(left + 1);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const int id = node_of_[i];
        if (id < 0 || !split_node[id]) continue;
        const auto& node = tree.nodes[id];
        node_of_[i] = columns_[node.feature][i] <= node.threshold ? node.left : node.right;
      }
      frontier = std::move(next);
    }

    std::vector<double> g_sum(tree.nodes.size(), 0.0);
    std::vector<double> h_sum(tree.nodes.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (node_of_[i] < 0) continue;
      g_sum[node_of_[i]] += grad[i];
      h_sum[node_of_[i]] += hess[i];
    }
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      auto& node = tree.nodes[id];
      if (node.feature >= 0) continue;
      const double denom = h_sum[id] + params_.l2;
      node.value = denom > 0.0 ? g_sum[id] / denom : 0.0;
    }
    return tree;
  }

 private:
  const std::vector<std::vector<double>>& columns_;
  const std::vector<std::vector<std::uint32_t>>& order_;
  const GbdtParams& params_;
  std::vector<int> node_of_;
};

json model_to_json(const GbdtModel& m) {
  json trees = json::array();
  for (const auto& t : m.trees()) {
    json feature = json::array(), threshold = json::array(), left = json::array(),
         right = json::array(), value = json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
    }
    trees.push_back({{"feature", feature},
                     {"threshold", threshold},
                     {"left", left},
                     {"right", right},
                     {"value", value}});
  }
  const auto& p = m.params();
  return {{"format", "prpm-gbdt"},
          {"version", 1},
          {"params",
           {{"n_trees", p.n_trees},
            {"max_depth", p.max_depth},
            {"min_leaf", p.min_leaf},
            {"learning_rate", p.learning_rate},
            {"l2", p.l2},
            {"subsample", p.subsample}}},
          {"n_features", m.n_features()},
          {"base_score", m.base_score()},
          {"seed", m.seed()},
          {"trees", trees}};
}

GbdtModel model_from_json(const json& j) {
  if (j.at("format") != "prpm-gbdt" || j.at("version") != 1) {
    data_error("not a prpm gbdt model (version 1)");
  }
  GbdtParams p;
  const auto& jp = j.at("params");
  p.n_trees = jp.at("n_trees");
  p.max_depth = jp.at("max_depth");
  p.min_leaf = jp.at("min_leaf");
  p.learning_rate = jp.at("learning_rate");
  p.l2 = jp.at("l2");
  p.subsample = jp.at("subsample");
  const std::size_t n_features = j.at("n_features");
  std::vector<RegressionTree> trees;
  for (const auto& jt : j.at("trees")) {
    RegressionTree t;
    const auto& feature = jt.at("feature");
    const std::size_t n = feature.size();
    if (jt.at("threshold").size() != n || jt.at("left").size() != n ||
        jt.at("right").size() != n || jt.at("value").size() != n || n == 0) {
      data_error("malformed tree in model artifact");
    }
    for (std::size_t i = 0; i < n; ++i) {
      RegressionTree::Node node;
      node.feature = feature[i];
      node.threshold = jt["threshold"][i];
      node.left = jt["left"][i];
      node.right = jt["right"][i];
      node.value = jt["value"][i];
      const auto in_range = [n](int c) { return c > 0 && static_cast<std::size_t>(c) < n; };
      if (node.feature >= 0 && (static_cast<std::size_t>(node.feature) >= n_features ||
                                !in_range(node.left) || !in_range(node.right))) {
        data_error("tree node references an invalid feature or child");
      }
      t.nodes.push_back(node);
    }
    trees.push_back(std::move(t));
  }
  return GbdtModel(p, n_features, j.at("base_score"), j.at("seed"), std::move(trees));
}

template <typename F>
auto parse_json_artifact(const std::string& text, const char* what, F&& body) {
  try {
    return body(json::parse(text));
  } catch (const json::exception& e) {
    data_error(std::string("malformed ") + what + " artifact: " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

FeatureMatrix FeatureMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  FeatureMatrix m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) data_error("ragged feature rows");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
  FeatureMatrix m(indices.size(), cols_);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = row(indices[k]);
    std::copy(src.begin(), src.end(), m.row(k).begin());
  }
  return m;
}

double RegressionTree::predict(std::span<const double> x) const {
  std::size_t id = 0;
  while (nodes[id].feature >= 0) {
    const auto& n = nodes[id];
    id = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                         : n.right);
  }
  return nodes[id].value;
}

GbdtModel::GbdtModel(GbdtParams params, std::size_t n_features, double base_score,
                     std::uint64_t seed, std::vector<RegressionTree> trees)
    : params_(params),
      n_features_(n_features),
      base_score_(base_score),
      seed_(seed),
      trees_(std::move(trees)) {}

double GbdtModel::predict_raw(std::span<const double> x) const {
  if (x.size() != n_features_) {
    data_error("feature dimension mismatch: model expects " + std::to_string(n_features_) +
               ", got " + std::to_string(x.size()));
  }
  double raw = base_score_;
  for (const auto& t : trees_) raw += params_.learning_rate * t.predict(x);
  return raw;
}

Probabilities GbdtModel::predict_proba(std::span<const double> x) const {
  return Probabilities::from_uout(sigmoid(predict_raw(x)));
}

std::string GbdtModel::to_json() const { return model_to_json(*this).dump(); }

GbdtModel GbdtModel::from_json(const std::string& text) {
  return parse_json_artifact(text, "model", [](const json& j) { return model_from_json(j); });
}

GbdtModel train_gbdt(const FeatureMatrix& x, std::span<const Outcome> y, const GbdtParams& params,
                     std::uint64_t seed) {
  check_params(params);
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (y.size() != n) usage_error("label count does not match the number of rows");
  if (n < 2) data_error("need at least two training rows");
  const auto positives = static_cast<std::size_t>(
      std::count(y.begin(), y.end(), Outcome::Undesired));
  if (positives == 0 || positives == n) data_error("degenerate labels");

  const double prevalence = static_cast<double>(positives) / static_cast<double>(n);
  const double base = std::log(prevalence / (1.0 - prevalence));

  std::vector<std::vector<double>> columns(d, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < d; ++f) columns[f][i] = x(i, f);
  }
  std::vector<std::vector<std::uint32_t>> order(d, std::vector<std::uint32_t>(n));
  for (std::size_t f = 0; f < d; ++f) {
    auto& o = order[f];
    std::iota(o.begin(), o.end(), 0U);
    const auto& col = columns[f];
    std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) {
      return col[a] < col[b];
    });
  }

  std::vector<double> raw(n, base), grad(n), hess(n);
  std::vector<char> in_bag(n, 1);
  Rng rng(seed);
  TreeGrower grower(columns, order, params);
  std::vector<RegressionTree> trees;
  trees.reserve(static_cast<std::size_t>(params.n_trees));
  std::vector<double> row(d);
  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(raw[i]);
      grad[i] = label_value(y[i]) - p;
      hess[i] = p * (1.0 - p);
    }
    if (params.subsample < 1.0) {
      for (std::size_t i = 0; i < n; ++i) in_bag[i] = rng.bernoulli(params.subsample) ? 1 : 0;
    }
    trees.push_back(grower.grow(grad, hess, in_bag));
    const auto& tree = trees.back();
    for (std::size_t i = 0; i < n; ++i) {
      raw[i] += params.learning_rate * tree.predict(x.row(i));
    }
  }
  return GbdtModel(params, d, base, seed, std::move(trees));
}

double logistic_loss(const GbdtModel& model, const FeatureMatrix& x, std::span<const Outcome> y) {
  if (x.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double z = model.predict_raw(x.row(i));
    // log(1 + e^z) - y z, evaluated stably.
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += softplus - label_value(y[i]) * z;
  }
  return total / static_cast<double>(x.rows());
}

// ---------------------------------------------------------------------------

double CausalEstimator::estimate_cate(std::span<const double> x) const {
  return control_.predict_proba(x).uout - treated_.predict_proba(x).uout;
}

std::string CausalEstimator::to_json() const {
  return json{{"format", "prpm-tlearner"},
              {"version", 1},
              {"treated", model_to_json(treated_)},
              {"control", model_to_json(control_)}}
      .dump();
}

CausalEstimator CausalEstimator::from_json(const std::string& text) {
  return parse_json_artifact(text, "causal model", [](const json& j) {
    if (j.at("format") != "prpm-tlearner" || j.at("version") != 1) {
      data_error("not a prpm T-learner artifact (version 1)");
    }
    return CausalEstimator(model_from_json(j.at("treated")), model_from_json(j.at("control")));
  });
}

CausalEstimator train_tlearner(const FeatureMatrix& x, const std::vector<bool>& treatment,
                               std::span<const Outcome> y, const GbdtParams& params,
                               std::uint64_t seed) {
  if (treatment.size() != x.rows() || y.size() != x.rows()) {
    usage_error("treatment/label counts do not match the number of rows");
  }
  std::vector<std::size_t> rows[2];
  for (std::size_t i = 0; i < x.rows(); ++i) rows[treatment[i] ? 1 : 0].push_back(i);
  const auto fit = [&](int stratum, const char* name, std::uint64_t s) {
    const auto& idx = rows[stratum];
    std::vector<Outcome> ys;
    ys.reserve(idx.size());
    for (auto i : idx) ys.push_back(y[i]);
    const auto pos = std::count(ys.begin(), ys.end(), Outcome::Undesired);
    if (ys.size() < 2 || pos == 0 || static_cast<std::size_t>(pos) == ys.size()) {
      data_error(std::string(name) + " stratum is empty or contains a single outcome class");
    }
    return train_gbdt(x.select_rows(idx), ys, params, s);
  };
  auto treated = fit(1, "treated", seed);
  auto control = fit(0, "control", seed + 1);
  return CausalEstimator(std::move(treated), std::move(control));
}

// ---------------------------------------------------------------------------

double binary_entropy(double p) noexcept {
  const auto term = [](double q) { return q <= 0.0 ? 0.0 : -q * std::log2(q); };
  return term(p) + term(1.0 - p);
}

double BaggedEnsemble::mean_uout(std::span<const double> x) const {
  if (members_.empty()) usage_error("empty ensemble");
  double sum = 0.0;
  for (const auto& m : members_) sum += m.predict_proba(x).uout;
  return sum / static_cast<double>(members_.size());
}

double BaggedEnsemble::total_uncertainty(std::span<const double> x) const {
  return binary_entropy(mean_uout(x));
}

std::string BaggedEnsemble::to_json() const {
  json members = json::array();
  for (const auto& m : members_) members.push_back(model_to_json(m));
  return json{{"format", "prpm-ensemble"}, {"version", 1}, {"seed", seed_}, {"members", members}}
      .dump();
}

BaggedEnsemble BaggedEnsemble::from_json(const std::string& text) {
  return parse_json_artifact(text, "ensemble", [](const json& j) {
    if (j.at("format") != "prpm-ensemble" || j.at("version") != 1) {
      data_error("not a prpm ensemble artifact (version 1)");
    }
    std::vector<GbdtModel> members;
    for (const auto& m : j.at("members")) members.push_back(model_from_json(m));
    if (members.size() < 2) data_error("ensemble artifact has fewer than two members");
    return BaggedEnsemble(std::move(members), j.at("seed").get<std::uint64_t>());
  });
}

BaggedEnsemble train_ensemble(const FeatureMatrix& x, std::span<const Outcome> y, int members,
                              const GbdtParams& params, std::uint64_t seed) {
  if (members < 2) usage_error("an ensemble needs at least two members");
  if (y.size() != x.rows()) usage_error("label count does not match the number of rows");
  const std::size_t n = x.rows();
  Rng rng(seed);
  std::vector<GbdtModel> out;
  std::vector<std::size_t> idx(n);
  std::vector<Outcome> ys(n);
  for (int b = 0; b < members; ++b) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      for (std::size_t k = 0; k < n; ++k) {
        idx[k] = rng.index(n);
        ys[k] = y[idx[k]];
      }
      const auto pos = static_cast<std::size_t>(std::count(ys.begin(), ys.end(), Outcome::Undesired));
      ok = pos > 0 && pos < n;
    }
    if (!ok) data_error("degenerate labels");
    out.push_back(train_gbdt(x.select_rows(idx), ys, params, seed + 1 + static_cast<std::uint64_t>(b)));
  }
  return BaggedEnsemble(std::move(out), seed);
}

// ---------------------------------------------------------------------------

double auc(std::span<const double> scores, std::span<const Outcome> labels) {
  if (scores.size() != labels.size()) usage_error("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == Outcome::Undesired) {
        rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) data_error("AUC needs both outcome classes");
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

double f_score(const std::vector<bool>& predicted_uout, std::span<const Outcome> labels) {
  if (predicted_uout.size() != labels.size()) usage_error("predictions and labels differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool actual = labels[i] == Outcome::Undesired;
    if (predicted_uout[i] && actual) ++tp;
    else if (predicted_uout[i]) ++fp;
    else if (actual) ++fn;
  }
  if (tp + fp == 0 || tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double f_score_at(std::span<const double> scores, std::span<const Outcome> labels,
                  double threshold) {
  std::vector<bool> predicted(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) predicted[i] = scores[i] > threshold;
  return f_score(predicted, labels);
}

// ---------------------------------------------------------------------------

ScoreTable ScoreTable::read_csv(std::istream& in) {
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) data_error("score file has no header");
  int c_case = -1, c_len = -1, c_p = -1;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const auto name = trim(row[i]);
    if (name == "case_id") c_case = static_cast<int>(i);
    if (name == "prefix_len") c_len = static_cast<int>(i);
    if (name == "p_uout") c_p = static_cast<int>(i);
  }
  if (c_case < 0 || c_len < 0 || c_p < 0) {
    data_error("score file needs case_id, prefix_len and p_uout columns");
  }
  const std::size_t n_cols = row.size();
  ScoreTable table;
  while (reader.next(row)) {
    if (row.size() != n_cols) {
      data_error("line " + std::to_string(reader.line()) + ": wrong number of fields");
    }
    const double p = parse_number(row[c_p]);
    if (!(p >= 0.0 && p <= 1.0)) {
      data_error("line " + std::to_string(reader.line()) + ": p_uout outside [0, 1]");
    }
    table.set(row[c_case], static_cast<std::size_t>(parse_integer(row[c_len])), p);
  }
  return table;
}

void ScoreTable::set(const std::string& case_id, std::size_t prefix_len, double p_uout) {
  scores_[{case_id, prefix_len}] = p_uout;
}

double ScoreTable::at(const std::string& case_id, std::size_t prefix_len) const {
  const auto it = scores_.find({case_id, prefix_len});
  if (it == scores_.end()) {
    data_error("no imported score for case " + case_id + " prefix " + std::to_string(prefix_len));
  }
  return it->second;
}

}  // namespace prpm
