#include "prpm/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "prpm/config.hpp"
#include "prpm/conformal.hpp"
#include "prpm/learners.hpp"
#include "prpm/log_ingest.hpp"
#include "prpm/replay.hpp"
#include "prpm/synthgen.hpp"

namespace prpm {

namespace fs = std::filesystem;

namespace {

struct Artifact {
  std::string text;
  std::string fingerprint;
};

Artifact read_artifact(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) missing_artifact("missing artifact " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Artifact a{buf.str(), {}};
  a.fingerprint = hex64(fnv1a64(a.text));
  return a;
}

void write_file(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) usage_error("cannot write " + path.string());
  out << text;
  if (!out) data_error("failed writing " + path.string());
}

template <typename F>
void write_with(const fs::path& path, F&& fill) {
  std::ostringstream buf;
  fill(buf);
  write_file(path, buf.str());
}

/// Resolved config (minus the worker count, which never changes results) plus
/// input fingerprints.
class Provenance {
 public:
  explicit Provenance(const RunConfig& cfg) {
    for (auto& line : cfg.resolved()) {
      if (!line.starts_with("jobs=")) lines_.push_back("config " + line);
    }
  }
  void add(const std::string& name, const Artifact& a) {
    lines_.push_back("artifact " + name + "=" + a.fingerprint);
  }
  const ProvenanceLines& lines() const { return lines_; }

 private:
  ProvenanceLines lines_;
};

std::vector<PrefixSample> load_dataset(const fs::path& path, Provenance& prov) {
  const auto a = read_artifact(path);
  prov.add(path.filename().string(), a);
  std::istringstream in(a.text);
  return read_dataset_csv(in);
}

/// P(uout) source: an imported score table when `scores` is set, else model.json.
struct Scorer {
  std::optional<GbdtModel> model;
  std::optional<ScoreTable> table;
  std::string fingerprint;

  UoutPredictor predictor() const {
    return table ? imported_predictor(*table) : model_predictor(*model);
  }
};

Scorer load_scorer(const RunConfig& cfg, Provenance& prov) {
  Scorer s;
  if (!cfg.get("scores").empty()) {
    const auto a = read_artifact(cfg.get("scores"));
    prov.add("scores", a);
    std::istringstream in(a.text);
    s.table = ScoreTable::read_csv(in);
    s.fingerprint = a.fingerprint;
  } else {
    const auto a = read_artifact(cfg.out_dir() / "model.json");
    prov.add("model.json", a);
    s.model = GbdtModel::from_json(a.text);
    s.fingerprint = a.fingerprint;
  }
  return s;
}

CausalEstimator load_causal(const RunConfig& cfg, Provenance& prov) {
  const auto a = read_artifact(cfg.out_dir() / "causal.json");
  prov.add("causal.json", a);
  return CausalEstimator::from_json(a.text);
}

BaggedEnsemble load_ensemble(const RunConfig& cfg, Provenance& prov) {
  const auto a = read_artifact(cfg.out_dir() / "ensemble.json");
  prov.add("ensemble.json", a);
  return BaggedEnsemble::from_json(a.text);
}

TieBreak tie_break(const RunConfig& cfg) {
  const auto& v = cfg.get("tie_break");
  if (v == "uout_first") return TieBreak::UoutFirst;
  if (v == "dout_first") return TieBreak::DoutFirst;
  usage_error("invalid tie_break '" + v + "'");
}

double checked_alpha(double a) {
  if (!(a > 0.0 && a < 1.0)) usage_error("alpha must lie in (0, 1)");
  return a;
}

FeatureMatrix features_of(std::span<const PrefixSample> samples) {
  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(s.features);
  return FeatureMatrix::from_rows(rows);
}

// ---------------------------------------------------------------------------

void cmd_prepare(const RunConfig& cfg, std::ostream& out) {
  if (cfg.get("log").empty()) usage_error("prepare needs a log (--log or log=)");
  const auto options = cfg.prepare_options();
  const auto schema = cfg.csv_schema();
  Provenance prov(cfg);
  const auto log_file = read_artifact(cfg.get("log"));
  std::istringstream in(log_file.text);
  ParseStats parse_stats;
  const EventLog raw = parse_csv(in, schema, &parse_stats);
  const PreparedData data = prepare_dataset(raw, options);

  const fs::path dir = cfg.out_dir();
  fs::create_directories(dir);
  const std::size_t dim = data.encoder.dimension();
  write_with(dir / "train.csv", [&](std::ostream& o) { write_dataset_csv(o, data.splits.train, dim); });
  write_with(dir / "cal.csv", [&](std::ostream& o) { write_dataset_csv(o, data.splits.cal, dim); });
  write_with(dir / "test.csv", [&](std::ostream& o) { write_dataset_csv(o, data.splits.test, dim); });
  write_file(dir / "encoder.json", data.encoder.to_json());

  std::ostringstream stats;
  stats << "rows=" << parse_stats.rows << '\n'
        << "dropped_bad_timestamps=" << parse_stats.dropped_bad_timestamps << '\n'
        << "traces=" << raw.traces.size() << '\n'
        << "dropped_outlier_events=" << data.cleaning.dropped_outlier_events << '\n'
        << "dropped_empty_traces=" << data.cleaning.dropped_empty_traces << '\n'
        << "dropped_incomplete_traces=" << data.cleaning.dropped_incomplete_traces << '\n'
        << "kept_traces=" << data.n_traces << '\n'
        << "max_prefix=" << data.max_prefix << '\n'
        << "features=" << dim << '\n'
        << "cases_train=" << data.splits.n_train << '\n'
        << "cases_cal=" << data.splits.n_cal << '\n'
        << "cases_test=" << data.splits.n_test << '\n'
        << "prefixes_train=" << data.splits.train.size() << '\n'
        << "prefixes_cal=" << data.splits.cal.size() << '\n'
        << "prefixes_test=" << data.splits.test.size() << '\n';
  write_file(dir / "prepare_stats.txt", stats.str());
  out << stats.str();
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto params = cfg.gbdt_params();
  const auto ensemble_size = cfg.count("ensemble_size");
  Provenance prov(cfg);
  const auto train = load_dataset(cfg.out_dir() / "train.csv", prov);
  if (train.empty()) data_error("training set is empty");
  const auto x = features_of(train);
  std::vector<Outcome> y;
  std::vector<bool> t;
  for (const auto& s : train) {
    y.push_back(s.outcome);
    t.push_back(s.treatment);
  }
  const auto seed = cfg.seed();
  const auto model = train_gbdt(x, y, params, seed);
  write_file(cfg.out_dir() / "model.json", model.to_json());
  const auto causal = train_tlearner(x, t, y, params, seed);
  write_file(cfg.out_dir() / "causal.json", causal.to_json());
  if (ensemble_size > 0) {
    const auto ens = train_ensemble(x, y, static_cast<int>(ensemble_size), params, seed);
    write_file(cfg.out_dir() / "ensemble.json", ens.to_json());
  }
  out << "trained on " << train.size() << " prefixes; log loss "
      << format_number(logistic_loss(model, x, y)) << '\n';
}

void cmd_calibrate(const RunConfig& cfg, std::ostream& out) {
  const auto method = parse_conformal_method(cfg.get("method"));
  const double alpha = checked_alpha(cfg.number("alpha"));
  const auto ties = tie_break(cfg);
  Provenance prov(cfg);
  const auto cal = load_dataset(cfg.out_dir() / "cal.csv", prov);
  const auto scorer = load_scorer(cfg, prov);
  const auto predict = scorer.predictor();
  std::vector<double> p;
  std::vector<Outcome> y;
  for (const auto& s : cal) {
    p.push_back(predict(s));
    y.push_back(s.outcome);
  }
  auto calibrator = calibrate(method, p, y, alpha, ties);
  calibrator.model_fingerprint = scorer.fingerprint;
  write_file(cfg.out_dir() / "calibration.txt", calibrator.to_text());
  out << calibrator.to_text();
}

void cmd_replay(const RunConfig& cfg, std::ostream& out) {
  const auto policy = PolicyKind::parse(cfg.get("policy"));
  const auto options = cfg.replay_options();
  ResourcePool pool(cfg.count("capacity"), cfg.pool_mode(), cfg.block_duration());
  Provenance prov(cfg);

  std::vector<ScoredPrefix> stream;
  std::string scorer_fingerprint;
  bool psets_supplied = false;
  if (!cfg.get("estimates").empty()) {
    const auto a = read_artifact(cfg.get("estimates"));
    prov.add("estimates", a);
    std::istringstream in(a.text);
    stream = read_estimates_csv(in);
    psets_supplied = !stream.empty() &&
                     std::all_of(stream.begin(), stream.end(), [](const auto& p) { return p.has_pset; });
  } else {
    const auto test = load_dataset(cfg.out_dir() / "test.csv", prov);
    const auto scorer = load_scorer(cfg, prov);
    scorer_fingerprint = scorer.fingerprint;
    const auto causal = load_causal(cfg, prov);
    std::optional<BaggedEnsemble> ensemble;
    if (policy.kind == PolicyKind::Kind::PredictiveUncertainty) ensemble = load_ensemble(cfg, prov);
    stream = score_prefixes(test, scorer.predictor(), &causal, ensemble ? &*ensemble : nullptr);
  }

  std::optional<ConformalCalibrator> calibrator;
  if (policy.is_conformal() && !psets_supplied) {
    const auto a = read_artifact(cfg.out_dir() / "calibration.txt");
    prov.add("calibration.txt", a);
    calibrator = ConformalCalibrator::from_text(a.text);
    if (calibrator->method != policy.method) {
      usage_error("policy " + policy.to_string() + " does not match the calibration method " +
                  std::string(to_string(calibrator->method)));
    }
    if (!scorer_fingerprint.empty() && calibrator->model_fingerprint != scorer_fingerprint) {
      data_error("calibration.txt was produced for a different model; rerun calibrate");
    }
  }

  const auto result =
      replay(std::move(stream), policy, calibrator ? &*calibrator : nullptr, options, std::move(pool));
  const std::vector<ReplayReport> reports = {result.report};
  write_with(cfg.out_dir() / "report.csv",
             [&](std::ostream& o) { write_report_csv(o, reports, prov.lines()); });
  write_with(cfg.out_dir() / "ledger.csv",
             [&](std::ostream& o) { write_ledger_csv(o, result.ledger, prov.lines()); });
  out << "policy=" << policy.to_string() << " allocated=" << result.report.n_allocated
      << " correct=" << result.report.n_correct
      << " total_gain=" << format_number(result.report.total_gain) << '\n';
}

void cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  SweepConfig sc;
  for (const auto& p : cfg.list("policies")) sc.policies.push_back(PolicyKind::parse(p));
  for (const double a : cfg.numbers("alphas")) sc.alphas.push_back(checked_alpha(a));
  for (const auto& c : cfg.list("capacities")) {
    const auto v = parse_integer(c);
    if (v < 0) usage_error("capacities must be non-negative");
    sc.capacities.push_back(static_cast<std::size_t>(v));
  }
  sc.options = cfg.replay_options();
  sc.pool_mode = cfg.pool_mode();
  sc.block = cfg.block_duration();
  sc.ties = tie_break(cfg);
  sc.jobs = static_cast<int>(cfg.integer("jobs"));
  if (sc.jobs < 1) usage_error("jobs must be positive");

  Provenance prov(cfg);
  const auto cal = load_dataset(cfg.out_dir() / "cal.csv", prov);
  const auto test = load_dataset(cfg.out_dir() / "test.csv", prov);
  const auto scorer = load_scorer(cfg, prov);
  const auto causal = load_causal(cfg, prov);
  std::optional<BaggedEnsemble> ensemble;
  const bool needs_ensemble = std::any_of(sc.policies.begin(), sc.policies.end(), [](const auto& p) {
    return p.kind == PolicyKind::Kind::PredictiveUncertainty;
  });
  if (needs_ensemble) ensemble = load_ensemble(cfg, prov);

  const auto predict = scorer.predictor();
  std::vector<double> cal_p;
  std::vector<Outcome> cal_y;
  for (const auto& s : cal) {
    cal_p.push_back(predict(s));
    cal_y.push_back(s.outcome);
  }
  const auto stream = score_prefixes(test, predict, &causal, ensemble ? &*ensemble : nullptr);
  const auto result = sweep(stream, cal_p, cal_y, sc);
  write_with(cfg.out_dir() / "sweep.csv",
             [&](std::ostream& o) { write_sweep_csv(o, result, prov.lines()); });
  out << "reports=" << result.reports.size() << '\n';
  for (const auto& [m, a] : result.best_alpha) {
    out << "best_alpha[" << to_string(m) << "]=" << format_number(a) << '\n';
  }
}

void cmd_synth(const RunConfig& cfg, const std::string& synth_config,
               std::optional<std::size_t> n_cases, std::ostream& out) {
  SynthConfig sc;
  if (!synth_config.empty()) sc = SynthConfig::from_text(read_artifact(synth_config).text);
  if (n_cases) sc.n_cases = *n_cases;
  sc.seed = cfg.seed();
  const auto synth = generate_log(sc);

  const fs::path dir = cfg.out_dir();
  fs::create_directories(dir);
  const auto schema = synth_csv_schema(sc);
  write_with(dir / "log.csv", [&](std::ostream& o) { write_log_csv(o, synth.log, schema); });
  write_with(dir / "ground_truth.csv", [&](std::ostream& o) { write_ground_truth_csv(o, synth); });
  write_file(dir / "synth.cfg", sc.to_text());

  // A run config that prepares the generated log.
  std::ostringstream prep;
  prep << "log=" << (dir / "log.csv").string() << '\n'
       << "resource_col=" << schema.resource_column << '\n'
       << "numeric_attrs=" << join(schema.numeric_attrs, ",") << '\n'
       << "case_attrs=" << join(schema.case_categorical_attrs, ",") << '\n'
       << "case_numeric_attrs=" << join(schema.case_numeric_attrs, ",") << '\n'
       << "outcome_rules=Approved:dout,Canceled:uout\n"
       << "treatment_activity=Create_Offer\n";
  write_file(dir / "prepare.cfg", prep.str());
  out << "generated " << synth.log.traces.size() << " cases in " << dir.string() << '\n';
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return kExitUsage;
    case ErrorKind::MissingArtifact: return kExitMissingArtifact;
    case ErrorKind::Data: return kExitData;
  }
  return kExitData;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conformal prescriptive process monitoring", "prpm"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<long long> seed;
  std::optional<std::string> out_dir;
  std::optional<int> jobs;
  std::vector<std::string> assignments;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out-dir", out_dir, "artifact directory");
  app.add_option("--jobs", jobs, "parallel sweep workers")->check(CLI::PositiveNumber);
  app.add_option("--set", assignments, "override a config key (key=value)");

  std::map<std::string, std::optional<std::string>> flags;
  const auto flag = [&](CLI::App* cmd, const std::string& name, const std::string& key,
                        const std::string& help) {
    cmd->add_option(name, flags[key], help);
  };

  auto* prepare = app.add_subcommand("prepare", "parse, clean, label, encode and split a log");
  flag(prepare, "--log", "log", "event log CSV");
  auto* train = app.add_subcommand("train", "fit the outcome, causal and ensemble models");
  auto* calibrate_cmd = app.add_subcommand("calibrate", "calibrate prediction sets");
  flag(calibrate_cmd, "--method", "method", "naive, balanced or adaptive");
  flag(calibrate_cmd, "--alpha", "alpha", "significance level");
  flag(calibrate_cmd, "--scores", "scores", "imported P(uout) CSV");
  auto* replay_cmd = app.add_subcommand("replay", "replay the test fold under a policy");
  flag(replay_cmd, "--policy", "policy", "allocation policy");
  flag(replay_cmd, "--capacity", "capacity", "number of resources");
  flag(replay_cmd, "--pool-mode", "pool_mode", "fixed_budget or renewable");
  flag(replay_cmd, "--estimates", "estimates", "precomputed estimates CSV");
  flag(replay_cmd, "--scores", "scores", "imported P(uout) CSV");
  auto* sweep_cmd = app.add_subcommand("sweep", "sweep policies, alphas and capacities");
  flag(sweep_cmd, "--policies", "policies", "comma-separated policies");
  flag(sweep_cmd, "--alphas", "alphas", "comma-separated significance levels");
  flag(sweep_cmd, "--capacities", "capacities", "comma-separated resource counts");
  flag(sweep_cmd, "--scores", "scores", "imported P(uout) CSV");
  auto* synth = app.add_subcommand("synth", "generate a synthetic event log");
  std::string synth_config;
  std::optional<std::size_t> n_cases;
  synth->add_option("--synth-config", synth_config, "generator key=value file");
  synth->add_option("--n-cases", n_cases, "number of cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& a : assignments) cfg.set_assignment(a);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (out_dir) cfg.set("out_dir", *out_dir);
    if (jobs) cfg.set("jobs", std::to_string(*jobs));
    for (const auto& [key, value] : flags) {
      if (value) cfg.set(key, *value);
    }

    if (prepare->parsed()) cmd_prepare(cfg, out);
    else if (train->parsed()) cmd_train(cfg, out);
    else if (calibrate_cmd->parsed()) cmd_calibrate(cfg, out);
    else if (replay_cmd->parsed()) cmd_replay(cfg, out);
    else if (sweep_cmd->parsed()) cmd_sweep(cfg, out);
    else if (synth->parsed()) cmd_synth(cfg, synth_config, n_cases, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace prpm
