// Flat key=value run configuration with documented defaults.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "prpm/conformal.hpp"
#include "prpm/learners.hpp"
#include "prpm/log_ingest.hpp"
#include "prpm/policy.hpp"
#include "prpm/replay.hpp"

namespace prpm {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every recognised key, in documentation order.
const std::vector<ConfigKey>& config_keys();

class RunConfig {
 public:
  RunConfig();

  /// Reads "key = value" lines; '#' starts a comment line. Unknown keys are usage errors.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text);
  void set(const std::string& key, const std::string& value);
  /// Parses "key=value".
  void set_assignment(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  long long integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // non-negative integer
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;

  std::filesystem::path out_dir() const { return get("out_dir"); }

  /// "key=value" for every key, sorted by key.
  std::vector<std::string> resolved() const;

  // Typed views.
  CsvSchema csv_schema() const;
  PrepareOptions prepare_options() const;
  GbdtParams gbdt_params() const;
  CostParams cost_params() const;
  ReplayOptions replay_options() const;
  PoolMode pool_mode() const;
  Duration block_duration() const;
  std::uint64_t seed() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace prpm
