// Shared vocabulary types and small utilities used across the prpm library.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prpm {

/// Error categories. The CLI maps these onto process exit codes.
enum class ErrorKind : std::uint8_t {
  Usage,            // bad flag, config value or violated precondition
  MissingArtifact,  // an input file that should exist does not
  Data,             // malformed or degenerate input data
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void usage_error(const std::string& msg) { throw Error(ErrorKind::Usage, msg); }
[[noreturn]] inline void data_error(const std::string& msg) { throw Error(ErrorKind::Data, msg); }
[[noreturn]] inline void missing_artifact(const std::string& msg) {
  throw Error(ErrorKind::MissingArtifact, msg);
}

/// Binary case outcome. Undesired is the outcome interventions try to prevent.
enum class Outcome : std::uint8_t { Desired = 0, Undesired = 1 };

std::string_view to_string(Outcome o) noexcept;
/// Accepts "dout"/"uout" (and "0"/"1").
Outcome parse_outcome(std::string_view text);

using Duration = std::chrono::milliseconds;
using Instant = std::chrono::sys_time<Duration>;

std::int64_t to_epoch_ms(Instant t) noexcept;
Instant from_epoch_ms(std::int64_t ms) noexcept;

/// Parses `text` with a strftime-style `format` (as understood by std::get_time).
/// After the formatted part, an optional fractional-seconds suffix (".123"),
/// and an optional "Z" or "+hh:mm"/"-hh:mm" offset are accepted. The result is UTC.
Instant parse_timestamp(std::string_view text, std::string_view format);
/// Formats a UTC instant with strftime tokens (sub-second part dropped).
std::string format_timestamp(Instant t, std::string_view format);

/// Monday = 0 ... Sunday = 6.
int day_of_week(Instant t) noexcept;
int hour_of_day(Instant t) noexcept;

/// Shortest text form that parses back to the same double; "inf", "-inf", "nan".
std::string format_number(double v);
double parse_number(std::string_view text);
long long parse_integer(std::string_view text);
bool parse_bool(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view text) noexcept;
std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::string hex64(std::uint64_t v);

/// Deterministic random source. Draws are implemented here rather than with the
/// <random> distributions so that streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  double exponential(double mean);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace prpm
