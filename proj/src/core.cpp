#include "prpm/core.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <limits>
#include <locale>
#include <sstream>

namespace prpm {

std::string_view to_string(Outcome o) noexcept {
  return o == Outcome::Undesired ? "uout" : "dout";
}

Outcome parse_outcome(std::string_view text) {
  const auto t = trim(text);
  if (t == "uout" || t == "1") return Outcome::Undesired;
  if (t == "dout" || t == "0") return Outcome::Desired;
  data_error("invalid outcome label '" + std::string(t) + "'");
}

std::int64_t to_epoch_ms(Instant t) noexcept { return t.time_since_epoch().count(); }

Instant from_epoch_ms(std::int64_t ms) noexcept { return Instant{Duration{ms}}; }

Instant parse_timestamp(std::string_view text, std::string_view format) {
  using namespace std::chrono;
  const std::string raw(trim(text));
  std::istringstream in(raw);
  in.imbue(std::locale::classic());
  std::tm tm{};
  tm.tm_mday = 1;
  in >> std::get_time(&tm, std::string(format).c_str());
  if (in.fail()) data_error("unparseable timestamp '" + raw + "'");

  const year_month_day ymd{year{tm.tm_year + 1900}, month{static_cast<unsigned>(tm.tm_mon + 1)},
                           day{static_cast<unsigned>(tm.tm_mday)}};
  if (!ymd.ok() || tm.tm_hour > 23 || tm.tm_min > 59 || tm.tm_sec > 60) {
    data_error("invalid calendar value in timestamp '" + raw + "'");
  }
  Instant t = sys_days{ymd} + hours{tm.tm_hour} + minutes{tm.tm_min} + seconds{tm.tm_sec};

  std::string rest;
  std::getline(in, rest);
  std::string_view tail = trim(rest);
  if (!tail.empty() && tail.front() == '.') {
    std::size_t i = 1;
    long long frac_ms = 0;
    int digits = 0;
    while (i < tail.size() && std::isdigit(static_cast<unsigned char>(tail[i]))) {
      if (digits < 3) {
        frac_ms = frac_ms * 10 + (tail[i] - '0');
        ++digits;
      }
      ++i;
    }
    if (i == 1) data_error("invalid fractional seconds in timestamp '" + raw + "'");
    while (digits < 3) {
      frac_ms *= 10;
      ++digits;
    }
    t += milliseconds{frac_ms};
    tail.remove_prefix(i);
  }
  if (tail == "Z" || tail == "UTC") {
    tail = {};
  } else if (!tail.empty() && (tail.front() == '+' || tail.front() == '-')) {
    const int sign = tail.front() == '+' ? 1 : -1;
    std::string digits;
    for (char c : tail.substr(1)) {
      if (std::isdigit(static_cast<unsigned char>(c))) digits.push_back(c);
      else if (c != ':') data_error("invalid UTC offset in timestamp '" + raw + "'");
    }
    if (digits.size() != 4 && digits.size() != 2) {
      data_error("invalid UTC offset in timestamp '" + raw + "'");
    }
    const int hh = std::stoi(digits.substr(0, 2));
    const int mm = digits.size() == 4 ? std::stoi(digits.substr(2, 2)) : 0;
    t -= sign * (hours{hh} + minutes{mm});
    tail = {};
  }
  if (!tail.empty()) data_error("trailing characters in timestamp '" + raw + "'");
  return t;
}

std::string format_timestamp(Instant t, std::string_view format) {
  const std::time_t secs = std::chrono::floor<std::chrono::seconds>(t).time_since_epoch().count();
  std::tm tm{};
  gmtime_r(&secs, &tm);
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out << std::put_time(&tm, std::string(format).c_str());
  return out.str();
}

int day_of_week(Instant t) noexcept {
  const std::chrono::weekday wd{std::chrono::floor<std::chrono::days>(t)};
  return static_cast<int>(wd.iso_encoding()) - 1;
}

int hour_of_day(Instant t) noexcept {
  const auto day_start = std::chrono::floor<std::chrono::days>(t);
  return static_cast<int>(std::chrono::floor<std::chrono::hours>(t - day_start).count());
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_number(std::string_view text) {
  const auto t = trim(text);
  if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  if (t == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::string_view body = t;
  if (!body.empty() && body.front() == '+') body.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(body.data(), body.data() + body.size(), v);
  if (body.empty() || res.ec != std::errc{} || res.ptr != body.data() + body.size()) {
    data_error("invalid number '" + std::string(t) + "'");
  }
  return v;
}

long long parse_integer(std::string_view text) {
  const auto t = trim(text);
  long long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc{} || res.ptr != t.data() + t.size()) {
    data_error("invalid integer '" + std::string(t) + "'");
  }
  return v;
}

bool parse_bool(std::string_view text) {
  const auto t = trim(text);
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  data_error("invalid boolean '" + std::string(t) + "'");
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.emplace_back(trim(text.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view text) noexcept {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
  while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
  return text;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::index(std::uint64_t n) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r = engine_();
  while (r >= limit) r = engine_();
  return r % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u = 0.0;
  while (u <= 0.0) u = uniform();
  const double v = uniform();
  const double r = std::sqrt(-2.0 * std::log(u));
  const double theta = 2.0 * 3.14159265358979323846 * v;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::exponential(double mean) {
  double u = 0.0;
  while (u <= 0.0) u = uniform();
  return -mean * std::log(u);
}

}  // namespace prpm
