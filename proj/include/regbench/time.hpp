#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "regbench/error.hpp"

namespace regbench {

/// UTC instant with one-second resolution.
using Timestamp = std::chrono::sys_seconds;

inline constexpr int kStepHours = 6;
inline constexpr std::chrono::hours kStep{kStepHours};

struct CivilTime {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;
  int hour = 0;
  int minute = 0;
  int second = 0;
};

inline Timestamp make_time(int year, unsigned month, unsigned day, int hour = 0, int minute = 0, int second = 0) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok()) {
    throw Error(ErrorKind::InvalidConfig, "invalid calendar date " + std::to_string(year) + "-" +
                                              std::to_string(month) + "-" + std::to_string(day));
  }
  return sys_days{ymd} + hours{hour} + minutes{minute} + seconds{second};
}

inline CivilTime civil(Timestamp t) {
  using namespace std::chrono;
  const auto day_start = floor<days>(t);
  const year_month_day ymd{day_start};
  const auto secs = (t - day_start).count();
  return CivilTime{int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()), int(secs / 3600),
                   int((secs / 60) % 60), int(secs % 60)};
}

inline Timestamp from_unix(std::int64_t seconds) { return Timestamp{std::chrono::seconds{seconds}}; }
inline std::int64_t to_unix(Timestamp t) { return t.time_since_epoch().count(); }

/// True when the instant falls on 00, 06, 12 or 18 UTC exactly.
inline bool is_step_aligned(Timestamp t) {
  const auto c = civil(t);
  return c.minute == 0 && c.second == 0 && c.hour % kStepHours == 0;
}

inline bool is_leap_year(int year) { return std::chrono::year{year}.is_leap(); }

/// "YYYY-MM-DDTHH:MM:SSZ"
inline std::string format_iso(Timestamp t) {
  const auto c = civil(t);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", c.year, c.month, c.day, c.hour, c.minute,
                c.second);
  return buf;
}

/// "YYYYMMDDHH", used for frame file names.
inline std::string format_compact(Timestamp t) {
  const auto c = civil(t);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d%02u%02u%02d", c.year, c.month, c.day, c.hour);
  return buf;
}

/// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH", "YYYY-MM-DDTHH:MM" and "YYYY-MM-DDTHH:MM:SS", each with an optional
/// trailing 'Z'.
inline Timestamp parse_iso(std::string_view text) {
  std::string s(text);
  if (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.pop_back();
  int y = 0, h = 0, mi = 0, se = 0;
  unsigned mo = 0, d = 0;
  int consumed = 0;
  const int n = std::sscanf(s.c_str(), "%d-%u-%u%n", &y, &mo, &d, &consumed);
  if (n != 3) throw Error(ErrorKind::InvalidConfig, "cannot parse time '" + std::string(text) + "'");
  if (std::size_t(consumed) < s.size()) {
    const char sep = s[std::size_t(consumed)];
    if (sep != 'T' && sep != ' ') throw Error(ErrorKind::InvalidConfig, "cannot parse time '" + std::string(text) + "'");
    const int m = std::sscanf(s.c_str() + consumed + 1, "%d:%d:%d", &h, &mi, &se);
    if (m < 1) throw Error(ErrorKind::InvalidConfig, "cannot parse time '" + std::string(text) + "'");
  }
  if (h < 0 || h > 23 || mi < 0 || mi > 59 || se < 0 || se > 59) {
    throw Error(ErrorKind::InvalidConfig, "time of day out of range in '" + std::string(text) + "'");
  }
  return make_time(y, mo, d, h, mi, se);
}

}  // namespace regbench
