#pragma once

#include <chrono>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace evdetect {

// Meter timestamps are UTC with minute resolution.
using Timestamp = std::chrono::sys_time<std::chrono::minutes>;

inline Timestamp minutes_since_epoch(long long m) { return Timestamp(std::chrono::minutes(m)); }

inline long long to_minutes(Timestamp t) { return t.time_since_epoch().count(); }

// Accepts "YYYY-MM-DD[T ]HH:MM[:SS][Z]". Seconds are truncated to the minute.
inline Timestamp parse_timestamp(std::string_view s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char sep = 0;
  int consumed = 0;
  const std::string buf(s);
  const int n = std::sscanf(buf.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  if (n < 6 || (sep != 'T' && sep != ' ')) throw std::invalid_argument("bad timestamp: " + buf);
  std::string_view rest = std::string_view(buf).substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest.front() == ':') {
    int c2 = 0;
    if (std::sscanf(rest.data(), ":%2d%n", &sec, &c2) < 1) throw std::invalid_argument("bad timestamp: " + buf);
    rest.remove_prefix(static_cast<std::size_t>(c2));
  }
  if (!rest.empty() && rest.front() == 'Z') rest.remove_prefix(1);
  if (!rest.empty()) throw std::invalid_argument("bad timestamp: " + buf);
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec > 60)
    throw std::invalid_argument("bad timestamp: " + buf);
  return Timestamp(sys_days(ymd).time_since_epoch() + hours(h) + minutes(mi));
}

// "YYYY-MM-DDTHH:MM:00Z"
inline std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const auto tod = t - day;
  const auto h = duration_cast<hours>(tod).count();
  const auto m = (tod - hours(h)).count();
  char out[64];
  std::snprintf(out, sizeof out, "%04d-%02u-%02uT%02d:%02d:00Z", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(h), static_cast<int>(m));
  return out;
}

}  // namespace evdetect
