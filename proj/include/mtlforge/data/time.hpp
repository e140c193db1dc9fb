#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "mtlforge/error.hpp"

namespace mtl {

/// Seconds since 1970-01-01T00:00:00Z.
using Timestamp = std::int64_t;

inline constexpr Timestamp kSecondsPerHour = 3600;
inline constexpr Timestamp kSecondsPerDay = 86400;

namespace detail {

inline bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace detail

inline Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                                int second = 0) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok()) throw DataError("invalid calendar date");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<Timestamp>(days) * kSecondsPerDay + hour * 3600 + minute * 60 + second;
}

/// Parse ISO-8601 "YYYY-MM-DD[T ]HH:MM[:SS[.fff]][Z|+HH:MM|-HH:MM]".
/// A missing zone designator is read as UTC.
inline Timestamp parse_timestamp(std::string_view s) {
  auto fail = [&]() -> Timestamp { throw DataError("malformed timestamp '" + std::string(s) + "'"); };
  if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') return fail();
  int y, mo, d, h, mi, sec = 0;
  if (!detail::parse_int(s.substr(0, 4), y) || !detail::parse_int(s.substr(5, 2), mo) ||
      !detail::parse_int(s.substr(8, 2), d) || !detail::parse_int(s.substr(11, 2), h) ||
      !detail::parse_int(s.substr(14, 2), mi))
    return fail();
  std::size_t pos = 16;
  if (pos < s.size() && s[pos] == ':') {
    if (pos + 3 > s.size() || !detail::parse_int(s.substr(pos + 1, 2), sec)) return fail();
    pos += 3;
    if (pos < s.size() && s[pos] == '.') {
      ++pos;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    }
  }
  int offset = 0;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      pos = s.size();
    } else if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
      int oh, om;
      if (!detail::parse_int(s.substr(pos + 1, 2), oh) || !detail::parse_int(s.substr(pos + 4, 2), om)) return fail();
      offset = (s[pos] == '-' ? -1 : 1) * (oh * 3600 + om * 60);
    } else {
      return fail();
    }
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60 || h < 0 || mi < 0 || sec < 0)
    return fail();
  try {
    return make_timestamp(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h, mi, sec) - offset;
  } catch (const DataError&) {
    return fail();
  }
}

inline std::string format_timestamp(Timestamp ts) {
  using namespace std::chrono;
  const auto days = static_cast<int>(ts >= 0 ? ts / kSecondsPerDay : (ts - kSecondsPerDay + 1) / kSecondsPerDay);
  const Timestamp rem = ts - static_cast<Timestamp>(days) * kSecondsPerDay;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                static_cast<int>(rem % 3600 / 60), static_cast<int>(rem % 60));
  return buf;
}

/// Calendar categories used as embedding inputs.
struct TemporalIds {
  int hour = 0;      // 0-23
  int iso_week = 1;  // 1-53
  int day = 1;       // day of month, 1-31

  std::array<int, 3> as_array() const { return {hour, iso_week, day}; }
  friend bool operator==(const TemporalIds&, const TemporalIds&) = default;
};

inline TemporalIds extract_temporal(Timestamp ts) {
  using namespace std::chrono;
  const Timestamp day_index = ts >= 0 ? ts / kSecondsPerDay : (ts - kSecondsPerDay + 1) / kSecondsPerDay;
  const sys_days date{std::chrono::days{day_index}};
  const year_month_day ymd{date};
  const unsigned iso_dow = weekday{date}.iso_encoding();  // Mon=1..Sun=7
  // The ISO week belongs to the year that contains its Thursday.
  const sys_days thursday = date - std::chrono::days{iso_dow - 1} + std::chrono::days{3};
  const year_month_day th{thursday};
  const sys_days jan1{th.year() / January / 1};
  const int week = static_cast<int>((thursday - jan1).count() / 7 + 1);
  const Timestamp secs = ts - day_index * kSecondsPerDay;
  return {static_cast<int>(secs / 3600), week, static_cast<int>(static_cast<unsigned>(ymd.day()))};
}

}  // namespace mtl
