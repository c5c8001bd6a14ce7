#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ranctx {

/// Whole hours since 1970-01-01T00:00:00Z.
using Hour = std::int64_t;

constexpr Hour kHoursPerDay = 24;
constexpr Hour kHoursPerWeek = 168;

/// Parses "YYYY-MM-DDTHH:MM:SSZ" (also accepts "YYYY-MM-DDTHH:MMZ" and
/// "YYYY-MM-DDTHHZ"). Minutes and seconds must be zero.
Hour ParseIsoHour(std::string_view text);

/// Formats as "YYYY-MM-DDTHH:00:00Z".
std::string FormatIsoHour(Hour hour);

/// 0 = Monday ... 6 = Sunday.
int DayOfWeek(Hour hour);

inline int HourOfDay(Hour hour) {
  const Hour h = hour % kHoursPerDay;
  return static_cast<int>(h < 0 ? h + kHoursPerDay : h);
}

inline bool IsWeekend(Hour hour) { return DayOfWeek(hour) >= 5; }

}  // namespace ranctx
