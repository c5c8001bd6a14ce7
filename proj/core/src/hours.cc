#include "ranctx/hours.h"

#include <chrono>
#include <cstdio>

#include "ranctx/error.h"

namespace ranctx {
namespace {

namespace chr = std::chrono;

bool ReadInt(std::string_view s, std::size_t pos, std::size_t len, int* out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  *out = v;
  return true;
}

}  // namespace

Hour ParseIsoHour(std::string_view text) {
  auto fail = [&]() {
    return DataError("invalid hour-aligned timestamp '" + std::string(text) +
                     "'");
  };
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  if (!ReadInt(text, 0, 4, &y) || text.size() < 14 || text[4] != '-' ||
      !ReadInt(text, 5, 2, &mo) || text[7] != '-' ||
      !ReadInt(text, 8, 2, &d) || (text[10] != 'T' && text[10] != ' ') ||
      !ReadInt(text, 11, 2, &h)) {
    throw fail();
  }
  std::size_t pos = 13;
  if (pos < text.size() && text[pos] == ':') {
    if (!ReadInt(text, pos + 1, 2, &mi)) throw fail();
    pos += 3;
    if (pos < text.size() && text[pos] == ':') {
      if (!ReadInt(text, pos + 1, 2, &se)) throw fail();
      pos += 3;
    }
  }
  if (pos < text.size() && text[pos] == 'Z') ++pos;
  if (pos != text.size() || mi != 0 || se != 0 || h > 23) throw fail();

  const chr::year_month_day ymd{chr::year{y}, chr::month{static_cast<unsigned>(mo)},
                                chr::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw fail();
  const auto days = chr::sys_days{ymd}.time_since_epoch().count();
  return static_cast<Hour>(days) * kHoursPerDay + h;
}

std::string FormatIsoHour(Hour hour) {
  Hour days = hour / kHoursPerDay;
  if (hour % kHoursPerDay < 0) --days;
  const chr::year_month_day ymd{chr::sys_days{chr::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:00:00Z",
                static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), HourOfDay(hour));
  return buf;
}

int DayOfWeek(Hour hour) {
  Hour days = hour / kHoursPerDay;
  if (hour % kHoursPerDay < 0) --days;
  const chr::weekday wd{chr::sys_days{chr::days{days}}};
  return static_cast<int>(wd.iso_encoding()) - 1;
}

}  // namespace ranctx
