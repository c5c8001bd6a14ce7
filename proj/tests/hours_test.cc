#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "ranctx/csv.h"
#include "ranctx/error.h"
#include "ranctx/hours.h"
#include "ranctx/kv_config.h"

namespace ranctx {
namespace {

TEST(Hours, ParseAndFormatRoundTrip) {
  const Hour h = ParseIsoHour("2024-01-01T05:00:00Z");
  EXPECT_EQ(FormatIsoHour(h), "2024-01-01T05:00:00Z");
  EXPECT_EQ(ParseIsoHour("2024-01-01T05:00Z"), h);
  EXPECT_EQ(ParseIsoHour("2024-01-01T05Z"), h);
  EXPECT_EQ(ParseIsoHour("1970-01-01T00:00:00Z"), 0);
  EXPECT_EQ(ParseIsoHour("1970-01-02T01:00:00Z"), 25);
}

TEST(Hours, RejectsOffHourAndMalformed) {
  EXPECT_THROW(ParseIsoHour("2024-01-01T05:30:00Z"), Error);
  EXPECT_THROW(ParseIsoHour("2024-02-30T05:00:00Z"), Error);
  EXPECT_THROW(ParseIsoHour("2024-01-01"), Error);
  EXPECT_THROW(ParseIsoHour("2024-01-01T24:00:00Z"), Error);
}

TEST(Hours, Weekday) {
  const Hour monday = ParseIsoHour("2024-01-01T00:00:00Z");
  EXPECT_EQ(DayOfWeek(monday), 0);
  EXPECT_EQ(DayOfWeek(monday + 5 * kHoursPerDay), 5);
  EXPECT_TRUE(IsWeekend(monday + 6 * kHoursPerDay + 23));
  EXPECT_FALSE(IsWeekend(monday + 7 * kHoursPerDay));
  EXPECT_EQ(DayOfWeek(-1), 2);  // 1969-12-31 was a Wednesday
  EXPECT_EQ(HourOfDay(-1), 23);
}

TEST(Csv, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789, -0.0, 4.615120516841261}) {
    const std::string s = csv::FormatDouble(v);
    EXPECT_EQ(csv::ParseDouble(s, "v"), v) << s;
  }
  EXPECT_EQ(csv::FormatDouble(0.5), "0.5");
}

TEST(Csv, HeaderMismatchIsAnError) {
  std::istringstream in("a,b\n1,2\n");
  EXPECT_THROW(csv::ReadTable(in, {"a", "c"}, "t"), Error);
  std::istringstream ragged("a,b\n1,2,3\n");
  EXPECT_THROW(csv::ReadTable(ragged, {"a", "b"}, "t"), Error);
}

TEST(KvConfig, TypedGettersAndComments) {
  auto kv = KvConfig::Parse("# c\n a = 1 \nb=2.5 # trailing\nc = true\n", "cfg");
  EXPECT_EQ(kv.GetInt("a", 0), 1);
  EXPECT_DOUBLE_EQ(kv.GetDouble("b", 0), 2.5);
  EXPECT_TRUE(kv.GetBool("c", false));
  EXPECT_EQ(kv.GetString("missing", "dflt"), "dflt");
  EXPECT_NO_THROW(kv.RejectUnknown());
}

TEST(KvConfig, UnknownKeyNamesKeyAndLine) {
  auto kv = KvConfig::Parse("a = 1\n\nbogus = 3\n", "my.cfg");
  kv.GetInt("a", 0);
  try {
    kv.RejectUnknown();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bogus"), std::string::npos) << msg;
    EXPECT_NE(msg.find("my.cfg:3"), std::string::npos) << msg;
  }
}

TEST(KvConfig, SetOverridesFile) {
  auto kv = KvConfig::Parse("a = 1\n", "cfg");
  kv.Set("a=7");
  EXPECT_EQ(kv.GetInt("a", 0), 7);
  EXPECT_THROW(kv.Set("novalue"), Error);
}

TEST(KvConfig, BadNumberIsValidationError) {
  auto kv = KvConfig::Parse("a = x1\n", "cfg");
  try {
    kv.GetDouble("a", 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
}

}  // namespace
}  // namespace ranctx
