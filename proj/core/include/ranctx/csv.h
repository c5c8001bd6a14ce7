#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ranctx::csv {

/// Splits one CSV line on commas. Quoting is not supported; identifiers
/// in the telemetry formats never contain commas.
std::vector<std::string> SplitLine(std::string_view line);

/// Reads all non-empty rows. The first row must equal `header` exactly
/// (after trimming a trailing '\r'); row widths are checked against it.
std::vector<std::vector<std::string>> ReadTable(
    std::istream& in, const std::vector<std::string>& header,
    const std::string& what);

std::vector<std::vector<std::string>> ReadTableFile(
    const std::string& path, const std::vector<std::string>& header);

double ParseDouble(std::string_view field, std::string_view what);
long long ParseInt(std::string_view field, std::string_view what);

/// Shortest decimal that round-trips the double exactly.
std::string FormatDouble(double v);

std::string Join(const std::vector<std::string>& fields);

}  // namespace ranctx::csv
