#include "ranctx/csv.h"

#include <charconv>
#include <fstream>
#include <istream>
#include <system_error>

#include "ranctx/error.h"

namespace ranctx::csv {

std::vector<std::string> SplitLine(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

std::vector<std::vector<std::string>> ReadTable(
    std::istream& in, const std::vector<std::string>& header,
    const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(what + ": empty file");
  if (SplitLine(line) != header) {
    throw DataError(what + ": expected header '" + Join(header) + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = SplitLine(line);
    if (fields.size() != header.size()) {
      throw DataError(what + ": line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(header.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::vector<std::vector<std::string>> ReadTableFile(
    const std::string& path, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return ReadTable(in, header, path);
}

double ParseDouble(std::string_view field, std::string_view what) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw DataError("invalid number '" + std::string(field) + "' for " +
                    std::string(what));
  }
  return v;
}

long long ParseInt(std::string_view field, std::string_view what) {
  long long v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw DataError("invalid integer '" + std::string(field) + "' for " +
                    std::string(what));
  }
  return v;
}

std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string Join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

}  // namespace ranctx::csv
