#include "ranctx/kv_config.h"

#include <fstream>
#include <sstream>

#include "ranctx/csv.h"
#include "ranctx/error.h"

namespace ranctx {
namespace {

std::string Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

KvConfig KvConfig::Parse(std::string_view text, const std::string& source) {
  KvConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = Trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) {
      throw ValidationError(where + ": expected 'key = value'");
    }
    const std::string key = Trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ValidationError(where + ": empty key");
    cfg.entries_[key] = Entry{Trim(std::string_view(body).substr(eq + 1)), where};
  }
  return cfg;
}

KvConfig KvConfig::Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return Parse(ss.str(), path);
}

void KvConfig::Set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ValidationError("--set expects key=value, got '" +
                          std::string(assignment) + "'");
  }
  Set(Trim(assignment.substr(0, eq)), Trim(assignment.substr(eq + 1)));
}

void KvConfig::Set(const std::string& key, const std::string& value) {
  entries_[key] = Entry{value, "--set " + key};
}

bool KvConfig::Has(const std::string& key) const {
  return entries_.count(key) != 0;
}

const KvConfig::Entry* KvConfig::Find(const std::string& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  it->second.used = true;
  return &it->second;
}

std::string KvConfig::GetString(const std::string& key,
                                const std::string& fallback) {
  const Entry* e = Find(key);
  return e ? e->value : fallback;
}

double KvConfig::GetDouble(const std::string& key, double fallback) {
  const Entry* e = Find(key);
  if (!e) return fallback;
  try {
    return csv::ParseDouble(e->value, key);
  } catch (const Error&) {
    throw ValidationError(e->origin + ": key '" + key +
                          "' expects a number, got '" + e->value + "'");
  }
}

long long KvConfig::GetInt(const std::string& key, long long fallback) {
  const Entry* e = Find(key);
  if (!e) return fallback;
  try {
    return csv::ParseInt(e->value, key);
  } catch (const Error&) {
    throw ValidationError(e->origin + ": key '" + key +
                          "' expects an integer, got '" + e->value + "'");
  }
}

bool KvConfig::GetBool(const std::string& key, bool fallback) {
  const Entry* e = Find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1") return true;
  if (e->value == "false" || e->value == "0") return false;
  throw ValidationError(e->origin + ": key '" + key +
                        "' expects true/false, got '" + e->value + "'");
}

void KvConfig::RejectUnknown() const {
  for (const auto& [key, entry] : entries_) {
    if (!entry.used) {
      throw ValidationError(entry.origin + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace ranctx
