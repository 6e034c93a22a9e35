#include "rcnet/config.hpp"

#include <algorithm>

#include "rcnet/common.hpp"
#include "rcnet/io.hpp"

namespace rcnet {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(std::string_view k) {
  return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
  });
}

}  // namespace

const std::string* KeyValueConfig::find(std::string_view key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return &v;
  }
  return nullptr;
}

KeyValueConfig parse_config(std::string_view text, const std::string& origin) {
  KeyValueConfig cfg;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw InvalidArgument(where + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (!valid_key(key)) throw InvalidArgument(where + ": malformed key '" + key + "'");
    if (value.empty()) throw InvalidArgument(where + ": empty value for '" + key + "'");
    if (cfg.find(key)) throw InvalidArgument(where + ": duplicate key '" + key + "'");
    cfg.entries.emplace_back(key, value);
  }
  return cfg;
}

KeyValueConfig load_config(const std::filesystem::path& path) {
  return parse_config(io::read_text(path), path.string());
}

}  // namespace rcnet
