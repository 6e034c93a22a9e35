#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rcnet {

// Flat "key = value" text. Blank lines and lines starting with '#' are
// skipped; keys are unique.
struct KeyValueConfig {
  std::vector<std::pair<std::string, std::string>> entries;

  const std::string* find(std::string_view key) const;
};

KeyValueConfig parse_config(std::string_view text, const std::string& origin = "config");
KeyValueConfig load_config(const std::filesystem::path& path);

}  // namespace rcnet
