#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace mgpu {

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Parses `key = value` lines. `#` starts a comment, blank lines are skipped.
/// Throws ConfigError on malformed lines or duplicate keys.
std::vector<KeyValue> parse_key_values(std::string_view text);

std::string read_text_file(const std::string& path);

/// Comma separated integers, e.g. "0,0,1,1".
std::vector<int> parse_int_list(std::string_view text, std::string_view key);

}  // namespace mgpu
