#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fastcall {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& what)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct KvEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct KvSection {
  std::string name;  // empty for entries before the first [header]
  int line = 0;
  std::vector<KvEntry> entries;

  const KvEntry* find(std::string_view key) const;
};

// Flat or sectioned `key = value` text. `#` starts a comment, `[name]` opens a section.
std::vector<KvSection> parse_kv(std::string_view text);

std::string read_text_file(const std::string& path);

double parse_double(const KvEntry& entry);
std::uint64_t parse_u64(const KvEntry& entry);
std::vector<std::string> split_list(std::string_view text, char sep = ',');
std::string_view trim(std::string_view text);

}  // namespace fastcall
