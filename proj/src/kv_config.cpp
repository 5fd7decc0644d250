#include "fastcall/kv_config.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fastcall {

std::string_view trim(std::string_view text) {
  const char* ws = " \t\r\n";
  auto b = text.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = text.find_last_not_of(ws);
  return text.substr(b, e - b + 1);
}

const KvEntry* KvSection::find(std::string_view key) const {
  for (const auto& e : entries)
    if (e.key == key) return &e;
  return nullptr;
}

std::vector<KvSection> parse_kv(std::string_view text) {
  std::vector<KvSection> out(1);
  int lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;

    if (auto hash = line.find('#'); hash != line.npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(lineno, "unterminated section header");
      auto name = trim(line.substr(1, line.size() - 2));
      if (name.empty()) throw ConfigError(lineno, "empty section name");
      out.push_back({std::string(name), lineno, {}});
      continue;
    }
    auto eq = line.find('=');
    if (eq == line.npos) throw ConfigError(lineno, "expected `key = value`");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(lineno, "empty key");
    auto& section = out.back();
    if (section.find(key))
      throw ConfigError(lineno, "duplicate key `" + std::string(key) + "`");
    section.entries.push_back({std::string(key), std::string(value), lineno});
  }
  if (out.front().entries.empty()) out.erase(out.begin());
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(0, "cannot open `" + path + "`");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double parse_double(const KvEntry& entry) {
  const std::string& v = entry.value;
  char* end = nullptr;
  errno = 0;
  double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno != 0 || !std::isfinite(d))
    throw ConfigError(entry.line, "`" + entry.key + "`: not a number: `" + v + "`");
  return d;
}

std::uint64_t parse_u64(const KvEntry& entry) {
  const std::string& v = entry.value;
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError(entry.line, "`" + entry.key + "`: not an unsigned integer: `" + v + "`");
  return out;
}

std::vector<std::string> split_list(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto next = text.find(sep, pos);
    auto item = trim(text.substr(pos, next == text.npos ? text.npos : next - pos));
    if (!item.empty()) out.emplace_back(item);
    if (next == text.npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace fastcall
