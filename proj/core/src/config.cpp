#include "deftx/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "deftx/digest.hpp"
#include "deftx/error.hpp"

namespace deftx {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

std::string key_path(std::string_view section, std::string_view key) {
  std::string out(section);
  if (!out.empty()) out += '.';
  out += key;
  return out;
}

}  // namespace

Config Config::parse(std::string_view text) {
  Config out;
  std::string current;
  std::size_t line_no = 0;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    const std::size_t end = text.find('\n', begin);
    std::string_view line = text.substr(
        begin, end == std::string_view::npos ? text.size() - begin : end - begin);
    begin = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;

    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        raise(ErrorKind::Config, "bad section header at line " + std::to_string(line_no));
      }
      current = std::string(trim(line.substr(1, line.size() - 2)));
      out.section_of(current);
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      raise(ErrorKind::Config, "expected key=value at line " + std::to_string(line_no));
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) {
      raise(ErrorKind::Config, "empty key at line " + std::to_string(line_no));
    }
    out.set(current, key, value);
  }
  return out;
}

std::string Config::serialize() const {
  std::string out;
  for (const Section& section : sections_) {
    if (!section.name.empty()) {
      out += "[" + section.name + "]\n";
    }
    for (const auto& [key, value] : section.entries) {
      out += key + "=" + value + "\n";
    }
  }
  return out;
}

Config::Section& Config::section_of(std::string_view name) {
  for (Section& section : sections_) {
    if (section.name == name) return section;
  }
  sections_.push_back({std::string(name), {}});
  return sections_.back();
}

const std::string* Config::lookup(std::string_view section, std::string_view key) const {
  for (const Section& s : sections_) {
    if (s.name != section) continue;
    for (const auto& [k, v] : s.entries) {
      if (k == key) return &v;
    }
  }
  return nullptr;
}

std::string Config::get_string(std::string_view section, std::string_view key,
                               std::string_view fallback) const {
  const std::string* v = lookup(section, key);
  return v != nullptr ? *v : std::string(fallback);
}

double Config::get_double(std::string_view section, std::string_view key,
                          double fallback) const {
  const std::string* v = lookup(section, key);
  if (v == nullptr) return fallback;
  try {
    std::size_t used = 0;
    const double parsed = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return parsed;
  } catch (...) {
    raise(ErrorKind::Config, "bad number for " + key_path(section, key) + ": '" + *v + "'");
  }
}

std::uint64_t Config::get_u64(std::string_view section, std::string_view key,
                              std::uint64_t fallback) const {
  const std::string* v = lookup(section, key);
  if (v == nullptr) return fallback;
  try {
    std::size_t used = 0;
    const unsigned long long parsed = std::stoull(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return parsed;
  } catch (...) {
    raise(ErrorKind::Config, "bad integer for " + key_path(section, key) + ": '" + *v + "'");
  }
}

bool Config::get_bool(std::string_view section, std::string_view key,
                      bool fallback) const {
  const std::string* v = lookup(section, key);
  if (v == nullptr) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  raise(ErrorKind::Config, "bad boolean for " + key_path(section, key) + ": '" + *v + "'");
}

void Config::set(std::string_view section, std::string_view key,
                 std::string_view value) {
  Section& s = section_of(section);
  for (auto& [k, v] : s.entries) {
    if (k == key) {
      v = std::string(value);
      return;
    }
  }
  s.entries.emplace_back(std::string(key), std::string(value));
}

void Config::set_u64(std::string_view section, std::string_view key,
                     std::uint64_t value) {
  set(section, key, std::to_string(value));
}

void Config::set_double(std::string_view section, std::string_view key, double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  set(section, key, buf);
}

std::uint64_t Config::digest() const { return fnv64(serialize()); }

Config load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open config '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return Config::parse(buffer.str());
}

void save_config_file(const std::filesystem::path& path, const Config& config) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorKind::Io, "cannot write config '" + path.string() + "'");
  out << config.serialize();
  if (!out) raise(ErrorKind::Io, "failed writing config '" + path.string() + "'");
}

}  // namespace deftx
