#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace deftx {

// Line-oriented key=value configuration with [section] headers and '#'
// comments. Order-preserving so serialized manifests are stable.
class Config {
 public:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };

  static Config parse(std::string_view text);
  std::string serialize() const;

  const std::string* lookup(std::string_view section, std::string_view key) const;
  bool has(std::string_view section, std::string_view key) const {
    return lookup(section, key) != nullptr;
  }

  // Typed getters; raise Config errors naming section.key on bad values.
  std::string get_string(std::string_view section, std::string_view key,
                         std::string_view fallback) const;
  double get_double(std::string_view section, std::string_view key,
                    double fallback) const;
  std::uint64_t get_u64(std::string_view section, std::string_view key,
                        std::uint64_t fallback) const;
  bool get_bool(std::string_view section, std::string_view key, bool fallback) const;

  void set(std::string_view section, std::string_view key, std::string_view value);
  void set_u64(std::string_view section, std::string_view key, std::uint64_t value);
  void set_double(std::string_view section, std::string_view key, double value);

  const std::vector<Section>& sections() const { return sections_; }
  std::uint64_t digest() const;

 private:
  std::vector<Section> sections_;
  Section& section_of(std::string_view name);
};

Config load_config_file(const std::filesystem::path& path);
void save_config_file(const std::filesystem::path& path, const Config& config);

}  // namespace deftx
