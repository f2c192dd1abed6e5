#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bries::util {

/// Flat key/value text format shared by the taxonomy data file and the
/// experiment config:
///
///     # comment
///     key = value
///     [section]
///     key = value
///
/// Keys inside a section are reported as-is together with the section name.
/// Values are trimmed; a trailing backslash continues a value on the next line.
struct KvEntry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

class KvFile {
 public:
  static KvFile parse(std::string_view text, const std::string& origin = "<memory>");
  static KvFile load(const std::filesystem::path& path);

  const std::vector<KvEntry>& entries() const { return entries_; }

  /// Section names in first-appearance order (the unnamed top-level section is "").
  std::vector<std::string> sections() const;

  std::optional<std::string> get(std::string_view section, std::string_view key) const;
  std::vector<const KvEntry*> in_section(std::string_view section) const;

  const std::string& origin() const { return origin_; }
  const std::string& raw() const { return raw_; }

 private:
  std::vector<KvEntry> entries_;
  std::string origin_;
  std::string raw_;
};

std::string read_file(const std::filesystem::path& path);

}  // namespace bries::util
