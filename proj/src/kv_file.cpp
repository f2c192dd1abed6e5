#include "bries/util/kv_file.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "bries/error.hpp"
#include "bries/util/text.hpp"

namespace bries::util {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

KvFile KvFile::parse(std::string_view text, const std::string& origin) {
  KvFile file;
  file.origin_ = origin;
  file.raw_ = std::string(text);
  std::string section;
  const auto lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw Error(ErrorCode::MalformedRecord,
                    origin + ":" + std::to_string(line_no) + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::MalformedRecord,
                  origin + ":" + std::to_string(line_no) + ": expected key = value");
    KvEntry entry{section, trim(std::string_view(line).substr(0, eq)),
                  trim(std::string_view(line).substr(eq + 1)), line_no};
    while (!entry.value.empty() && entry.value.back() == '\\' && i + 1 < lines.size()) {
      entry.value.pop_back();
      entry.value = trim(entry.value) + " " + trim(lines[++i]);
    }
    if (entry.key.empty())
      throw Error(ErrorCode::MalformedRecord,
                  origin + ":" + std::to_string(line_no) + ": empty key");
    file.entries_.push_back(std::move(entry));
  }
  return file;
}

KvFile KvFile::load(const std::filesystem::path& path) {
  return parse(read_file(path), path.string());
}

std::vector<std::string> KvFile::sections() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (out.empty() || (out.back() != e.section &&
                        std::find(out.begin(), out.end(), e.section) == out.end()))
      out.push_back(e.section);
  }
  return out;
}

std::optional<std::string> KvFile::get(std::string_view section, std::string_view key) const {
  std::optional<std::string> found;
  for (const auto& e : entries_)
    if (e.section == section && e.key == key) found = e.value;
  return found;
}

std::vector<const KvEntry*> KvFile::in_section(std::string_view section) const {
  std::vector<const KvEntry*> out;
  for (const auto& e : entries_)
    if (e.section == section) out.push_back(&e);
  return out;
}

}  // namespace bries::util
