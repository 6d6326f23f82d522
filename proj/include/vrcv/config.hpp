#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vrcv {

/// Flat dotted-key configuration. Every key exists in the default table;
/// setting an unknown key is an error (typo guard). File format: one
/// `key = value` per line, '#' comments.
class Config {
 public:
  static Config defaults();
  static Config from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);

  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  std::size_t index(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  bool has(const std::string& key) const;

  const std::map<std::string, std::string>& items() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace vrcv
