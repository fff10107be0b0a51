#pragma once
// Plain-text "key = value" configuration. '#' starts a comment; later keys
// override earlier ones. Keys keep sorted order so emitted text is stable.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mstaf {

class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<text>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  // Keys from `other` win.
  void merge(const KeyValues& other);

  std::string get(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<long long> get_ints(const std::string& key, const std::vector<long long>& fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& items() const { return values_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

std::vector<std::string> split(const std::string& text, char sep);
std::string trim(const std::string& text);

}  // namespace mstaf
