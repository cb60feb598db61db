#pragma once

// Flat "key = value" text files. Blank lines and lines starting with '#'
// are ignored; later keys override earlier ones.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace setrank {

class KeyValues {
 public:
  static KeyValues parse(std::istream& is, const std::string& source = "<stream>") {
    KeyValues kv;
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument(source + ":" + std::to_string(lineno) +
                                    ": expected 'key = value'");
      }
      auto key = trim(line.substr(0, eq));
      if (key.empty()) {
        throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
      }
      kv.values_[key] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path);
    return parse(is, path);
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write config " + path);
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  template <typename T>
  void set(const std::string& key, T value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    values_[key] = os.str();
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return convert<T>(key, it->second);
  }

  template <typename T>
  T require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("missing config key '" + key + "'");
    return convert<T>(key, it->second);
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  template <typename T>
  static T convert(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
    } else if constexpr (std::is_floating_point_v<T>) {
      try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return static_cast<T>(v);
      } catch (const std::exception&) {
      }
    } else {
      T v{};
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec == std::errc() && ptr == text.data() + text.size()) return v;
    }
    throw std::invalid_argument("config key '" + key + "': bad value '" + text + "'");
  }

  std::map<std::string, std::string> values_;
};

}  // namespace setrank
