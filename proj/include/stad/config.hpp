#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace stad {

// Flat sectioned key-value configuration:
//   [section]
//   key = value   # comment
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text) {
    Config cfg;
    cfg.raw_ = text;
    std::istringstream is(text);
    std::string line, section;
    int row = 0;
    while (std::getline(is, line)) {
      ++row;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw std::runtime_error("config line " + std::to_string(row) + ": bad section");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config line " + std::to_string(row) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error("config line " + std::to_string(row) + ": empty key");
      cfg.values_[section + "." + key] = value;
    }
    return cfg;
  }

  const std::string& raw() const { return raw_; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  double get_double(const std::string& key, double def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw std::runtime_error("config: " + key + " is not a number");
    }
  }

  long get_int(const std::string& key, long def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      return std::stol(it->second);
    } catch (const std::exception&) {
      throw std::runtime_error("config: " + key + " is not an integer");
    }
  }

  bool get_bool(const std::string& key, bool def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error("config: " + key + " is not a boolean");
  }

  // FNV-1a of the raw text; recorded in every artifact manifest.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : raw_) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::string raw_;
  std::map<std::string, std::string> values_;
};

}  // namespace stad
