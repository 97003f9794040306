#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "seqforge/common.hpp"

namespace seqforge {

using ConfigValue = std::variant<bool, int64_t, double, std::string>;

// Flat key -> scalar map with per-key provenance. Keys must be declared
// (with a default that fixes the type) before they can be overridden;
// user values override architecture values override defaults.
class Config {
 public:
  enum class Provenance { Default, Architecture, User };

  void declare(const std::string& key, ConfigValue def);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set_arch(const std::string& key, ConfigValue v);
  void set_user(const std::string& key, ConfigValue v);
  // parses raw by the declared type (bool: true/false/1/0, int, real
  // incl. hexfloat, string verbatim)
  void set_user_raw(const std::string& key, const std::string& raw);

  bool get_bool(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;

  Provenance provenance(const std::string& key) const;
  const ConfigValue& value(const std::string& key) const;
  std::vector<std::string> keys() const;  // sorted

  // bit-exact textual form: reals print as hexfloat
  std::string value_string(const std::string& key) const;

  // folds other's entries in: undeclared keys get declared, declared keys
  // get overridden at other's provenance level
  void merge_from(const Config& other);

 private:
  struct Entry {
    ConfigValue v;
    Provenance prov;
  };
  std::map<std::string, Entry> values_;
  const Entry& entry(const std::string& key) const;
  Entry& entry_mut(const std::string& key);
};

}  // namespace seqforge
