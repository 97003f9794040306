#include "seqforge/config.hpp"

#include <cstdio>

namespace seqforge {

namespace {

const char* type_name(size_t idx) {
  switch (idx) {
    case 0: return "bool";
    case 1: return "int";
    case 2: return "real";
    default: return "string";
  }
}

}  // namespace

void Config::declare(const std::string& key, ConfigValue def) {
  auto [it, inserted] = values_.try_emplace(key, Entry{std::move(def), Provenance::Default});
  if (!inserted) throw ConfigError("config: key '" + key + "' declared twice");
}

const Config::Entry& Config::entry(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

Config::Entry& Config::entry_mut(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

void Config::set_arch(const std::string& key, ConfigValue v) {
  Entry& e = entry_mut(key);
  if (e.v.index() != v.index())
    throw ConfigError("config: key '" + key + "' expects " + type_name(e.v.index()) +
                      ", got " + type_name(v.index()));
  e.v = std::move(v);
  e.prov = Provenance::Architecture;
}

void Config::set_user(const std::string& key, ConfigValue v) {
  Entry& e = entry_mut(key);
  if (e.v.index() != v.index())
    throw ConfigError("config: key '" + key + "' expects " + type_name(e.v.index()) +
                      ", got " + type_name(v.index()));
  e.v = std::move(v);
  e.prov = Provenance::User;
}

void Config::set_user_raw(const std::string& key, const std::string& raw) {
  Entry& e = entry_mut(key);
  switch (e.v.index()) {
    case 0: {
      if (raw == "true" || raw == "1")
        e.v = true;
      else if (raw == "false" || raw == "0")
        e.v = false;
      else
        throw ConfigError("config: key '" + key + "' expects bool, got '" + raw + "'");
      break;
    }
    case 1: {
      size_t used = 0;
      int64_t v = 0;
      try {
        v = std::stoll(raw, &used);
      } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects int, got '" + raw + "'");
      }
      if (used != raw.size())
        throw ConfigError("config: key '" + key + "' expects int, got '" + raw + "'");
      e.v = v;
      break;
    }
    case 2: {
      size_t used = 0;
      double v = 0;
      try {
        v = std::stod(raw, &used);
      } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects real, got '" + raw + "'");
      }
      if (used != raw.size())
        throw ConfigError("config: key '" + key + "' expects real, got '" + raw + "'");
      e.v = v;
      break;
    }
    default:
      e.v = raw;
      break;
  }
  e.prov = Provenance::User;
}

bool Config::get_bool(const std::string& key) const {
  const Entry& e = entry(key);
  if (auto* p = std::get_if<bool>(&e.v)) return *p;
  throw ConfigError("config: key '" + key + "' is not bool");
}

int64_t Config::get_int(const std::string& key) const {
  const Entry& e = entry(key);
  if (auto* p = std::get_if<int64_t>(&e.v)) return *p;
  throw ConfigError("config: key '" + key + "' is not int");
}

double Config::get_real(const std::string& key) const {
  const Entry& e = entry(key);
  if (auto* p = std::get_if<double>(&e.v)) return *p;
  if (auto* p = std::get_if<int64_t>(&e.v)) return static_cast<double>(*p);
  throw ConfigError("config: key '" + key + "' is not real");
}

const std::string& Config::get_str(const std::string& key) const {
  const Entry& e = entry(key);
  if (auto* p = std::get_if<std::string>(&e.v)) return *p;
  throw ConfigError("config: key '" + key + "' is not string");
}

Config::Provenance Config::provenance(const std::string& key) const {
  return entry(key).prov;
}

const ConfigValue& Config::value(const std::string& key) const {
  return entry(key).v;
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;  // std::map iterates sorted
}

std::string Config::value_string(const std::string& key) const {
  const Entry& e = entry(key);
  switch (e.v.index()) {
    case 0:
      return std::get<bool>(e.v) ? "true" : "false";
    case 1:
      return std::to_string(std::get<int64_t>(e.v));
    case 2: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%a", std::get<double>(e.v));  // bit-exact
      return buf;
    }
    default:
      return std::get<std::string>(e.v);
  }
}

void Config::merge_from(const Config& other) {
  for (const auto& [k, e] : other.values_) values_[k] = e;
}

}  // namespace seqforge
