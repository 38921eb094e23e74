#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "nlohmann/json.hpp"

namespace tsfm {

inline constexpr const char* kVersionString = "tsfm 0.1.0";

enum class Provenance { kDefault, kFile, kFlag };

// Flat dotted-key configuration with typed defaults.  Values can be layered
// from a JSON file and then from command-line overrides; every key remembers
// where its value came from.  Unknown keys, type mismatches, and violated
// constraints raise ConfigError.
class RunConfig {
 public:
  using Value = std::variant<bool, long, double, std::string>;

  // The full key registry with built-in defaults.
  static RunConfig defaults();

  // Layers a parsed JSON document (nested objects become dotted keys).  A
  // manifest written by this program is accepted too; its "config" object is
  // used.
  void apply_file(const nlohmann::json& doc);
  void apply_file(const std::filesystem::path& path);
  // Parses `text` according to the key's registered type.
  void apply_flag(const std::string& key, const std::string& text);

  // Cross-field constraint checks; called before any real work.
  void validate() const;

  bool get_bool(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  Provenance provenance(const std::string& key) const;

  std::vector<std::string> keys() const;
  nlohmann::json to_json() const;          // nested object of resolved values
  nlohmann::json provenance_json() const;  // dotted key -> "default|file|flag"
  // FNV-1a over the canonical "key=value" lines of the resolved config.
  std::uint64_t hash() const;

 private:
  struct Entry {
    Value value;
    Provenance provenance = Provenance::kDefault;
  };
  void set(const std::string& key, Value value, Provenance provenance);
  const Entry& entry(const std::string& key) const;

  std::map<std::string, Entry> entries_;
};

// manifest.json: version, command, seed, config hash, resolved config, and
// per-key provenance.  Feeding the manifest back through --config reproduces
// the run.
nlohmann::json build_manifest(const RunConfig& config, const std::string& command);
void write_manifest(const std::filesystem::path& path, const RunConfig& config,
                    const std::string& command);

}  // namespace tsfm
