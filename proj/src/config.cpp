#include "tsfm/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tsfm/errors.hpp"
#include "tsfm/rng.hpp"

namespace tsfm {

namespace {

const char* kind_name(std::size_t index) {
  switch (index) {
    case 0: return "boolean";
    case 1: return "integer";
    case 2: return "number";
    default: return "string";
  }
}

void flatten(const nlohmann::json& node, const std::string& prefix,
             std::vector<std::pair<std::string, nlohmann::json>>* out) {
  if (node.is_object()) {
    for (const auto& [key, value] : node.items())
      flatten(value, prefix.empty() ? key : prefix + "." + key, out);
    return;
  }
  out->emplace_back(prefix, node);
}

std::string value_text(const RunConfig::Value& value) {
  if (std::holds_alternative<bool>(value)) return std::get<bool>(value) ? "true" : "false";
  if (std::holds_alternative<long>(value)) return std::to_string(std::get<long>(value));
  if (std::holds_alternative<double>(value)) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", std::get<double>(value));
    return buf;
  }
  return std::get<std::string>(value);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  auto add = [&cfg](const char* key, Value value) {
    cfg.entries_[key] = Entry{std::move(value), Provenance::kDefault};
  };

  add("seed", 0L);
  add("out", std::string{});
  add("ckpt", std::string{});

  add("data.dir", std::string{});
  add("data.split", std::string{});
  add("data.window", 100L);
  add("data.stride", 10L);

  add("model.embed_dim", 128L);
  add("model.depth", 8L);
  add("model.heads", 4L);
  add("model.ff_mult", 2L);
  add("model.dropout", 0.1);
  add("model.pre_norm", true);
  add("model.positional", std::string("sinusoidal"));
  add("model.per_objective_heads", false);
  add("model.max_positions", 256L);
  add("model.max_table_rows", 16L);

  add("train.lr", 1e-4);
  add("train.weight_decay", 1e-3);
  add("train.beta1", 0.9);
  add("train.beta2", 0.999);
  add("train.eps", 1e-8);
  add("train.clip_norm", 1.0);
  add("train.epochs", 200L);
  add("train.eta_min", 0.0);
  add("train.patience", 20L);
  add("train.min_improvement", 1e-6);
  add("train.batch_subjects", 32L);
  add("train.windows_per_subject", 4L);
  add("train.t_past", 50L);
  add("train.t_future", 50L);

  add("mask.ratio", 0.8);
  add("mask.seg_min", 4L);
  add("mask.seg_max", 16L);
  add("tc.ratio", 1.0);

  add("uicd.queries", 1L);
  add("uicd.query_mask_ratio", 1.0);
  add("uicd.seg_min", 4L);
  add("uicd.seg_max", 16L);
  add("uicd.max_rows", 16L);
  add("uicd.support", std::string("random"));

  add("objective.lc", true);
  add("objective.tc", true);
  add("objective.uicd", true);
  add("loss.lc", 1.0);
  add("loss.tc", 1.0);
  add("loss.uicd", 1.0);

  add("eval.objective", std::string("lc"));
  add("eval.batch_windows", 128L);

  add("probe.task", std::string("classification"));
  add("probe.head", std::string("auto"));
  add("probe.lr", 0.01);
  add("probe.epochs", 500L);
  add("probe.patience", 25L);

  add("reconstruct.window", 0L);

  add("gen.subjects", 30L);
  add("gen.trials_min", 3L);
  add("gen.trials_max", 6L);
  add("gen.length_min", 200L);
  add("gen.length_max", 400L);
  add("gen.harmonics", 3L);
  add("gen.period_min", 60.0);
  add("gen.period_max", 100.0);
  add("gen.noise_min", 0.01);
  add("gen.noise_max", 0.05);
  add("gen.missing_rate", 0.02);
  add("gen.validation_fraction", 0.2);
  add("gen.test_fraction", 0.2);

  return cfg;
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

void RunConfig::set(const std::string& key, Value value, Provenance provenance) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  if (it->second.value.index() != value.index())
    throw ConfigError("configuration key '" + key + "' expects a " +
                      kind_name(it->second.value.index()) + " value");
  it->second.value = std::move(value);
  it->second.provenance = provenance;
}

void RunConfig::apply_file(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("a configuration file must hold a JSON object");
  // A run manifest wraps the config under "config"; accept it directly.
  const nlohmann::json& root =
      doc.contains("config") && doc.contains("version") ? doc.at("config") : doc;
  std::vector<std::pair<std::string, nlohmann::json>> flat;
  flatten(root, "", &flat);
  for (const auto& [key, value] : flat) {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    const auto index = it->second.value.index();
    if (index == 0) {
      if (!value.is_boolean())
        throw ConfigError("configuration key '" + key + "' expects a boolean value");
      set(key, value.get<bool>(), Provenance::kFile);
    } else if (index == 1) {
      if (!value.is_number_integer() && !value.is_number_unsigned())
        throw ConfigError("configuration key '" + key + "' expects an integer value");
      set(key, value.get<long>(), Provenance::kFile);
    } else if (index == 2) {
      if (!value.is_number())
        throw ConfigError("configuration key '" + key + "' expects a number value");
      set(key, value.get<double>(), Provenance::kFile);
    } else {
      if (!value.is_string())
        throw ConfigError("configuration key '" + key + "' expects a string value");
      set(key, value.get<std::string>(), Provenance::kFile);
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
  apply_file(doc);
}

void RunConfig::apply_flag(const std::string& key, const std::string& text) {
  const auto index = entry(key).value.index();
  if (index == 0) {
    if (text == "true" || text == "1")
      set(key, true, Provenance::kFlag);
    else if (text == "false" || text == "0")
      set(key, false, Provenance::kFlag);
    else
      throw ConfigError("configuration key '" + key + "' expects a boolean value, got '" + text +
                        "'");
    return;
  }
  if (index == 3) {
    set(key, text, Provenance::kFlag);
    return;
  }
  try {
    std::size_t used = 0;
    if (index == 1) {
      const long v = std::stol(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      set(key, v, Provenance::kFlag);
    } else {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      set(key, v, Provenance::kFlag);
    }
  } catch (const std::exception&) {
    throw ConfigError("configuration key '" + key + "' expects a " + kind_name(index) +
                      " value, got '" + text + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& value = entry(key).value;
  if (!std::holds_alternative<bool>(value))
    throw ConfigError("configuration key '" + key + "' is not boolean");
  return std::get<bool>(value);
}

long RunConfig::get_int(const std::string& key) const {
  const auto& value = entry(key).value;
  if (!std::holds_alternative<long>(value))
    throw ConfigError("configuration key '" + key + "' is not an integer");
  return std::get<long>(value);
}

double RunConfig::get_double(const std::string& key) const {
  const auto& value = entry(key).value;
  if (std::holds_alternative<double>(value)) return std::get<double>(value);
  if (std::holds_alternative<long>(value)) return static_cast<double>(std::get<long>(value));
  throw ConfigError("configuration key '" + key + "' is not numeric");
}

const std::string& RunConfig::get_string(const std::string& key) const {
  const auto& value = entry(key).value;
  if (!std::holds_alternative<std::string>(value))
    throw ConfigError("configuration key '" + key + "' is not a string");
  return std::get<std::string>(value);
}

Provenance RunConfig::provenance(const std::string& key) const { return entry(key).provenance; }

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [key, _] : entries_) out.push_back(key);
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, entry] : entries_) {
    nlohmann::json* node = &out;
    std::string rest = key;
    for (std::size_t dot = rest.find('.'); dot != std::string::npos; dot = rest.find('.')) {
      node = &(*node)[rest.substr(0, dot)];
      rest = rest.substr(dot + 1);
    }
    if (std::holds_alternative<bool>(entry.value))
      (*node)[rest] = std::get<bool>(entry.value);
    else if (std::holds_alternative<long>(entry.value))
      (*node)[rest] = std::get<long>(entry.value);
    else if (std::holds_alternative<double>(entry.value))
      (*node)[rest] = std::get<double>(entry.value);
    else
      (*node)[rest] = std::get<std::string>(entry.value);
  }
  return out;
}

nlohmann::json RunConfig::provenance_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, entry] : entries_) {
    switch (entry.provenance) {
      case Provenance::kDefault: out[key] = "default"; break;
      case Provenance::kFile: out[key] = "file"; break;
      case Provenance::kFlag: out[key] = "flag"; break;
    }
  }
  return out;
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV offset basis
  for (const auto& [key, entry] : entries_) {
    const std::string line = key + "=" + value_text(entry.value) + "\n";
    h = fnv1a64(line.data(), line.size(), h);
  }
  return h;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& message) { throw ConfigError(message); };

  if (get_int("data.window") < 1) fail("data.window must be positive");
  if (get_int("data.stride") < 1) fail("data.stride must be positive");

  const long embed = get_int("model.embed_dim");
  const long heads = get_int("model.heads");
  if (embed < 1 || get_int("model.depth") < 1 || heads < 1)
    fail("model dimensions must be positive");
  if (embed % heads != 0) fail("model.embed_dim must be divisible by model.heads");
  const double dropout = get_double("model.dropout");
  if (dropout < 0.0 || dropout >= 1.0) fail("model.dropout must lie in [0, 1)");
  if (get_int("model.ff_mult") < 1) fail("model.ff_mult must be positive");
  const auto& positional = get_string("model.positional");
  if (positional != "sinusoidal" && positional != "learned")
    fail("model.positional must be 'sinusoidal' or 'learned'");
  if (get_int("model.max_positions") < get_int("data.window"))
    fail("model.max_positions must cover data.window");
  if (get_int("model.max_table_rows") < 2) fail("model.max_table_rows must be at least 2");

  if (get_double("train.lr") <= 0.0) fail("train.lr must be positive");
  if (get_double("train.weight_decay") < 0.0) fail("train.weight_decay must be non-negative");
  for (const char* key : {"train.beta1", "train.beta2"}) {
    const double beta = get_double(key);
    if (beta < 0.0 || beta >= 1.0) fail(std::string(key) + " must lie in [0, 1)");
  }
  if (get_double("train.eps") <= 0.0) fail("train.eps must be positive");
  if (get_int("train.epochs") < 1) fail("train.epochs must be positive");
  if (get_double("train.eta_min") < 0.0) fail("train.eta_min must be non-negative");
  if (get_int("train.patience") < 1) fail("train.patience must be positive");
  if (get_double("train.min_improvement") < 0.0)
    fail("train.min_improvement must be non-negative");
  if (get_int("train.batch_subjects") < 1) fail("train.batch_subjects must be positive");
  if (get_int("train.windows_per_subject") < 1)
    fail("train.windows_per_subject must be positive");
  if (get_int("train.t_past") < 1 || get_int("train.t_future") < 1)
    fail("train.t_past and train.t_future must be positive");

  if (!get_bool("objective.lc") && !get_bool("objective.tc") && !get_bool("objective.uicd"))
    fail("at least one pretraining objective must be enabled");
  if (get_bool("objective.tc") &&
      get_int("data.window") != get_int("train.t_past") + get_int("train.t_future"))
    fail("data.window must equal train.t_past + train.t_future while the continuity objective "
         "is enabled");

  const double mask_ratio = get_double("mask.ratio");
  if (mask_ratio <= 0.0 || mask_ratio > 1.0) fail("mask.ratio must lie in (0, 1]");
  if (get_int("mask.seg_min") < 1 || get_int("mask.seg_max") < get_int("mask.seg_min"))
    fail("mask segment bounds are empty");
  const double tc_ratio = get_double("tc.ratio");
  if (tc_ratio <= 0.0 || tc_ratio > 1.0) fail("tc.ratio must lie in (0, 1]");

  if (get_int("uicd.queries") < 1) fail("uicd.queries must be positive");
  const double query_ratio = get_double("uicd.query_mask_ratio");
  if (query_ratio <= 0.0 || query_ratio > 1.0) fail("uicd.query_mask_ratio must lie in (0, 1]");
  if (get_int("uicd.seg_min") < 1 || get_int("uicd.seg_max") < get_int("uicd.seg_min"))
    fail("uicd segment bounds are empty");
  if (get_int("uicd.max_rows") < 2) fail("uicd.max_rows must be at least 2");
  const auto& support = get_string("uicd.support");
  if (support != "random" && support != "nearby")
    fail("uicd.support must be 'random' or 'nearby'");

  for (const char* key : {"loss.lc", "loss.tc", "loss.uicd"})
    if (get_double(key) < 0.0) fail(std::string(key) + " must be non-negative");

  const auto& eval_objective = get_string("eval.objective");
  if (eval_objective != "lc" && eval_objective != "tc")
    fail("eval.objective must be 'lc' or 'tc'");
  if (get_int("eval.batch_windows") < 1) fail("eval.batch_windows must be positive");

  const auto& task = get_string("probe.task");
  if (task != "classification" && task != "regression")
    fail("probe.task must be 'classification' or 'regression'");
  const auto& head = get_string("probe.head");
  if (head != "auto" && head != "linear" && head != "mlp")
    fail("probe.head must be 'auto', 'linear', or 'mlp'");
  if (get_double("probe.lr") <= 0.0) fail("probe.lr must be positive");
  if (get_int("probe.epochs") < 1 || get_int("probe.patience") < 1)
    fail("probe.epochs and probe.patience must be positive");

  if (get_int("reconstruct.window") < 0) fail("reconstruct.window must be non-negative");

  if (get_int("gen.subjects") < 2) fail("gen.subjects must be at least 2");
  if (get_int("gen.trials_min") < 1 || get_int("gen.trials_max") < get_int("gen.trials_min"))
    fail("gen trial count range is empty");
  if (get_int("gen.length_min") < 2 || get_int("gen.length_max") < get_int("gen.length_min"))
    fail("gen trial length range is empty");
  if (get_int("gen.harmonics") < 2) fail("gen.harmonics must be at least 2");
  if (get_double("gen.period_min") <= 0.0 ||
      get_double("gen.period_max") < get_double("gen.period_min"))
    fail("gen period range is empty");
  if (get_double("gen.noise_min") < 0.0 ||
      get_double("gen.noise_max") < get_double("gen.noise_min"))
    fail("gen noise range is empty");
  const double missing = get_double("gen.missing_rate");
  if (missing < 0.0 || missing > 0.3) fail("gen.missing_rate must lie in [0, 0.3]");
  for (const char* key : {"gen.validation_fraction", "gen.test_fraction"}) {
    const double fraction = get_double(key);
    if (fraction < 0.0 || fraction > 0.5) fail(std::string(key) + " must lie in [0, 0.5]");
  }
  if (get_int("seed") < 0) fail("seed must be non-negative");
}

nlohmann::json build_manifest(const RunConfig& config, const std::string& command) {
  nlohmann::json manifest;
  manifest["version"] = kVersionString;
  manifest["command"] = command;
  manifest["seed"] = config.get_int("seed");
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(config.hash()));
  manifest["config_hash"] = buf;
  manifest["config"] = config.to_json();
  manifest["provenance"] = config.provenance_json();
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const RunConfig& config,
                    const std::string& command) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest to " + path.string());
  out << build_manifest(config, command).dump(2) << '\n';
  if (!out) throw DataError("failed writing manifest to " + path.string());
}

}  // namespace tsfm
