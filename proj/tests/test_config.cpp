#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nlohmann/json.hpp"
#include "tsfm/config.hpp"
#include "tsfm/errors.hpp"

namespace fs = std::filesystem;
using namespace tsfm;
using nlohmann::json;

TEST_CASE("defaults carry the documented training recipe") {
  const RunConfig cfg = RunConfig::defaults();
  CHECK(cfg.get_double("train.lr") == 1e-4);
  CHECK(cfg.get_double("train.weight_decay") == 1e-3);
  CHECK(cfg.get_int("train.epochs") == 200);
  CHECK(cfg.get_int("train.patience") == 20);
  CHECK(cfg.get_int("model.embed_dim") == 128);
  CHECK(cfg.get_int("model.depth") == 8);
  CHECK(cfg.get_int("model.heads") == 4);
  CHECK(cfg.get_double("mask.ratio") == 0.8);
  CHECK(cfg.get_int("mask.seg_min") == 4);
  CHECK(cfg.get_int("mask.seg_max") == 16);
  CHECK(cfg.get_int("train.batch_subjects") == 32);
  CHECK(cfg.get_int("train.windows_per_subject") == 4);
  CHECK(cfg.get_int("data.window") == 100);
  CHECK(cfg.get_int("data.stride") == 10);
  CHECK(cfg.get_int("train.t_past") == 50);
  CHECK(cfg.get_int("train.t_future") == 50);
  CHECK(cfg.get_bool("objective.lc"));
  CHECK(cfg.get_bool("objective.tc"));
  CHECK(cfg.get_bool("objective.uicd"));
  CHECK(cfg.get_string("model.positional") == "sinusoidal");
  CHECK(cfg.provenance("train.lr") == Provenance::kDefault);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("file values override defaults and are tracked") {
  RunConfig cfg = RunConfig::defaults();
  cfg.apply_file(json::parse(R"({"model":{"depth":2,"dropout":0.0},"train":{"lr":1e-3}})"));
  CHECK(cfg.get_int("model.depth") == 2);
  CHECK(cfg.get_double("model.dropout") == 0.0);
  CHECK(cfg.get_double("train.lr") == 1e-3);
  CHECK(cfg.provenance("model.depth") == Provenance::kFile);
  CHECK(cfg.provenance("model.heads") == Provenance::kDefault);
}

TEST_CASE("unknown keys and wrong types are rejected") {
  RunConfig cfg = RunConfig::defaults();
  CHECK_THROWS_AS(cfg.apply_file(json::parse(R"({"model":{"depht":2}})")), ConfigError);
  CHECK_THROWS_AS(cfg.apply_file(json::parse(R"({"modle":{"depth":2}})")), ConfigError);
  CHECK_THROWS_AS(cfg.apply_file(json::parse(R"({"model":{"depth":"two"}})")), ConfigError);
  CHECK_THROWS_AS(cfg.apply_file(json::parse(R"({"model":{"depth":2.5}})")), ConfigError);
  CHECK_THROWS_AS(cfg.apply_file(json::parse(R"({"train":{"lr":true}})")), ConfigError);
  CHECK_THROWS_AS(cfg.apply_file(json::parse(R"({"mask":{"ratio":[0.8]}})")), ConfigError);
  // Integral JSON numbers are fine for double-typed keys.
  CHECK_NOTHROW(cfg.apply_file(json::parse(R"({"train":{"lr":1}})")));
  CHECK(cfg.get_double("train.lr") == 1.0);
}

TEST_CASE("flag overrides parse by registered type and win over files") {
  RunConfig cfg = RunConfig::defaults();
  cfg.apply_file(json::parse(R"({"model":{"depth":2}})"));
  cfg.apply_flag("model.depth", "5");
  cfg.apply_flag("model.dropout", "0.25");
  cfg.apply_flag("model.pre_norm", "false");
  cfg.apply_flag("data.dir", "/tmp/cohort");
  CHECK(cfg.get_int("model.depth") == 5);
  CHECK(cfg.get_double("model.dropout") == 0.25);
  CHECK_FALSE(cfg.get_bool("model.pre_norm"));
  CHECK(cfg.get_string("data.dir") == "/tmp/cohort");
  CHECK(cfg.provenance("model.depth") == Provenance::kFlag);

  CHECK_THROWS_AS(cfg.apply_flag("model.depth", "2x"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_flag("model.dropout", "high"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_flag("model.pre_norm", "maybe"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_flag("no.such.key", "1"), ConfigError);
}

TEST_CASE("validation rejects inconsistent cross-field settings") {
  auto broken = [](const char* key, const char* value) {
    RunConfig cfg = RunConfig::defaults();
    cfg.apply_flag(key, value);
    return cfg;
  };
  CHECK_THROWS_AS(broken("model.heads", "3").validate(), ConfigError);  // 128 % 3 != 0
  CHECK_THROWS_AS(broken("model.dropout", "1.0").validate(), ConfigError);
  CHECK_THROWS_AS(broken("train.lr", "0").validate(), ConfigError);
  CHECK_THROWS_AS(broken("mask.ratio", "0").validate(), ConfigError);
  CHECK_THROWS_AS(broken("mask.seg_min", "20").validate(), ConfigError);  // above seg_max
  CHECK_THROWS_AS(broken("probe.task", "ranking").validate(), ConfigError);
  CHECK_THROWS_AS(broken("eval.objective", "mask").validate(), ConfigError);
  CHECK_THROWS_AS(broken("model.positional", "rotary").validate(), ConfigError);
  CHECK_THROWS_AS(broken("uicd.support", "all").validate(), ConfigError);
  CHECK_THROWS_AS(broken("gen.missing_rate", "0.5").validate(), ConfigError);
  CHECK_THROWS_AS(broken("data.window", "80").validate(), ConfigError);  // != t_past + t_future

  // The continuity window constraint only binds while that objective is on.
  RunConfig cfg = RunConfig::defaults();
  cfg.apply_flag("objective.tc", "false");
  cfg.apply_flag("data.window", "80");
  CHECK_NOTHROW(cfg.validate());

  RunConfig none = RunConfig::defaults();
  none.apply_flag("objective.lc", "false");
  none.apply_flag("objective.tc", "false");
  none.apply_flag("objective.uicd", "false");
  CHECK_THROWS_AS(none.validate(), ConfigError);
}

TEST_CASE("resolved configs round-trip through json with a stable hash") {
  RunConfig cfg = RunConfig::defaults();
  cfg.apply_flag("model.depth", "3");
  cfg.apply_flag("train.lr", "0.002");
  const json dumped = cfg.to_json();

  RunConfig reloaded = RunConfig::defaults();
  reloaded.apply_file(dumped);
  for (const auto& key : cfg.keys()) {
    INFO(key);
    CHECK(cfg.to_json() == reloaded.to_json());
  }
  CHECK(cfg.hash() == reloaded.hash());

  RunConfig other = RunConfig::defaults();
  CHECK(other.hash() != cfg.hash());
}

TEST_CASE("manifests record the run and reproduce the config when reapplied") {
  RunConfig cfg = RunConfig::defaults();
  cfg.apply_flag("model.depth", "2");
  cfg.apply_flag("seed", "42");
  const json manifest = build_manifest(cfg, "pretrain");
  CHECK(manifest["version"] == kVersionString);
  CHECK(manifest["command"] == "pretrain");
  CHECK(manifest["seed"].get<long>() == 42);
  CHECK(manifest["config"]["model"]["depth"].get<int>() == 2);
  CHECK(manifest["provenance"]["model.depth"] == "flag");
  CHECK(manifest["provenance"]["model.heads"] == "default");
  CHECK(manifest.contains("config_hash"));

  // A manifest is itself a valid --config payload.
  RunConfig reloaded = RunConfig::defaults();
  reloaded.apply_file(manifest);
  CHECK(reloaded.get_int("model.depth") == 2);
  CHECK(reloaded.get_int("seed") == 42);
  CHECK(reloaded.hash() == cfg.hash());
}

TEST_CASE("manifest files are written and readable from disk") {
  RunConfig cfg = RunConfig::defaults();
  cfg.apply_flag("model.depth", "2");
  const fs::path dir = fs::temp_directory_path() / "tsfm_config_manifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_manifest(dir / "manifest.json", cfg, "pretrain");

  RunConfig reloaded = RunConfig::defaults();
  reloaded.apply_file(dir / "manifest.json");
  CHECK(reloaded.get_int("model.depth") == 2);
  CHECK(reloaded.hash() == cfg.hash());
  fs::remove_all(dir);
}

TEST_CASE("missing config files raise a config error") {
  RunConfig cfg = RunConfig::defaults();
  CHECK_THROWS_AS(cfg.apply_file(fs::path("/nonexistent/config.json")), ConfigError);
}
