#pragma once

#include <filesystem>
#include <string>

#include "loancast/model.hpp"
#include "loancast/trainer.hpp"

namespace loancast {

// Run configuration: model + training hyper-parameters + file locations.
// Serialized as line-oriented `key = value` under [model], [train] and
// [paths] sections; unknown keys are rejected. The serialized form parses
// back to an identical config.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_cube;
  std::string val_cube;
  std::string out_dir;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);

// Sets one dotted key, e.g. ("model.c1", "8") or ("train.epochs", "2").
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace loancast
