#pragma once

// Experiment configuration: an INI document with sections [env], [algo],
// [train] and [output]. Every key has a typed default; unknown keys are
// rejected. Values are kept as their canonical text so that
// parse -> serialize -> parse is the identity.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tokrl/trainer.hpp"

namespace tokrl {

struct KeySpec {
  std::string key;  // "section.name"
  std::string default_value;
  std::string help;
};

class ExperimentConfig {
 public:
  static const std::vector<KeySpec>& schema();
  static std::string valid_keys();

  ExperimentConfig();  // all defaults

  static ExperimentConfig parse(std::string_view ini_text);
  static ExperimentConfig load(const std::filesystem::path& path);

  // Applies an INI document on top of this config.
  void merge_text(std::string_view ini_text);
  // "section.key=value"; UsageError for unknown keys, ConfigError for bad values.
  void apply_override(std::string_view assignment);
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  std::string serialize() const;
  std::uint64_t hash() const;

  std::vector<std::uint64_t> seeds() const;
  TrainConfig train_config(std::uint64_t seed) const;
  EnvFactory env_factory() const;
  std::string label() const;

  bool operator==(const ExperimentConfig&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

// Comma-separated list helpers shared by the CLI.
std::vector<std::string> split_list(std::string_view text, char sep = ',');

}  // namespace tokrl
