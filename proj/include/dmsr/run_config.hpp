#pragma once

#include "dmsr/config.hpp"
#include "dmsr/train.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dmsr::cli {

/// Every setting a command can take, resolved from defaults, an optional
/// config file and command-line flags (in that order of precedence).
struct Settings {
  ModelConfig model;
  bool blocks_set = false;  // otherwise blocks follow the backbone default

  int epochs = 20;
  std::uint64_t seed = 0;
  train::AdamOptions adam;
  double x_max = 1.0;

  double noise_sigma = 0.04;
  int synthetic = 0;
  long height = 64;
  long width = 64;
  std::string manifest;
  std::string data_dir;

  /// Apply one dotted `key = value` setting. Unknown keys and malformed
  /// values raise ConfigError.
  void set(const std::string& key, const std::string& value);

  /// Model config with the backbone-dependent block default applied, validated.
  ModelConfig resolved_model() const;

  /// Effective settings as sorted key/value pairs.
  std::map<std::string, std::string> echo() const;
};

/// Every key Settings::set accepts.
const std::vector<std::string>& known_keys();

/// Flat `key = value` lines, `#` comments, blank lines ignored. Returned in
/// file order.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& origin = "config");
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

/// `key = value` text of an echo() map.
std::string format_echo(const std::map<std::string, std::string>& echo);

}  // namespace dmsr::cli
