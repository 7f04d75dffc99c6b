#pragma once

// Effective configuration of a CLI run: defaults, overridden by a key=value
// config file, overridden by command-line flags. Keys use underscores; the
// command line spells them with dashes.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rtn/model.hpp"
#include "rtn/training.hpp"

namespace rtn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { float32, float64 };

struct RunConfig {
  std::string dataset = "mnist";
  std::string data_dir;  // empty: RETINOTOPIC_DATA_DIR, then ./data
  std::string out_dir = "runs/latest";
  std::string resume;      // checkpoint to continue training from
  std::string checkpoint;  // checkpoint for eval / trace
  Precision precision = Precision::float32;
  std::size_t train_limit = 0;  // 0 = whole split
  std::size_t test_limit = 0;
  int log_every = 100;  // batches between progress lines; 0 silences them
  ModelConfig model;
  TrainConfig train;
};

using KeyValues = std::map<std::string, std::string>;

struct ConfigKey {
  std::string name;
  std::string help;
  bool is_flag = false;  // boolean; a bare command-line flag means true
};

/// Every recognised key, in a stable order.
const std::vector<ConfigKey>& config_keys();

/// Parses `key = value` lines; '#' starts a comment. Dashes in keys become
/// underscores. Throws ConfigError on malformed lines or repeated keys.
KeyValues parse_config_text(std::string_view text);
KeyValues read_config_file(const std::filesystem::path& path);

/// Applies values in key order; throws ConfigError on unknown keys or
/// unparsable values, naming the key.
void apply_config(RunConfig& cfg, const KeyValues& values);

/// Canonical text of every key; feeding it back through apply_config
/// reproduces the configuration.
KeyValues to_key_values(const RunConfig& cfg);

/// Source revision baked in at configure time ("unknown" outside git).
std::string build_id();

}  // namespace rtn
