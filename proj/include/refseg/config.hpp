#pragma once

#include "refseg/model.hpp"
#include "refseg/training.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace refseg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Ordered `key = value` pairs.
using ConfigMap = std::map<std::string, std::string>;

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys and
/// lines without `=` are errors.
ConfigMap parse_config(std::string_view text);
ConfigMap read_config_file(const std::filesystem::path& path);
std::string format_config(const ConfigMap& config);

/// `model.*` keys. A `model.profile` key selects the base profile; other
/// keys override single sizes.
ConfigMap model_config(const ModelDims& dims);
ModelDims model_from_config(const ConfigMap& config);

/// `train.*` keys.
ConfigMap train_config(const TrainConfig& train);
TrainConfig train_from_config(const ConfigMap& config);

/// Everything `refseg train` consumes, merged from a config file and flags.
struct RunConfig {
  TrainConfig train;
  ModelDims dims;
  std::filesystem::path data;
  std::filesystem::path eval_data;
  std::filesystem::path out;
  bool resume = false;

  /// Rejects unknown keys and invalid values before anything is written.
  static RunConfig from(const ConfigMap& config);
  ConfigMap to_map() const;
  void validate() const;
};

}  // namespace refseg
