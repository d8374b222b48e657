#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbanflow/dataset.hpp"
#include "urbanflow/flow_oracle.hpp"
#include "urbanflow/scene.hpp"
#include "urbanflow/trainer.hpp"
#include "urbanflow/unet.hpp"

namespace urbanflow {

/// Flat run configuration.
///
/// File syntax is a TOML subset: `key = value` lines, `#` comments and
/// `[section]` headers that prefix the keys below them with "section.".
/// Strings may be quoted. Every key has a type and a default; unknown keys
/// and malformed values are ValidationErrors naming the key.
class Config {
 public:
  enum class Kind { Int, Float, Bool, String };
  struct Key {
    std::string name;
    Kind kind;
    std::string default_value;
    std::string help;
  };

  Config();

  static const std::vector<Key>& schema();

  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& source = "<text>");
  /// "key=value".
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  /// Overrides from URBANFLOW_<KEY> environment variables (dots become
  /// underscores, upper case) for keys starting with `prefix`.
  void apply_env(const std::string& prefix,
                 const std::function<std::optional<std::string>(const std::string&)>& getenv);

  std::int64_t get_int(const std::string& key) const;
  double get_float(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  bool is_default(const std::string& key) const;

  /// Every key with its resolved, typed value.
  nlohmann::json to_json() const;
  /// The same in file syntax; loading it reproduces this config.
  std::string to_text() const;

 private:
  const Key& key(const std::string& name) const;
  std::map<std::string, std::string> values_;
};

DomainSpec domain_spec(const Config& c);
SceneParams scene_params(const Config& c);
FlowConfig flow_config(const Config& c);
DatasetSpec dataset_spec(const Config& c);
ModelConfig model_config(const Config& c, Direction d);
TrainConfig train_config(const Config& c, Direction d);

}  // namespace urbanflow
