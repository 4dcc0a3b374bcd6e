#pragma once

#include <map>
#include <string>
#include <vector>

#include "oatlab/data.hpp"
#include "oatlab/model.hpp"
#include "oatlab/training.hpp"

namespace oatlab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// key=value run configuration ('#' starts a comment). Every key has a
/// documented default; unknown keys are rejected.
struct RunConfig {
  std::map<std::string, std::string> values;

  static RunConfig defaults();
  /// Defaults, then file entries, then command-line overrides.
  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {});
  static RunConfig from_overrides(const std::vector<std::string>& overrides);

  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> real_list(const std::string& key) const;

  TrainMode mode() const;
  TrainConfig train_config() const;
  ModelSpec model_spec() const;

  Dataset train_dataset() const;
  Dataset test_dataset() const;

  /// One line per key: "key=default  # description".
  static std::string documented_defaults();
};

}  // namespace oatlab
