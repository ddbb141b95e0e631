#pragma once

#include "noiserefine/core/errors.hpp"
#include "noiserefine/core/schedule.hpp"
#include "noiserefine/nets/networks.hpp"
#include "noiserefine/sampler/sampler.hpp"
#include "noiserefine/training/pairs.hpp"
#include "noiserefine/training/trainers.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nr {

/// Malformed configuration text, unknown key or unparsable value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every recognized key with its default, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Flat key=value configuration with dotted section names.
///
/// Lines are `key = value`; blank lines and lines starting with '#' are
/// ignored. Unknown keys are rejected. Every key has a default, so the
/// resolved form is always complete.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);

  /// Applies one `key=value` override.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  /// All keys, sorted, one `key=value` per line.
  std::string resolved() const;
  /// 16 hex digits identifying the resolved text.
  std::string hash() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

 private:
  std::map<std::string, std::string> values_;
};

NoiseSchedule schedule_from(const RunConfig& rc);
MlpSpec spec_from(const RunConfig& rc);
BaseTrainConfig base_config_from(const RunConfig& rc);
PairGenConfig pair_config_from(const RunConfig& rc);
RefinerTrainConfig refiner_config_from(const RunConfig& rc);
InversionConfig inversion_config_from(const RunConfig& rc);

}  // namespace nr
