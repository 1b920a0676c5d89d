#pragma once

#include <array>
#include <string>

#include "mpccbf/merge_sim.hpp"
#include "mpccbf/sac.hpp"
#include "mpccbf/training.hpp"

namespace mpccbf {

/// Everything a run needs. A JSON file may set any subset of keys; the rest
/// keep these defaults.
struct AppConfig {
  ScenarioConfig scenario;
  SacHyperparams sac;
  RewardWeights reward;
  ThetaBounds theta_bounds = ThetaBounds::defaults();
  std::array<double, 4> preset_slopes{0.178, 0.562, 1.78, 5.62};
  double episode_time_cap = 60.0;  // training episodes [s]

  void validate() const;
  TrainingSetup training_setup() const;
  ControllerTheta preset(std::string_view name) const;
};

/// Throws ParseError (with line and column) for malformed text and
/// ValidationError for unknown keys, wrong types or broken invariants.
AppConfig parse_config(const std::string& text);
AppConfig load_config(const std::string& path);

/// Full, normalized form: every key present, fixed order.
std::string config_to_string(const AppConfig& cfg);
void save_config(const std::string& path, const AppConfig& cfg);

/// FNV-1a of the normalized form, as 16 hex digits.
std::string config_hash(const AppConfig& cfg);

}  // namespace mpccbf
