#pragma once

#include <cstdint>
#include <string>

#include "mpccbf/sac.hpp"
#include "mpccbf/training.hpp"

namespace mpccbf {

inline constexpr int kCheckpointVersion = 1;

struct PolicyCheckpoint {
  int version = kCheckpointVersion;
  GaussianPolicy policy;
  ObsRanges ranges;
  ThetaBounds bounds;
  std::string config_hash;
};

/// Thrown for unreadable, malformed or version-mismatched checkpoints.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string checkpoint_to_string(const PolicyCheckpoint& ck);
PolicyCheckpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const std::string& path, const PolicyCheckpoint& ck);
PolicyCheckpoint load_checkpoint(const std::string& path);

}  // namespace mpccbf
