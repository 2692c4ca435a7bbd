#pragma once

#include <filesystem>
#include <string>

#include "datml/compute/param_set.hpp"
#include "datml/error.hpp"

namespace datml::inline DATML_ABI {

class CheckpointError : public Error {
 public:
  CheckpointError(const std::filesystem::path& path, const std::string& what)
      : Error(path.string() + ": " + what), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

class CheckpointKindMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncated : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Manifest records disagree with each other, with the payload or with the
/// parameters they are loaded into.
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  std::string kind;
  std::string fingerprint;
  /// Model configuration as a JSON object text.
  std::string config;
  ParamSet params;
};

/// Writes `<path>.bin` (little-endian float32 values in parameter order)
/// and then the manifest `<path>.json`, each through a temporary file.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const std::string& kind,
                     const std::string& fingerprint, const std::string& config_json);
/// Loads `<path>.json` and its payload; rejects a different kind.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);
bool checkpoint_exists(const std::filesystem::path& path);

}  // namespace datml::inline DATML_ABI
