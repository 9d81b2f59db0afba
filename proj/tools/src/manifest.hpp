#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

namespace ctrlsynth::cli {

/// A required run artefact is absent; maps to exit code 5.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SystemEntry {
  std::string checkpoint;  // relative to the run directory
  std::string checkpoint_sha256;
  std::string curve;
  std::string curve_sha256;
  std::string config_sha256;
  double seconds = 0.0;
};

struct RunManifest {
  static constexpr int kVersion = 1;
  std::string tool_version;
  std::string corpus_path;  // absolute
  std::string corpus_sha256;
  std::map<std::string, SystemEntry> systems;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

std::filesystem::path manifest_path(const std::filesystem::path& run_dir);

/// Read-modify-write of <run>/manifest.json under an exclusive lock, so that
/// concurrent train invocations do not lose each other's entries.
void update_manifest(const std::filesystem::path& run_dir,
                     const std::function<void(RunManifest&)>& edit);

/// Loads the manifest and checks every listed file against its hash. Missing
/// manifest or files raise MissingArtifactError; hash mismatches CorruptFileError.
RunManifest load_verified_manifest(const std::filesystem::path& run_dir);

}  // namespace ctrlsynth::cli
