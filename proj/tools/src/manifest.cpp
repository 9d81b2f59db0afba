#include "manifest.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <json.hpp>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/io.hpp"

namespace ctrlsynth::cli {

using Json = nlohmann::json;
namespace fs = std::filesystem;

std::string RunManifest::to_json() const {
  Json systems_json = Json::object();
  for (const auto& [name, e] : systems) {
    systems_json[name] = Json{{"checkpoint", e.checkpoint},
                              {"checkpoint_sha256", e.checkpoint_sha256},
                              {"curve", e.curve},
                              {"curve_sha256", e.curve_sha256},
                              {"config_sha256", e.config_sha256},
                              {"seconds", e.seconds}};
  }
  const Json j{{"version", kVersion},
               {"tool_version", tool_version},
               {"corpus", {{"path", corpus_path}, {"sha256", corpus_sha256}}},
               {"systems", systems_json}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  try {
    const Json j = Json::parse(text);
    if (j.at("version").get<int>() != kVersion) {
      throw CorruptFileError("manifest: unsupported version");
    }
    RunManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.corpus_path = j.at("corpus").at("path").get<std::string>();
    m.corpus_sha256 = j.at("corpus").at("sha256").get<std::string>();
    for (const auto& [name, e] : j.at("systems").items()) {
      m.systems[name] = SystemEntry{e.at("checkpoint").get<std::string>(),
                                    e.at("checkpoint_sha256").get<std::string>(),
                                    e.at("curve").get<std::string>(),
                                    e.at("curve_sha256").get<std::string>(),
                                    e.at("config_sha256").get<std::string>(),
                                    e.at("seconds").get<double>()};
    }
    return m;
  } catch (const Json::exception& e) {
    throw CorruptFileError(std::string("manifest: ") + e.what());
  }
}

fs::path manifest_path(const fs::path& run_dir) { return run_dir / "manifest.json"; }

namespace {

class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) {
      if (fd_ >= 0) ::close(fd_);
      throw IoError("cannot lock " + path.string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace

void update_manifest(const fs::path& run_dir, const std::function<void(RunManifest&)>& edit) {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create " + run_dir.string() + ": " + ec.message());
  const FileLock lock(run_dir / ".manifest.lock");
  RunManifest m;
  if (fs::exists(manifest_path(run_dir))) {
    m = RunManifest::from_json(read_text_file(manifest_path(run_dir)));
  }
  edit(m);
  write_text_file(manifest_path(run_dir), m.to_json());
}

RunManifest load_verified_manifest(const fs::path& run_dir) {
  if (!fs::exists(manifest_path(run_dir))) {
    throw MissingArtifactError("no manifest in " + run_dir.string());
  }
  RunManifest m = RunManifest::from_json(read_text_file(manifest_path(run_dir)));
  auto check = [](const fs::path& path, const std::string& sha, const std::string& what) {
    if (!fs::exists(path)) throw MissingArtifactError(what + " missing: " + path.string());
    if (sha256_file(path) != sha) {
      throw CorruptFileError(what + " does not match its manifest hash: " + path.string());
    }
  };
  check(m.corpus_path, m.corpus_sha256, "corpus");
  for (const auto& [name, e] : m.systems) {
    check(run_dir / e.checkpoint, e.checkpoint_sha256, name + " checkpoint");
    check(run_dir / e.curve, e.curve_sha256, name + " learning curve");
  }
  return m;
}

}  // namespace ctrlsynth::cli
