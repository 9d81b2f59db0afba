#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ctrlsynth::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigFailure = 1,
  kIoFailure = 2,
  kDivergence = 3,
  kPropositionFailure = 4,
  kMissingArtifact = 5,
};

struct GenDataArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
};

struct TrainArgs {
  std::string system;
  std::filesystem::path corpus;
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
};

struct VerifyArgs {
  std::vector<std::string> props{"1", "2", "3", "4", "elbo"};
  std::size_t instances = 100;
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> out;
  /// Adds the re-encoding check on the HZI checkpoint of this run.
  std::optional<std::filesystem::path> run;
};

struct EvalArgs {
  std::filesystem::path run;
  std::vector<std::string> schemes{"per-utterance", "per-style"};
  std::size_t knn_k = 5;
};

// Each returns an exit code for the non-exceptional outcome; library errors
// propagate and are mapped by the caller.
int cmd_gen_data(const GenDataArgs& args);
int cmd_train(const TrainArgs& args);
int cmd_verify(const VerifyArgs& args);
int cmd_eval(const EvalArgs& args);

/// Worker-thread cap from CTRL_SYNTH_THREADS; 1 when unset.
std::size_t thread_cap();

}  // namespace ctrlsynth::cli
