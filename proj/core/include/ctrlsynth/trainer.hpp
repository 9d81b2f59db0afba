#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctrlsynth/autodiff.hpp"
#include "ctrlsynth/error.hpp"
#include "ctrlsynth/nets.hpp"
#include "ctrlsynth/objectives.hpp"
#include "ctrlsynth/quantizer.hpp"
#include "ctrlsynth/synthdata.hpp"

namespace ctrlsynth {

enum class SystemId { kBot, kSup, kVqs, kVqr, kHzi, kHsi, kCvae };

const char* system_name(SystemId id);
/// Accepts the upper-case names (BOT, SUP, ...); throws ConfigError otherwise.
SystemId parse_system(const std::string& name);
/// The six systems of the headline comparison, in report order.
const std::vector<SystemId>& headline_systems();

enum class LatentScheme { kNone, kLabels, kCodebook, kLatentTable, kGaussianPosterior };
const char* scheme_name(LatentScheme s);

/// Raised when a loss or metric turns non-finite; carries the epoch.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : NumericError("diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t max_epochs = 400;
  std::size_t patience = 10;
  std::size_t batch_size = 8;
  AdamHyper adam;
  /// Plain SGD step size for per-sequence latent vectors.
  double latent_lr = 2e-4;
  /// SGD steps on held-out latents per epoch. One step matches the single
  /// per-epoch update the training latents get.
  std::size_t encode_steps = 1;
  std::size_t codebook_size = 64;
  std::size_t latent_dim = 4;
  double beta = 0.25;
  std::size_t cvae_samples = 1;
  std::size_t ff_units = 32;
  std::size_t rnn_units = 16;
  std::uint64_t seed = 1;
  /// Worker threads for per-sequence gradients; results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct SystemSpec {
  SystemId id = SystemId::kBot;
  ArchConfig arch;
  LatentScheme scheme = LatentScheme::kNone;
  std::optional<EncoderOrder> encoder_order;
  bool variance_head = false;
  /// Number of codewords; 0 unless the scheme is kCodebook.
  std::size_t codebook_size = 0;
  /// "none", "labels", "zeros", "signed-one-hot" or "encoder".
  std::string init_rule = "none";
};

SystemSpec make_system_spec(SystemId id, const CorpusConfig& corpus, const TrainConfig& config);

/// Label k -> +0.1 e_k for k < D, -0.1 e_(k-D) for D <= k < 2D.
Tensor signed_one_hot(int label, std::size_t dim);

/// Every trainable quantity of one system.
struct Model {
  SystemSpec spec;
  DecoderNet decoder;
  std::optional<EncoderNet> encoder;
  std::optional<Codebook> codebook;
  /// Per-sequence control vectors of the heuristic systems.
  LatentTable latents;

  /// Parameters touched by the weight optimiser (theta, phi, codebook).
  std::vector<ad::Parameter*> weight_parameters();
  std::vector<const ad::Parameter*> weight_parameters() const;
};

/// Fresh model: weights from `rng`; latent table zeros, or the signed label
/// code for HSI.
Model make_model(const SystemSpec& spec, const StyleCorpus& corpus, std::mt19937_64& rng);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every parameter listed in `grads`.
void adam_step(std::span<ad::Parameter* const> params, const ad::ParamGrads& grads,
               AdamState& state, const AdamHyper& hyper);
/// w <- w - lr * g.
void sgd_step(Tensor& w, const Tensor& g, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double test_mse = 0.0;
};

struct Checkpoint {
  static constexpr int kVersion = 1;
  TrainConfig config;
  Model model;
  /// Epoch whose state `model` holds (lowest validation MSE).
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;
  std::string rng_state;
  std::string corpus_fingerprint;

  const EpochRecord& best() const;
};

/// Latent fed to the decoder for a sequence; empty for BOT.
std::optional<Tensor> decoder_latent(Model& model, const Sequence& seq);

/// Per-frame MSE over a split: total squared error / total frames.
double split_mse(Model& model, const StyleCorpus& corpus, Split split);

/// Identifies a corpus by its sequences and config, independent of the truth block.
std::string corpus_fingerprint(const StyleCorpus& corpus);

/// Trains until `patience` epochs pass without a validation improvement and
/// returns the best-validation state. Throws DivergenceError on non-finite values.
Checkpoint train_system(const SystemSpec& spec, const StyleCorpus& corpus,
                        const TrainConfig& config);

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// "epoch,train_mse,val_mse,test_mse" rows.
std::string learning_curve_csv(const std::vector<EpochRecord>& history);

}  // namespace ctrlsynth
