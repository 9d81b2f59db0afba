#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctrlsynth/nets.hpp"
#include "ctrlsynth/tensor.hpp"

namespace ctrlsynth {

/// Styled-sequence corpus generator settings.
struct CorpusConfig {
  std::size_t styles = 7;
  std::size_t per_style = 120;
  std::size_t vocab = 20;
  std::size_t min_len = 20;
  std::size_t max_len = 40;
  std::size_t embed_dim = 8;
  std::size_t output_dim = 12;
  /// Must be at least styles - 1 so the styles fit on a regular simplex.
  std::size_t style_dim = 6;
  double style_norm = 1.5;
  double noise_std = 0.1;
  /// Per-sequence Gaussian perturbation of the style vector.
  double jitter = 0.0;
  std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
  std::uint64_t seed = 7;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::string to_json() const;
  static CorpusConfig from_json(const std::string& text);
};

/// Ground-truth generator: x_t = tanh(A emb(l_t) + B s_k) + noise.
struct GeneratorTruth {
  Tensor emb;     // vocab x embed_dim
  Tensor a;       // embed_dim x output_dim (row-vector convention: e A)
  Tensor b;       // style_dim x output_dim
  Tensor styles;  // K x style_dim, one style vector per row

  Tensor style(std::size_t k) const;
  /// Noise-free mean output for a token sequence under style vector `s`.
  Tensor clean_output(std::span<const int> tokens, const Tensor& s) const;
};

struct Sequence {
  std::size_t id = 0;
  Split split = Split::kTrain;
  int label = 0;
  std::vector<int> tokens;
  Tensor linguistic;  // one-hot, T x vocab
  Tensor output;      // T x output_dim
};

struct StyleCorpus {
  CorpusConfig config;
  std::vector<Sequence> sequences;
  /// Present only when loaded for evaluation or label-consuming systems.
  std::optional<GeneratorTruth> truth;

  const Sequence& by_id(std::size_t id) const;
  std::vector<const Sequence*> split(Split s) const;
  const GeneratorTruth& require_truth() const;
};

/// Truth drawn from the seed alone, independent of sequence sampling.
GeneratorTruth make_truth(const CorpusConfig& config);

StyleCorpus generate_corpus(const CorpusConfig& config);

/// Irreducible per-frame MSE of the exact conditional mean: p * noise_std^2.
double mse_floor(const CorpusConfig& config);

/// Expected per-frame excess MSE of the best style-blind predictor, estimated
/// by Monte-Carlo over tokens, styles and (if set) style jitter.
double between_style_gap(const CorpusConfig& config, std::size_t samples = 10000,
                         std::uint64_t mc_seed = 1);

enum class TruthAccess { kWithout, kWith };

std::string corpus_to_json(const StyleCorpus& corpus);
void save_corpus(const StyleCorpus& corpus, const std::filesystem::path& path);
StyleCorpus load_corpus(const std::filesystem::path& path, TruthAccess access);
StyleCorpus corpus_from_json(const std::string& text, TruthAccess access);

}  // namespace ctrlsynth
