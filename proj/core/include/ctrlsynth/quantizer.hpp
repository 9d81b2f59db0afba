#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "ctrlsynth/autodiff.hpp"
#include "ctrlsynth/tensor.hpp"

namespace ctrlsynth {

/// M x D matrix of trainable codewords.
struct Codebook {
  ad::Parameter vectors;

  Codebook() = default;
  /// Small uniform random codewords, same scheme as the network weights.
  Codebook(std::size_t size, std::size_t dim, std::mt19937_64& rng,
           const std::string& name = "codebook");
  explicit Codebook(Tensor codewords, const std::string& name = "codebook");

  std::size_t size() const { return vectors.value.rows(); }
  std::size_t dim() const { return vectors.value.cols(); }
};

struct Quantized {
  std::size_t index = 0;
  Tensor z_q;
};

/// Nearest codeword by squared Euclidean distance; ties go to the lowest index.
/// Throws NumericError for non-finite input and ConfigError for an empty codebook.
Quantized quantize(const Tensor& z_e, const Tensor& codewords);

struct IndexAssignment {
  std::size_t sequence_id = 0;
  int label = 0;
  std::size_t index = 0;
};

struct UsageStats {
  std::size_t codebook_size = 0;
  std::vector<std::size_t> hits;
  std::size_t distinct_used = 0;
  std::size_t dead = 0;
  /// label -> number of distinct indices used by that label
  std::map<int, std::size_t> label_indices_used;
  /// label -> entropy (bits) of the index distribution within that label
  std::map<int, double> label_entropy_bits;
};

UsageStats usage_stats(std::span<const IndexAssignment> assignments, std::size_t codebook_size);

/// Shannon entropy in bits of a histogram; zero counts contribute nothing.
double entropy_bits(std::span<const std::size_t> counts);

}  // namespace ctrlsynth
