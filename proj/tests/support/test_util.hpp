#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>

#include "ctrlsynth/nets.hpp"
#include "ctrlsynth/tensor.hpp"

namespace ctrlsynth::testing {

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                            double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t(rows, cols);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Tiny architecture for fast gradient checks.
inline ArchConfig small_arch() {
  ArchConfig a;
  a.linguistic_dim = 3;
  a.output_dim = 2;
  a.latent_dim = 2;
  a.ff_units = 4;
  a.rnn_units = 3;
  return a;
}

}  // namespace ctrlsynth::testing
