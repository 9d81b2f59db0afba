#include "ctrlsynth/quantizer.hpp"

#include <cmath>
#include <limits>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/nets.hpp"

namespace ctrlsynth {

Codebook::Codebook(std::size_t size, std::size_t dim, std::mt19937_64& rng,
                   const std::string& name)
    : vectors{name, glorot_uniform(size, dim, rng)} {}

Codebook::Codebook(Tensor codewords, const std::string& name)
    : vectors{name, std::move(codewords)} {}

Quantized quantize(const Tensor& z_e, const Tensor& codewords) {
  if (codewords.empty()) throw ConfigError("quantize: empty codebook");
  if (z_e.size() != codewords.cols()) {
    throw ShapeError("quantize: latent has " + std::to_string(z_e.size()) +
                     " values, codewords have " + std::to_string(codewords.cols()));
  }
  if (!z_e.all_finite()) throw NumericError("quantize: non-finite encoder output");
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < codewords.rows(); ++m) {
    double d = 0.0;
    for (std::size_t j = 0; j < codewords.cols(); ++j) {
      const double diff = z_e[j] - codewords.at(m, j);
      d += diff * diff;
    }
    if (d < best_dist) {
      best_dist = d;
      best = m;
    }
  }
  const auto row = codewords.row_span(best);
  return {best, Tensor::row({row.begin(), row.end()})};
}

double entropy_bits(std::span<const std::size_t> counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return h;
}

UsageStats usage_stats(std::span<const IndexAssignment> assignments, std::size_t codebook_size) {
  UsageStats stats;
  stats.codebook_size = codebook_size;
  stats.hits.assign(codebook_size, 0);
  std::map<int, std::vector<std::size_t>> per_label;
  for (const auto& a : assignments) {
    if (a.index >= codebook_size) {
      throw ConfigError("usage_stats: index " + std::to_string(a.index) +
                        " outside codebook of size " + std::to_string(codebook_size));
    }
    ++stats.hits[a.index];
    auto& h = per_label[a.label];
    if (h.empty()) h.assign(codebook_size, 0);
    ++h[a.index];
  }
  for (auto c : stats.hits) {
    if (c > 0) {
      ++stats.distinct_used;
    } else {
      ++stats.dead;
    }
  }
  for (const auto& [label, h] : per_label) {
    std::size_t used = 0;
    for (auto c : h) used += c > 0;
    stats.label_indices_used[label] = used;
    stats.label_entropy_bits[label] = entropy_bits(h);
  }
  return stats;
}

}  // namespace ctrlsynth
