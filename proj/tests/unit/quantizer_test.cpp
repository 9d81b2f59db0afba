#include "ctrlsynth/quantizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ctrlsynth/error.hpp"
#include "test_util.hpp"

namespace ctrlsynth {
namespace {

using testing::random_tensor;

const Tensor kTwoCodewords = Tensor::matrix(2, 2, {0.0, 0.0, 1.0, 1.0});

TEST(Quantizer, PicksNearestCodeword) {
  const auto q = quantize(Tensor::row({0.2, 0.1}), kTwoCodewords);
  EXPECT_EQ(q.index, 0u);
  EXPECT_EQ(q.z_q, Tensor::row({0.0, 0.0}));
}

TEST(Quantizer, TieGoesToLowestIndex) {
  EXPECT_EQ(quantize(Tensor::row({0.5, 0.5}), kTwoCodewords).index, 0u);
}

TEST(Quantizer, MatchesLinearScanOracle) {
  std::mt19937_64 rng(21);
  const Tensor book = random_tensor(rng, 64, 4);
  for (int i = 0; i < 1000; ++i) {
    const Tensor z = random_tensor(rng, 1, 4, 1.5);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < 64; ++m) {
      double d = 0.0;
      for (std::size_t j = 0; j < 4; ++j) d += std::pow(z[j] - book.at(m, j), 2);
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    ASSERT_EQ(quantize(z, book).index, best) << "query " << i;
  }
}

TEST(Quantizer, NeverFartherThanAnyCodeword) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + trial % 6;
    const Tensor book = random_tensor(rng, m, 3);
    const Tensor z = random_tensor(rng, 1, 3, 2.0);
    const auto q = quantize(z, book);
    auto dist = [&](std::size_t r) {
      double d = 0.0;
      for (std::size_t j = 0; j < 3; ++j) d += std::pow(z[j] - book.at(r, j), 2);
      return d;
    };
    for (std::size_t r = 0; r < m; ++r) EXPECT_LE(dist(q.index), dist(r));
  }
}

TEST(Quantizer, RejectsBadInput) {
  EXPECT_THROW(quantize(Tensor::row({std::nan(""), 0.0}), kTwoCodewords), NumericError);
  EXPECT_THROW(quantize(Tensor::row({0.0, 0.0, 0.0}), kTwoCodewords), ShapeError);
}

TEST(Quantizer, CodebookInitWithinGlorotBound) {
  std::mt19937_64 rng(23);
  const Codebook cb(64, 4, rng);
  EXPECT_EQ(cb.size(), 64u);
  EXPECT_EQ(cb.dim(), 4u);
  EXPECT_EQ(cb.vectors.name, "codebook");
  const double limit = std::sqrt(6.0 / 68.0);
  for (double v : cb.vectors.value.values()) EXPECT_LE(std::abs(v), limit);
}

TEST(UsageStats, SingleIndexHasZeroEntropy) {
  std::vector<IndexAssignment> as;
  for (std::size_t i = 0; i < 10; ++i) as.push_back({i, static_cast<int>(i % 2), 5});
  const auto s = usage_stats(as, 8);
  EXPECT_EQ(s.distinct_used, 1u);
  EXPECT_EQ(s.dead, 7u);
  EXPECT_EQ(s.label_entropy_bits.at(0), 0.0);
  EXPECT_EQ(s.label_entropy_bits.at(1), 0.0);
}

TEST(UsageStats, UniformOverFourIndicesIsTwoBits) {
  std::vector<IndexAssignment> as;
  for (std::size_t i = 0; i < 8; ++i) as.push_back({i, 3, i % 4});
  const auto s = usage_stats(as, 16);
  EXPECT_DOUBLE_EQ(s.label_entropy_bits.at(3), 2.0);
  EXPECT_EQ(s.label_indices_used.at(3), 4u);
}

TEST(UsageStats, HitsSumToSequenceCountAndEntropyIsBounded) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng() % 16;
    const std::size_t n = 1 + rng() % 100;
    std::vector<IndexAssignment> as;
    for (std::size_t i = 0; i < n; ++i) {
      as.push_back({i, static_cast<int>(rng() % 4), static_cast<std::size_t>(rng() % m)});
    }
    const auto s = usage_stats(as, m);
    std::size_t total = 0;
    for (auto h : s.hits) total += h;
    EXPECT_EQ(total, n);
    EXPECT_EQ(s.distinct_used + s.dead, m);
    for (const auto& [label, h] : s.label_entropy_bits) {
      EXPECT_GE(h, 0.0);
      EXPECT_LE(h, std::log2(static_cast<double>(m)) + 1e-12);
    }
  }
}

TEST(UsageStats, RejectsIndexOutsideCodebook) {
  const std::vector<IndexAssignment> as{{0, 0, 4}};
  EXPECT_THROW(usage_stats(as, 4), ConfigError);
}

}  // namespace
}  // namespace ctrlsynth
