// Copyright 2026 the mvsearch authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mvs/substring.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"

using namespace mvs;
using mvs::testing::naive_bit_stats;
using mvs::testing::random_descriptor;

namespace {

BinaryDescriptor from_bits(std::size_t width, std::initializer_list<std::size_t> set) {
  BinaryDescriptor d(width);
  for (auto b : set) d.set(b);
  return d;
}

// Ten 16-bit samples: bits 0 and 1 are identical copies with mean 0.5,
// bit 2 has mean 0.4 and is weakly correlated with bit 0, all other bits
// are constant (bit 15 is always 1).
std::vector<BinaryDescriptor> correlated_copies() {
  const int bit0[10] = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  const int bit2[10] = {1, 1, 0, 0, 0, 0, 0, 0, 1, 1};
  std::vector<BinaryDescriptor> out;
  for (int i = 0; i < 10; ++i) {
    BinaryDescriptor d(16);
    d.set(0, bit0[i]);
    d.set(1, bit0[i]);
    d.set(2, bit2[i]);
    d.set(15);
    out.push_back(d);
  }
  return out;
}

}  // namespace

TEST(BitStatistics, IdenticalSamplesAreConstant) {
  std::mt19937_64 rng(1);
  const auto d = random_descriptor(rng);
  const auto s = bit_statistics(std::vector{d, d});
  for (std::size_t i = 0; i < 256; ++i) {
    EXPECT_TRUE(s.means[i] == 0.0 || s.means[i] == 1.0);
    for (std::size_t j = 0; j < 256; ++j) EXPECT_EQ(s.corr(i, j), i == j ? 1.0 : 0.0);
  }
}

TEST(BitStatistics, CopiedBitsArePerfectlyCorrelated) {
  const auto s = bit_statistics(correlated_copies());
  EXPECT_DOUBLE_EQ(s.corr(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(s.means[2], 0.4);
}

TEST(BitStatistics, MatchesTwoPassOracle) {
  std::mt19937_64 rng(2);
  std::vector<BinaryDescriptor> descs;
  for (int i = 0; i < 100; ++i) descs.push_back(random_descriptor(rng, 64));
  // A constant bit and a correlated pair for good measure.
  for (auto& d : descs) {
    d.set(10, true);
    d.set(11, d.test(12));
  }
  const auto s = bit_statistics(descs);
  const auto o = naive_bit_stats(descs);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_NEAR(s.means[i], o.means[i], 1e-12);
    for (std::size_t j = 0; j < 64; ++j) ASSERT_NEAR(s.corr(i, j), o.corr[i][j], 1e-12) << i << "," << j;
  }
}

TEST(BitStatistics, NeedsTwoSamples) {
  EXPECT_THROW(bit_statistics(std::vector<BinaryDescriptor>{BinaryDescriptor(8)}), UsageError);
}

TEST(SelectBits, OnlyInformativeBitFirst) {
  // Bit 3 has mean 0.5; everything else is constant.
  std::vector<BinaryDescriptor> x{from_bits(16, {3, 7}), from_bits(16, {7}), from_bits(16, {3, 7}),
                                  from_bits(16, {7})};
  const auto sel = select_bits(detail::bit_statistics_unchecked(x), 1, 0.25, 0.05);
  EXPECT_EQ(sel.positions, std::vector<std::uint8_t>{3});
}

TEST(SelectBits, RejectsCorrelatedCopy) {
  const auto stats = bit_statistics(correlated_copies());
  ASSERT_LT(std::abs(stats.corr(0, 2)), 0.9);
  const auto sel = select_bits(stats, 2, 0.9, 0.05);
  EXPECT_EQ(sel.positions, (std::vector<std::uint8_t>{0, 2}));
  EXPECT_DOUBLE_EQ(sel.threshold, 0.9);
}

TEST(SelectBits, RelaxesThresholdUntilRowIsFull) {
  // Bits 0 and 1 are copies, so a full 16-bit row is only reachable once
  // the threshold exceeds 1.
  const auto stats = bit_statistics(correlated_copies());
  const auto sel = select_bits(stats, 16, 0.25, 0.05);
  EXPECT_EQ(sel.positions.size(), 16u);
  EXPECT_GT(sel.attempts, 1u);
  std::set<std::uint8_t> uniq(sel.positions.begin(), sel.positions.end());
  EXPECT_EQ(uniq.size(), 16u);
  for (auto a : sel.positions) {
    for (auto b : sel.positions) {
      if (a != b) {
        EXPECT_LT(std::abs(stats.corr(a, b)), sel.threshold);
      }
    }
  }
}

TEST(SelectBits, FullWidthIsPermutation) {
  std::mt19937_64 rng(3);
  std::vector<BinaryDescriptor> descs;
  for (int i = 0; i < 50; ++i) descs.push_back(random_descriptor(rng));
  const auto sel = select_bits(bit_statistics(descs), 256, 0.25, 0.05);
  std::set<int> uniq(sel.positions.begin(), sel.positions.end());
  EXPECT_EQ(uniq.size(), 256u);
}

TEST(SelectBits, AdmissionRespectsEntropyOrder) {
  std::mt19937_64 rng(4);
  std::vector<BinaryDescriptor> descs;
  for (int i = 0; i < 40; ++i) descs.push_back(random_descriptor(rng, 64));
  const auto stats = bit_statistics(descs);
  const auto sel = select_bits(stats, 16, 0.25, 0.05);
  for (std::size_t i = 1; i < sel.positions.size(); ++i) {
    const auto p = sel.positions[i - 1], q = sel.positions[i];
    EXPECT_LE(std::abs(stats.means[p] - 0.5), std::abs(stats.means[q] - 0.5));
  }
}

TEST(SelectBits, ConfigErrors) {
  const auto stats = bit_statistics(correlated_copies());
  EXPECT_THROW(select_bits(stats, 17, 0.25, 0.05), ConfigError);
  EXPECT_THROW(select_bits(stats, 4, 0.0, 0.05), ConfigError);
  EXPECT_THROW(select_bits(stats, 4, 0.25, 0.0), ConfigError);
}

TEST(BuildDictionary, PerWordRowsAndEmptyWordFallback) {
  // Word 0 = all zeros attracts every sample; word 1 = all ones stays empty.
  BinaryDescriptor ones(16);
  for (std::size_t b = 0; b < 16; ++b) ones.set(b);
  auto samples = correlated_copies();
  for (auto& s : samples) s.set(15, false);
  const Vocabulary v({BinaryDescriptor(16), ones});
  const auto build = build_dictionary_with_report(samples, v, 8, 0.9, 0.05);
  const auto row0 = build.dictionary.row(0);
  EXPECT_EQ(row0[0], 0);
  EXPECT_EQ(row0[1], 2);
  const auto row1 = build.dictionary.row(1);
  EXPECT_EQ(std::vector<std::uint8_t>(row1.begin(), row1.end()), (std::vector<std::uint8_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(build.cluster_sizes[0], 10u);
  EXPECT_EQ(build.cluster_sizes[1], 0u);
}

TEST(BuildDictionary, SelectedPairsBelowFinalThreshold) {
  std::mt19937_64 rng(5);
  std::vector<BinaryDescriptor> centroids, training;
  for (int i = 0; i < 8; ++i) centroids.push_back(random_descriptor(rng));
  for (int i = 0; i < 2000; ++i) training.push_back(random_descriptor(rng));
  const Vocabulary v(centroids);
  const auto build = build_dictionary_with_report(training, v, 64);
  for (WordId w = 0; w < 8; ++w) {
    std::vector<BinaryDescriptor> cluster;
    for (const auto& t : training)
      if (quantize(t, v) == w) cluster.push_back(t);
    ASSERT_GE(cluster.size(), 2u);
    const auto o = naive_bit_stats(cluster);
    const auto row = build.dictionary.row(w);
    std::set<std::uint8_t> uniq(row.begin(), row.end());
    ASSERT_EQ(uniq.size(), 64u);
    for (auto a : row) {
      for (auto b : row) {
        if (a != b) {
          ASSERT_LT(std::abs(o.corr[a][b]), build.final_thresholds[w]);
        }
      }
    }
  }
}

TEST(BuildDictionary, Errors) {
  const Vocabulary v({BinaryDescriptor(16), from_bits(16, {1})});
  EXPECT_THROW(build_dictionary({}, v, 8), ConfigError);
  const std::vector<BinaryDescriptor> x{BinaryDescriptor(16)};
  EXPECT_THROW(build_dictionary(x, v, 12), ConfigError);
  EXPECT_THROW(build_dictionary(x, v, 24), ConfigError);
}

TEST(Extract, HandExample) {
  const std::vector<std::uint8_t> row{4, 25, 70, 87};
  const auto d = from_bits(256, {4, 70});
  const auto s = extract(d, row);
  ASSERT_EQ(s.width(), 4u);
  EXPECT_TRUE(s.test(0));
  EXPECT_FALSE(s.test(1));
  EXPECT_TRUE(s.test(2));
  EXPECT_FALSE(s.test(3));
  EXPECT_EQ(s.byte(0), 0b0101);
}

TEST(Extract, ZerosStayZeros) {
  std::vector<std::uint8_t> row(64);
  std::iota(row.begin(), row.end(), 100);
  EXPECT_EQ(extract(BinaryDescriptor(256), row).count(), 0u);
}

TEST(Extract, MatchesIndexLoopAndIsProjection) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::uint8_t> all(256);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<std::uint8_t> row(all.begin(), all.begin() + 64);
    const auto d = random_descriptor(rng);
    const auto s = extract(d, row);
    for (std::size_t i = 0; i < 64; ++i) ASSERT_EQ(s.test(i), d.test(row[i]));
    ASSERT_EQ(extract(d, row), s);
  }
}

TEST(Extract, FullPermutationPreservesDistance) {
  std::mt19937_64 rng(7);
  std::vector<std::uint8_t> row(256);
  std::iota(row.begin(), row.end(), 0);
  std::shuffle(row.begin(), row.end(), rng);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_descriptor(rng), b = random_descriptor(rng);
    ASSERT_EQ(hamming_distance_sub(extract(a, row), extract(b, row)), hamming_distance(a, b));
  }
}

TEST(Extract, WordOutOfRange) {
  SubstringDictionary dict(16, 8, std::vector<std::uint8_t>{0, 1, 2, 3, 4, 5, 6, 7});
  EXPECT_THROW(extract(BinaryDescriptor(16), 1, dict), UsageError);
}

TEST(SubstringDictionary, RejectsBadRows) {
  EXPECT_THROW(SubstringDictionary(16, 8, std::vector<std::uint8_t>{0, 1, 2, 3, 4, 5, 6, 6}), UsageError);
  EXPECT_THROW(SubstringDictionary(16, 8, std::vector<std::uint8_t>{0, 1, 2, 3, 4, 5, 6, 16}), UsageError);
  EXPECT_THROW(SubstringDictionary(16, 4, std::vector<std::uint8_t>{0, 1, 2, 3}), ConfigError);
}
