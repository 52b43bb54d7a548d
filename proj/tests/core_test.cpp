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

#include "mvs/core.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace mvs;
using mvs::testing::naive_hamming;
using mvs::testing::random_descriptor;
using mvs::testing::random_substring;

TEST(Hamming, IdentityIsZero) {
  std::mt19937_64 rng(1);
  const auto x = random_descriptor(rng);
  EXPECT_EQ(hamming_distance(x, x), 0u);
}

TEST(Hamming, ComplementIsFullWidth) {
  BinaryDescriptor zeros(256);
  BinaryDescriptor ones(256);
  for (std::size_t i = 0; i < 256; ++i) ones.set(i);
  EXPECT_EQ(hamming_distance(zeros, ones), 256u);
}

TEST(Hamming, MatchesBitLoopOnRandomPairs) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_descriptor(rng);
    const auto b = random_descriptor(rng);
    ASSERT_EQ(hamming_distance(a, b), naive_hamming(a, b));
    ASSERT_EQ(hamming_distance(a, b), hamming_distance(b, a));
  }
}

TEST(Hamming, TriangleInequality) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_descriptor(rng);
    const auto b = random_descriptor(rng);
    const auto c = random_descriptor(rng);
    ASSERT_LE(hamming_distance(a, c), hamming_distance(a, b) + hamming_distance(b, c));
  }
}

TEST(Hamming, WidthMismatchIsUsageError) {
  EXPECT_THROW(hamming_distance(BinaryDescriptor(256), BinaryDescriptor(128)), UsageError);
  EXPECT_THROW(hamming_distance_sub(Substring(64), Substring(32)), UsageError);
}

TEST(SubstringHamming, SmallAndRandom) {
  Substring a(4);
  Substring b(4);
  for (std::size_t i = 0; i < 4; ++i) b.set(i);
  EXPECT_EQ(hamming_distance_sub(a, a), 0u);
  EXPECT_EQ(hamming_distance_sub(a, b), 4u);

  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_substring(rng, 64);
    const auto y = random_substring(rng, 64);
    ASSERT_EQ(hamming_distance_sub(x, y), naive_hamming(x, y));
  }
}

TEST(PackedBits, ByteLayoutIsLsbFirst) {
  BinaryDescriptor d(16);
  d.set(0);
  d.set(9);
  const auto bytes = d.to_bytes();
  ASSERT_EQ(bytes.size(), 2u);
  EXPECT_EQ(bytes[0], 0x01);
  EXPECT_EQ(bytes[1], 0x02);
  EXPECT_EQ(BinaryDescriptor::from_bytes(bytes), d);
}

TEST(PackedBits, BytesRoundTripRandom) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto d = random_descriptor(rng);
    ASSERT_EQ(BinaryDescriptor::from_bytes(d.to_bytes()), d);
    ASSERT_EQ(d.count(), naive_hamming(d, BinaryDescriptor(256)));
  }
}

TEST(PackedBits, RejectsOversizedWidth) { EXPECT_THROW(BinaryDescriptor(512), UsageError); }

TEST(DescriptorWidth, Validation) {
  EXPECT_NO_THROW(validate_descriptor_width(256));
  EXPECT_NO_THROW(validate_descriptor_width(8));
  EXPECT_THROW(validate_descriptor_width(0), ConfigError);
  EXPECT_THROW(validate_descriptor_width(250), ConfigError);
  EXPECT_THROW(validate_descriptor_width(264), ConfigError);
}

TEST(Keypoint, Validity) {
  EXPECT_TRUE((Keypoint{0.0, 0.0, 1.0, 0.0}.valid()));
  EXPECT_FALSE((Keypoint{-1.0, 0.0, 1.0, 0.0}.valid()));
  EXPECT_FALSE((Keypoint{std::nan(""), 0.0, 1.0, 0.0}.valid()));
}
