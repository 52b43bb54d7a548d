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

#include "mvs/index.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "oracles.hpp"

using namespace mvs;
using mvs::testing::random_descriptor;

namespace {

EngineState small_engine(std::size_t n_words = 16, std::size_t t_bits = 64, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<BinaryDescriptor> centroids, training;
  for (std::size_t i = 0; i < n_words; ++i) centroids.push_back(random_descriptor(rng));
  for (std::size_t i = 0; i < 40 * n_words; ++i) training.push_back(random_descriptor(rng));
  Vocabulary v(centroids);
  auto dict = build_dictionary(training, v, t_bits);
  return EngineState(std::move(v), std::move(dict));
}

std::vector<Feature> random_features(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> x(0.0, 640.0), y(0.0, 480.0);
  std::vector<Feature> out;
  for (std::size_t i = 0; i < n; ++i) {
    Feature f;
    f.keypoint = {static_cast<float>(x(rng)), static_cast<float>(y(rng)), 2.0, 1.0};
    f.descriptor = random_descriptor(rng);
    out.push_back(f);
  }
  return out;
}

}  // namespace

TEST(AddImage, EmptyImageOnlyBumpsCount) {
  auto s = small_engine();
  s.add_image(0, {});
  EXPECT_EQ(s.index().n_images(), 1u);
  EXPECT_EQ(s.index().total_entries(), 0u);
  EXPECT_EQ(s.index().features_per_image()[0], 0u);
}

TEST(AddImage, CentroidDescriptorLandsInItsList) {
  auto s = small_engine();
  Feature f;
  f.keypoint = {10.4, 20.6, 1.0, 0.0};
  f.descriptor = s.vocabulary().centroid(12);
  s.add_image(0, std::vector{f});
  EXPECT_EQ(s.index().postings(12).size(), 1u);
  EXPECT_EQ(s.index().total_entries(), 1u);
  const auto& e = s.index().postings(12)[0];
  EXPECT_EQ(e.x, 10);
  EXPECT_EQ(e.y, 21);
  EXPECT_EQ(s.index().doc_freq(12), 1u);
}

TEST(AddImage, CoordinatesRoundAndClamp) {
  EXPECT_EQ(quantize_coordinate(0.49), 0);
  EXPECT_EQ(quantize_coordinate(0.5), 1);
  EXPECT_EQ(quantize_coordinate(70000.0), 65535);
  EXPECT_EQ(quantize_coordinate(65534.6), 65535);
  EXPECT_EQ(quantize_coordinate(-3.0), 0);
}

TEST(AddImage, OrderAndWidthErrors) {
  auto s = small_engine();
  EXPECT_THROW(s.add_image(1, {}), UsageError);
  Feature f;
  f.descriptor = BinaryDescriptor(128);
  EXPECT_THROW(s.add_image(0, std::vector{f}), UsageError);
}

TEST(AddImage, CapacityIs65536Images) {
  auto s = small_engine(2, 8);
  for (std::uint32_t i = 0; i < kMaxImages; ++i) s.add_image(i, {});
  EXPECT_THROW(s.add_image(static_cast<std::uint32_t>(kMaxImages), {}), CapacityError);
}

TEST(Index, InvariantsAfterIndexing) {
  auto s = small_engine();
  std::mt19937_64 rng(2);
  std::vector<std::vector<Feature>> images;
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < 20; ++i) {
    images.push_back(random_features(rng, 30 + i));
    total += images.back().size();
    s.add_image(i, images.back());
  }
  EXPECT_EQ(s.index().total_entries(), total);
  for (WordId w = 0; w < 16; ++w) {
    std::set<std::uint16_t> imgs;
    for (const auto& e : s.index().postings(w)) {
      ASSERT_LT(e.image_id, 20);
      imgs.insert(e.image_id);
    }
    EXPECT_EQ(s.index().doc_freq(w), imgs.size());
    EXPECT_LE(s.index().doc_freq(w), 20u);
  }
  // Re-deriving substrings from the originals reproduces the stored ones.
  for (std::uint32_t i = 0; i < 20; ++i) {
    for (const auto& f : images[i]) {
      const WordId w = quantize(f.descriptor, s.vocabulary());
      const auto sub = extract(f.descriptor, w, s.dictionary());
      const auto list = s.index().postings(w);
      const bool found = std::any_of(list.begin(), list.end(), [&](const IndexEntry& e) {
        return e.image_id == i && e.substring == sub && e.x == quantize_coordinate(f.keypoint.x);
      });
      ASSERT_TRUE(found);
    }
  }
}

TEST(EngineFile, RoundTripIsIdentity) {
  auto s = small_engine();
  std::mt19937_64 rng(3);
  for (std::uint32_t i = 0; i < 10; ++i) s.add_image(i, random_features(rng, 50));
  s.add_image(10, {});
  const auto bytes = save_engine(s);
  const auto loaded = load_engine(std::span<const std::uint8_t>(bytes));
  EXPECT_EQ(loaded, s);
  EXPECT_EQ(save_engine(loaded), bytes);
  for (std::uint32_t i = 0; i < 11; ++i) EXPECT_EQ(loaded.index().extent(i), s.index().extent(i));
}

TEST(EngineFile, SizeIsPredictable) {
  auto s = small_engine(16, 32);
  std::mt19937_64 rng(4);
  for (std::uint32_t i = 0; i < 7; ++i) s.add_image(i, random_features(rng, 13 * i));
  const auto layout = engine_layout(s);
  std::size_t expect = kEngineHeaderBytes + 16 * 32 + 16 * 32 + 4 * 16 + 4 * 7;
  for (WordId w = 0; w < 16; ++w) expect += 8 + s.index().postings(w).size() * (6 + 32 / 8);
  EXPECT_EQ(layout.total(), expect);
  EXPECT_EQ(save_engine(s).size(), expect);
}

TEST(EngineFile, FullScaleBlocks) {
  std::mt19937_64 rng(5);
  std::vector<BinaryDescriptor> centroids;
  for (int i = 0; i < 1024; ++i) centroids.push_back(random_descriptor(rng));
  std::vector<std::uint8_t> table;
  for (int w = 0; w < 1024; ++w)
    for (int b = 0; b < 64; ++b) table.push_back(static_cast<std::uint8_t>(b));
  EngineState s(Vocabulary(centroids), SubstringDictionary(256, 64, table));
  const auto layout = engine_layout(s);
  EXPECT_EQ(layout.vocabulary, 32768u);
  EXPECT_EQ(layout.dictionary, 65536u);
  EXPECT_EQ(entry_bytes(64), 14u);
}

TEST(EngineFile, FormatErrors) {
  auto s = small_engine();
  std::mt19937_64 rng(6);
  s.add_image(0, random_features(rng, 20));
  const auto good = save_engine(s);

  auto bad = good;
  bad[0] = 'X';
  try {
    load_engine(std::span<const std::uint8_t>(bad));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }

  bad = good;
  bad[4] = 2;
  try {
    load_engine(std::span<const std::uint8_t>(bad));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }

  // Truncation anywhere past the header fails with a format error.
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    std::vector<std::uint8_t> t(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(load_engine(std::span<const std::uint8_t>(t)), FormatError) << cut;
  }

  // Corrupt the last features_per_image count.
  bad = good;
  bad[bad.size() - 4] ^= 1;
  try {
    load_engine(std::span<const std::uint8_t>(bad));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), good.size() - 4);
  }

  bad = good;
  bad.push_back(0);
  EXPECT_THROW(load_engine(std::span<const std::uint8_t>(bad)), FormatError);
}

TEST(DescriptorFile, EmptyAndSingleRecord) {
  const auto empty = encode_descriptor_file(256, {});
  EXPECT_EQ(empty.size(), 11u);
  const auto e = decode_descriptor_file(empty);
  EXPECT_TRUE(e.features.empty());
  EXPECT_EQ(e.info.d_bits, 256u);

  std::mt19937_64 rng(7);
  Feature f;
  f.keypoint = {10.5, 20.25, 1.5, 0.75};
  f.descriptor = random_descriptor(rng);
  const auto one = decode_descriptor_file(encode_descriptor_file(256, std::vector{f}));
  ASSERT_EQ(one.features.size(), 1u);
  EXPECT_EQ(one.features[0], f);
}

TEST(DescriptorFile, RoundTripRandom) {
  std::mt19937_64 rng(8);
  const auto features = random_features(rng, 1000);
  const auto bytes = encode_descriptor_file(256, features);
  EXPECT_EQ(bytes.size(), 11u + 1000u * (16u + 32u));
  EXPECT_EQ(decode_descriptor_file(bytes, 256).features, features);
}

TEST(DescriptorFile, Errors) {
  std::mt19937_64 rng(9);
  const auto bytes = encode_descriptor_file(256, random_features(rng, 3));
  EXPECT_THROW(decode_descriptor_file(bytes, 128), FormatError);

  std::vector<std::uint8_t> trunc(bytes.begin(), bytes.end() - 5);
  try {
    decode_descriptor_file(trunc);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 11u + 2u * 48u + 16u);
  }

  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_descriptor_file(bad), FormatError);

  Feature neg;
  neg.keypoint = {-1.0, 0.0, 1.0, 0.0};
  neg.descriptor = BinaryDescriptor(256);
  EXPECT_THROW(decode_descriptor_file(encode_descriptor_file(256, std::vector{neg})), FormatError);
}
