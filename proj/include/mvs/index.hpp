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

#pragma once

/// \file index.hpp
/// Inverted index of compact reference entries, engine state, and the two
/// binary file formats (descriptor files and engine/index files).
///
/// Descriptor file, little-endian:
///   "BFDS" | u8 version=1 | u16 D | u32 count |
///   count x (f32 x, f32 y, f32 scale, f32 angle, D/8 descriptor bytes)
///
/// Engine file, little-endian:
///   "BFIX" | u8 version=1 | u16 D | u32 N | u16 T | u32 n_images |
///   vocabulary N*D/8 | dictionary N*T |
///   N x (u64 entry_count, entry_count x (u16 image, u16 x, u16 y, T/8 substring)) |
///   doc_freq N x u32 | features_per_image n_images x u32

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvs/core.hpp"
#include "mvs/detail/byte_io.hpp"
#include "mvs/substring.hpp"
#include "mvs/vocabulary.hpp"

namespace mvs {

class EngineState;
inline EngineState load_engine(std::span<const std::uint8_t> data);

inline constexpr std::size_t kMaxImages = 65536;
inline constexpr std::uint8_t kFormatVersion = 1;

struct IndexEntry {
  std::uint16_t image_id = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  Substring substring;

  friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

/// Serialized bytes per posting entry: 2 + 2 + 2 + T/8.
constexpr std::size_t entry_bytes(std::size_t t_bits) noexcept { return 6 + t_bits / 8; }

/// Rounds a pixel coordinate to the 16-bit grid stored in the index.
inline std::uint16_t quantize_coordinate(double v) noexcept {
  if (!(v > 0.0)) return 0;
  const double r = std::round(v);
  return r >= 65535.0 ? std::uint16_t{65535} : static_cast<std::uint16_t>(r);
}

/// Reference image extent in pixels, derived from indexed keypoints.
struct ImageExtent {
  double width = 0.0;
  double height = 0.0;
  friend bool operator==(const ImageExtent&, const ImageExtent&) = default;
};

class InvertedIndex {
 public:
  InvertedIndex() = default;
  explicit InvertedIndex(std::size_t n_words) : postings_(n_words), doc_freq_(n_words, 0) {}

  std::size_t n_words() const noexcept { return postings_.size(); }
  std::size_t n_images() const noexcept { return features_per_image_.size(); }

  std::span<const IndexEntry> postings(WordId w) const { return postings_.at(w); }
  std::uint32_t doc_freq(WordId w) const { return doc_freq_.at(w); }
  std::span<const std::uint32_t> doc_freqs() const noexcept { return doc_freq_; }
  std::span<const std::uint32_t> features_per_image() const noexcept { return features_per_image_; }

  /// Max rounded coordinate + 1 over the image's entries.
  ImageExtent extent(std::uint32_t image_id) const { return extents_.at(image_id); }

  std::size_t total_entries() const noexcept {
    std::size_t n = 0;
    for (const auto& p : postings_) n += p.size();
    return n;
  }

  /// Appends one image; `entries` are (word, entry) pairs for that image.
  void append_image(std::span<const std::pair<WordId, IndexEntry>> entries) {
    if (n_images() >= kMaxImages) {
      throw CapacityError("inverted index is full (" + std::to_string(kMaxImages) + " images)");
    }
    const auto id = static_cast<std::uint16_t>(n_images());
    ImageExtent ext;
    for (const auto& [w, e] : entries) {
      auto& list = postings_.at(w);
      if (list.empty() || list.back().image_id != id) ++doc_freq_[w];
      list.push_back(e);
      list.back().image_id = id;
      ext.width = std::max(ext.width, e.x + 1.0);
      ext.height = std::max(ext.height, e.y + 1.0);
    }
    features_per_image_.push_back(static_cast<std::uint32_t>(entries.size()));
    extents_.push_back(ext);
  }

  friend bool operator==(const InvertedIndex& a, const InvertedIndex& b) {
    return a.postings_ == b.postings_ && a.doc_freq_ == b.doc_freq_ &&
           a.features_per_image_ == b.features_per_image_;
  }

 private:
  friend class EngineState;
  friend EngineState load_engine(std::span<const std::uint8_t>);

  std::vector<std::vector<IndexEntry>> postings_;
  std::vector<std::uint32_t> doc_freq_;
  std::vector<std::uint32_t> features_per_image_;
  std::vector<ImageExtent> extents_;
};

struct EngineParams {
  std::size_t d_bits = 256;
  std::size_t n_words = 1024;
  std::size_t t_bits = 64;
  friend bool operator==(const EngineParams&, const EngineParams&) = default;
};

/// Vocabulary + substring dictionary + inverted index. Images are appended
/// with dense ids starting at 0; a const EngineState is safe to search from
/// many threads.
class EngineState {
 public:
  EngineState() = default;

  EngineState(Vocabulary vocab, SubstringDictionary dict)
      : vocab_(std::move(vocab)), dict_(std::move(dict)), index_(vocab_.size()) {
    if (dict_.n_words() != vocab_.size()) {
      throw UsageError("dictionary has " + std::to_string(dict_.n_words()) + " rows but vocabulary has " +
                       std::to_string(vocab_.size()) + " words");
    }
    if (dict_.d_bits() != vocab_.width()) {
      throw UsageError("dictionary and vocabulary disagree on descriptor width");
    }
  }

  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  const SubstringDictionary& dictionary() const noexcept { return dict_; }
  const InvertedIndex& index() const noexcept { return index_; }
  EngineParams params() const noexcept { return {vocab_.width(), vocab_.size(), dict_.t_bits()}; }

  /// Quantizes, extracts and appends every feature of image `image_id`,
  /// which must equal the current image count.
  void add_image(std::uint32_t image_id, std::span<const Feature> features) {
    if (image_id != index_.n_images()) {
      throw UsageError("image ids are dense and append-only: expected " +
                       std::to_string(index_.n_images()) + ", got " + std::to_string(image_id));
    }
    if (image_id >= kMaxImages) {
      throw CapacityError("image id " + std::to_string(image_id) + " does not fit in 16 bits");
    }
    std::vector<std::pair<WordId, IndexEntry>> entries;
    entries.reserve(features.size());
    for (const auto& f : features) {
      if (f.descriptor.width() != vocab_.width()) {
        throw UsageError("descriptor width " + std::to_string(f.descriptor.width()) +
                         " does not match engine width " + std::to_string(vocab_.width()));
      }
      const WordId w = vocab_.nearest(f.descriptor).first;
      entries.push_back({w, IndexEntry{static_cast<std::uint16_t>(image_id),
                                       quantize_coordinate(f.keypoint.x),
                                       quantize_coordinate(f.keypoint.y),
                                       extract(f.descriptor, dict_.row(w))}});
    }
    index_.append_image(entries);
  }

  friend bool operator==(const EngineState&, const EngineState&) = default;

 private:
  friend EngineState load_engine(std::span<const std::uint8_t>);

  Vocabulary vocab_;
  SubstringDictionary dict_;
  InvertedIndex index_;
};

inline void add_image(EngineState& state, std::uint32_t image_id, std::span<const Feature> features) {
  state.add_image(image_id, features);
}

// ---------------------------------------------------------------------------
// Engine file
// ---------------------------------------------------------------------------

inline constexpr std::size_t kEngineHeaderBytes = 4 + 1 + 2 + 4 + 2 + 4;

/// Byte accounting of a serialized engine, block by block.
struct EngineLayout {
  std::size_t header = kEngineHeaderBytes;
  std::size_t vocabulary = 0;
  std::size_t dictionary = 0;
  std::size_t posting_counts = 0;   // 8 bytes per word
  std::size_t posting_entries = 0;  // entries * (6 + T/8)
  std::size_t doc_freq = 0;
  std::size_t features_per_image = 0;

  std::size_t total() const noexcept {
    return header + vocabulary + dictionary + posting_counts + posting_entries + doc_freq +
           features_per_image;
  }
};

inline EngineLayout engine_layout(const EngineState& s) {
  const auto p = s.params();
  EngineLayout l;
  l.vocabulary = p.n_words * p.d_bits / 8;
  l.dictionary = p.n_words * p.t_bits;
  l.posting_counts = 8 * p.n_words;
  l.posting_entries = s.index().total_entries() * entry_bytes(p.t_bits);
  l.doc_freq = 4 * p.n_words;
  l.features_per_image = 4 * s.index().n_images();
  return l;
}

inline std::vector<std::uint8_t> save_engine(const EngineState& s) {
  const auto p = s.params();
  detail::ByteWriter out;
  out.buffer().reserve(engine_layout(s).total());
  out.magic("BFIX");
  out.u8(kFormatVersion);
  out.u16(static_cast<std::uint16_t>(p.d_bits));
  out.u32(static_cast<std::uint32_t>(p.n_words));
  out.u16(static_cast<std::uint16_t>(p.t_bits));
  out.u32(static_cast<std::uint32_t>(s.index().n_images()));
  for (const auto& c : s.vocabulary().centroids()) out.bytes(c.to_bytes());
  out.bytes(s.dictionary().table());
  std::vector<std::uint8_t> sub(p.t_bits / 8);
  for (std::size_t w = 0; w < p.n_words; ++w) {
    const auto list = s.index().postings(static_cast<WordId>(w));
    out.u64(list.size());
    for (const auto& e : list) {
      out.u16(e.image_id);
      out.u16(e.x);
      out.u16(e.y);
      e.substring.write_bytes(sub);
      out.bytes(sub);
    }
  }
  for (auto df : s.index().doc_freqs()) out.u32(df);
  for (auto n : s.index().features_per_image()) out.u32(n);
  return out.take();
}

inline EngineState load_engine(std::span<const std::uint8_t> data) {
  detail::ByteReader in(data, "engine file");
  in.expect_magic("BFIX");
  const std::size_t version_at = in.offset();
  if (in.u8("version") != kFormatVersion) in.fail_at("unsupported version", version_at);
  const std::size_t d_at = in.offset();
  const std::size_t d_bits = in.u16("D");
  const std::size_t n_at = in.offset();
  const std::size_t n_words = in.u32("N");
  const std::size_t t_at = in.offset();
  const std::size_t t_bits = in.u16("T");
  const std::size_t images_at = in.offset();
  const std::size_t n_images = in.u32("n_images");

  if (d_bits == 0 || d_bits % 8 != 0 || d_bits > kMaxBits) in.fail_at("invalid descriptor width", d_at);
  if (n_words < 2) in.fail_at("vocabulary needs at least 2 words", n_at);
  if (t_bits < 8 || t_bits % 8 != 0 || t_bits > d_bits) in.fail_at("invalid substring length", t_at);
  if (n_images > kMaxImages) in.fail_at("image count exceeds 65536", images_at);
  // Cheap sanity bound before allocating: the fixed blocks must fit.
  if (in.remaining() < n_words * (d_bits / 8 + t_bits + 8 + 4) + 4 * n_images) {
    in.fail_at("file too short for header counts", n_at);
  }

  std::vector<BinaryDescriptor> centroids;
  centroids.reserve(n_words);
  for (std::size_t w = 0; w < n_words; ++w) {
    centroids.push_back(BinaryDescriptor::from_bytes(in.bytes(d_bits / 8, "vocabulary")));
  }
  const std::size_t dict_at = in.offset();
  const auto table = in.bytes(n_words * t_bits, "dictionary");

  EngineState s;
  try {
    s.vocab_ = Vocabulary(std::move(centroids));
    s.dict_ = SubstringDictionary(d_bits, t_bits, {table.begin(), table.end()});
  } catch (const std::invalid_argument& e) {
    in.fail_at(std::string("invalid dictionary: ") + e.what(), dict_at);
  }

  InvertedIndex& idx = s.index_;
  idx.postings_.resize(n_words);
  idx.features_per_image_.assign(n_images, 0);
  idx.extents_.assign(n_images, {});
  std::vector<std::uint32_t> doc_freq(n_words, 0);
  std::vector<std::uint32_t> per_image(n_images, 0);
  const std::size_t eb = entry_bytes(t_bits);
  for (std::size_t w = 0; w < n_words; ++w) {
    const std::size_t count_at = in.offset();
    const std::uint64_t count = in.u64("posting count");
    if (count > in.remaining() / eb) in.fail_at("posting count exceeds remaining data", count_at);
    auto& list = idx.postings_[w];
    list.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::size_t entry_at = in.offset();
      IndexEntry e;
      e.image_id = in.u16("image id");
      e.x = in.u16("x");
      e.y = in.u16("y");
      e.substring = Substring::from_bytes(in.bytes(t_bits / 8, "substring"));
      if (e.image_id >= n_images) in.fail_at("entry image id out of range", entry_at);
      if (!list.empty() && list.back().image_id > e.image_id) {
        in.fail_at("posting list not in image order", entry_at);
      }
      if (list.empty() || list.back().image_id != e.image_id) ++doc_freq[w];
      ++per_image[e.image_id];
      auto& ext = idx.extents_[e.image_id];
      ext.width = std::max(ext.width, e.x + 1.0);
      ext.height = std::max(ext.height, e.y + 1.0);
      list.push_back(std::move(e));
    }
  }
  idx.doc_freq_.resize(n_words);
  for (std::size_t w = 0; w < n_words; ++w) {
    const std::size_t at = in.offset();
    idx.doc_freq_[w] = in.u32("doc_freq");
    if (idx.doc_freq_[w] != doc_freq[w]) in.fail_at("doc_freq disagrees with postings", at);
  }
  for (std::size_t i = 0; i < n_images; ++i) {
    const std::size_t at = in.offset();
    idx.features_per_image_[i] = in.u32("features_per_image");
    if (idx.features_per_image_[i] != per_image[i]) {
      in.fail_at("features_per_image disagrees with postings", at);
    }
  }
  if (in.remaining() != 0) in.fail("trailing bytes after engine data");
  return s;
}

inline void save_engine(const EngineState& s, const std::filesystem::path& path) {
  detail::write_file_bytes(path, save_engine(s));
}

inline EngineState load_engine(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return load_engine(std::span<const std::uint8_t>(bytes));
}

// ---------------------------------------------------------------------------
// Descriptor file
// ---------------------------------------------------------------------------

struct DescriptorFileInfo {
  std::size_t d_bits = 0;
  std::size_t count = 0;
};

struct DescriptorFile {
  DescriptorFileInfo info;
  std::vector<Feature> features;
};

inline std::vector<std::uint8_t> encode_descriptor_file(std::size_t d_bits, std::span<const Feature> features) {
  validate_descriptor_width(d_bits);
  detail::ByteWriter out;
  out.magic("BFDS");
  out.u8(kFormatVersion);
  out.u16(static_cast<std::uint16_t>(d_bits));
  out.u32(static_cast<std::uint32_t>(features.size()));
  std::vector<std::uint8_t> desc(d_bits / 8);
  for (const auto& f : features) {
    if (f.descriptor.width() != d_bits) throw UsageError("feature width does not match file width");
    out.f32(static_cast<float>(f.keypoint.x));
    out.f32(static_cast<float>(f.keypoint.y));
    out.f32(static_cast<float>(f.keypoint.scale));
    out.f32(static_cast<float>(f.keypoint.angle));
    f.descriptor.write_bytes(desc);
    out.bytes(desc);
  }
  return out.take();
}

/// Parses a descriptor file. When `expected_d_bits` is nonzero the file
/// width must match it.
inline DescriptorFile decode_descriptor_file(std::span<const std::uint8_t> data,
                                             std::size_t expected_d_bits = 0) {
  detail::ByteReader in(data, "descriptor file");
  in.expect_magic("BFDS");
  const std::size_t version_at = in.offset();
  if (in.u8("version") != kFormatVersion) in.fail_at("unsupported version", version_at);
  const std::size_t d_at = in.offset();
  const std::size_t d_bits = in.u16("D");
  if (d_bits == 0 || d_bits % 8 != 0 || d_bits > kMaxBits) in.fail_at("invalid descriptor width", d_at);
  if (expected_d_bits != 0 && d_bits != expected_d_bits) {
    in.fail_at("descriptor width " + std::to_string(d_bits) + " does not match expected " +
                   std::to_string(expected_d_bits),
               d_at);
  }
  const std::size_t count = in.u32("count");
  const std::size_t record = 16 + d_bits / 8;

  DescriptorFile out;
  out.info = {d_bits, count};
  out.features.reserve(std::min(count, in.remaining() / record));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = in.offset();
    Feature f;
    f.keypoint.x = in.f32("x");
    f.keypoint.y = in.f32("y");
    f.keypoint.scale = in.f32("scale");
    f.keypoint.angle = in.f32("angle");
    f.descriptor = BinaryDescriptor::from_bytes(in.bytes(d_bits / 8, "descriptor"));
    if (!f.keypoint.valid()) in.fail_at("keypoint position must be finite and non-negative", at);
    out.features.push_back(std::move(f));
  }
  if (in.remaining() != 0) in.fail("trailing bytes after descriptor records");
  return out;
}

inline void write_descriptor_file(const std::filesystem::path& path, std::size_t d_bits,
                                  std::span<const Feature> features) {
  detail::write_file_bytes(path, encode_descriptor_file(d_bits, features));
}

inline DescriptorFile read_descriptor_file(const std::filesystem::path& path, std::size_t expected_d_bits = 0) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return decode_descriptor_file(bytes, expected_d_bits);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

}  // namespace mvs
