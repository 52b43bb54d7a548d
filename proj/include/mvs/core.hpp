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

/// \file core.hpp
/// Packed bit strings, Hamming distance, keypoints and the error types shared
/// by every other header.
///
/// Bit i of a packed string lives in byte i / 8 at position i % 8 counting
/// from the least-significant bit. In memory the bytes are packed into
/// 64-bit words the same way, so word w holds bytes 8w..8w+7.

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvs {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Caller broke a precondition (width mismatch, index out of range, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration cannot be satisfied (too few samples, bad sizes, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A fixed limit of the storage format was exceeded.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Malformed serialized data. `offset()` is the byte position of the fault.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        message_(what),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }
  /// Description without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t offset_;
};

// ---------------------------------------------------------------------------
// Packed bit strings
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxBits = 256;

/// Fixed-capacity packed bit string of runtime width (at most kMaxBits).
/// Bits above width() are always zero, so word-wise XOR/popcount is exact.
template <class Tag>
class PackedBits {
 public:
  static constexpr std::size_t kWords = kMaxBits / 64;

  PackedBits() = default;

  explicit PackedBits(std::size_t width_bits) : width_(static_cast<std::uint16_t>(width_bits)) {
    if (width_bits > kMaxBits) {
      throw UsageError("bit string width " + std::to_string(width_bits) + " exceeds " +
                       std::to_string(kMaxBits));
    }
  }

  /// Builds a string of `bytes.size() * 8` bits from its packed byte form.
  static PackedBits from_bytes(std::span<const std::uint8_t> bytes) {
    PackedBits out(bytes.size() * 8);
    for (std::size_t b = 0; b < bytes.size(); ++b) {
      out.words_[b / 8] |= std::uint64_t{bytes[b]} << (8 * (b % 8));
    }
    return out;
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t size_bytes() const noexcept { return (width_ + 7) / 8; }
  std::size_t word_count() const noexcept { return (width_ + 63) / 64; }

  bool test(std::size_t i) const noexcept { return (words_[i / 64] >> (i % 64)) & 1U; }

  void set(std::size_t i, bool value = true) noexcept {
    const std::uint64_t mask = std::uint64_t{1} << (i % 64);
    if (value) {
      words_[i / 64] |= mask;
    } else {
      words_[i / 64] &= ~mask;
    }
  }

  void flip(std::size_t i) noexcept { words_[i / 64] ^= std::uint64_t{1} << (i % 64); }

  std::uint8_t byte(std::size_t b) const noexcept {
    return static_cast<std::uint8_t>(words_[b / 8] >> (8 * (b % 8)));
  }

  void write_bytes(std::span<std::uint8_t> out) const noexcept {
    for (std::size_t b = 0; b < out.size(); ++b) out[b] = byte(b);
  }

  std::vector<std::uint8_t> to_bytes() const {
    std::vector<std::uint8_t> out(size_bytes());
    write_bytes(out);
    return out;
  }

  std::span<const std::uint64_t> words() const noexcept { return {words_.data(), word_count()}; }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto w : words()) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  friend bool operator==(const PackedBits&, const PackedBits&) = default;

 private:
  std::array<std::uint64_t, kWords> words_{};
  std::uint16_t width_ = 0;
};

struct DescriptorTag {};
struct SubstringTag {};

/// D-bit binary local descriptor.
using BinaryDescriptor = PackedBits<DescriptorTag>;
/// T bits projected out of a descriptor through a dictionary row.
using Substring = PackedBits<SubstringTag>;

namespace detail {

template <class Tag>
std::size_t hamming(const PackedBits<Tag>& a, const PackedBits<Tag>& b, const char* what) {
  if (a.width() != b.width()) {
    throw UsageError(std::string(what) + " width mismatch: " + std::to_string(a.width()) +
                     " vs " + std::to_string(b.width()));
  }
  const auto wa = a.words();
  const auto wb = b.words();
  std::size_t d = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    d += static_cast<std::size_t>(std::popcount(wa[i] ^ wb[i]));
  }
  return d;
}

// Unchecked variant for inner loops where widths are already validated.
template <class Tag>
inline std::uint32_t hamming_unchecked(const PackedBits<Tag>& a, const PackedBits<Tag>& b) noexcept {
  const auto wa = a.words();
  const auto wb = b.words();
  std::uint32_t d = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    d += static_cast<std::uint32_t>(std::popcount(wa[i] ^ wb[i]));
  }
  return d;
}

}  // namespace detail

inline std::size_t hamming_distance(const BinaryDescriptor& a, const BinaryDescriptor& b) {
  return detail::hamming(a, b, "descriptor");
}

inline std::size_t hamming_distance_sub(const Substring& a, const Substring& b) {
  return detail::hamming(a, b, "substring");
}

/// Descriptor widths accepted by the engine: a multiple of 8 in [8, 256].
inline void validate_descriptor_width(std::size_t d_bits) {
  if (d_bits == 0 || d_bits % 8 != 0 || d_bits > kMaxBits) {
    throw ConfigError("descriptor width must be a multiple of 8 in [8, 256], got " +
                      std::to_string(d_bits));
  }
}

// ---------------------------------------------------------------------------
// Keypoints and features
// ---------------------------------------------------------------------------

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double scale = 1.0;
  double angle = 0.0;

  bool valid() const noexcept {
    return std::isfinite(x) && std::isfinite(y) && x >= 0.0 && y >= 0.0;
  }

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct Feature {
  Keypoint keypoint;
  BinaryDescriptor descriptor;

  friend bool operator==(const Feature&, const Feature&) = default;
};

}  // namespace mvs
