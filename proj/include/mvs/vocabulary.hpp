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

/// \file vocabulary.hpp
/// Binary visual words: k-means over binary descriptors with per-bit
/// majority centroids, and nearest-word quantization by Hamming distance.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mvs/core.hpp"
#include "mvs/detail/parallel.hpp"

namespace mvs {

using WordId = std::uint32_t;

class Vocabulary {
 public:
  Vocabulary() = default;

  /// Takes ownership of the centroids. Requires at least two words of one
  /// common valid descriptor width.
  explicit Vocabulary(std::vector<BinaryDescriptor> centroids) : centroids_(std::move(centroids)) {
    if (centroids_.size() < 2) throw ConfigError("a vocabulary needs at least 2 words");
    validate_descriptor_width(centroids_.front().width());
    for (const auto& c : centroids_) {
      if (c.width() != centroids_.front().width()) {
        throw UsageError("vocabulary centroids have mixed widths");
      }
    }
  }

  std::size_t size() const noexcept { return centroids_.size(); }
  std::size_t width() const noexcept { return centroids_.empty() ? 0 : centroids_.front().width(); }
  const BinaryDescriptor& centroid(WordId w) const { return centroids_.at(w); }
  std::span<const BinaryDescriptor> centroids() const noexcept { return centroids_; }

  /// Nearest word by Hamming distance; ties go to the lowest id.
  WordId quantize(const BinaryDescriptor& d) const {
    if (d.width() != width()) {
      throw UsageError("quantize: descriptor width " + std::to_string(d.width()) +
                       " does not match vocabulary width " + std::to_string(width()));
    }
    return nearest(d).first;
  }

  /// (word, distance) without the width check.
  std::pair<WordId, std::uint32_t> nearest(const BinaryDescriptor& d) const noexcept {
    WordId best = 0;
    std::uint32_t best_dist = std::numeric_limits<std::uint32_t>::max();
    for (std::size_t w = 0; w < centroids_.size(); ++w) {
      const auto dist = detail::hamming_unchecked(d, centroids_[w]);
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<WordId>(w);
      }
    }
    return {best, best_dist};
  }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<BinaryDescriptor> centroids_;
};

inline WordId quantize(const BinaryDescriptor& d, const Vocabulary& v) { return v.quantize(d); }

struct TrainingConfig {
  std::size_t n_words = 1024;
  std::size_t max_iterations = 25;
  std::uint64_t seed = 0;
  /// Stop once fewer than this fraction of assignments change.
  double convergence = 0.001;

  void validate() const {
    if (n_words < 2) throw ConfigError("n_words must be >= 2");
    if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    if (!(convergence >= 0.0 && convergence < 1.0)) {
      throw ConfigError("convergence must lie in [0, 1)");
    }
  }
};

struct TrainingResult {
  Vocabulary vocabulary;
  /// Cluster of each training descriptor; the centroids are the per-bit
  /// majority of exactly these clusters.
  std::vector<WordId> assignment;
  std::size_t iterations = 0;
};

namespace detail {

/// Per-bit majority vote; a mean of exactly 0.5 rounds up to 1.
inline BinaryDescriptor majority_centroid(std::span<const std::uint32_t> ones, std::size_t members,
                                          std::size_t width) {
  BinaryDescriptor c(width);
  for (std::size_t b = 0; b < width; ++b) {
    if (2 * ones[b] >= members) c.set(b);
  }
  return c;
}

// k-means++ seeding with squared Hamming distance as the weight.
inline std::vector<BinaryDescriptor> seed_centroids(std::span<const BinaryDescriptor> data,
                                                    std::size_t k, std::mt19937_64& rng) {
  std::vector<BinaryDescriptor> centers;
  centers.reserve(k);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  centers.push_back(data[pick(rng)]);

  std::vector<double> d2(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double d = hamming_unchecked(data[i], centers[0]);
    d2[i] = d * d;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (centers.size() < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t chosen = 0;
    if (total <= 0.0) {
      chosen = pick(rng);
    } else {
      double target = unit(rng) * total;
      chosen = data.size() - 1;
      for (std::size_t i = 0; i < data.size(); ++i) {
        target -= d2[i];
        if (target < 0.0) {
          chosen = i;
          break;
        }
      }
    }
    centers.push_back(data[chosen]);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double d = hamming_unchecked(data[i], centers.back());
      d2[i] = std::min(d2[i], d * d);
    }
  }
  return centers;
}

}  // namespace detail

/// Lloyd iterations over binary descriptors. Each round assigns by Hamming
/// distance, refills empty clusters with the member farthest from its
/// centroid, then thresholds the per-bit cluster means at 0.5.
inline TrainingResult train_with_assignment(std::span<const BinaryDescriptor> descriptors,
                                            const TrainingConfig& cfg) {
  cfg.validate();
  if (descriptors.empty()) throw ConfigError("vocabulary training needs descriptors");
  if (descriptors.size() < cfg.n_words) {
    throw ConfigError("vocabulary training needs at least n_words (" + std::to_string(cfg.n_words) +
                      ") descriptors, got " + std::to_string(descriptors.size()));
  }
  const std::size_t width = descriptors.front().width();
  validate_descriptor_width(width);
  for (const auto& d : descriptors) {
    if (d.width() != width) throw UsageError("training descriptors have mixed widths");
  }

  const std::size_t n = descriptors.size();
  const std::size_t k = cfg.n_words;
  std::mt19937_64 rng(cfg.seed);
  std::vector<BinaryDescriptor> centroids = detail::seed_centroids(descriptors, k, rng);

  constexpr WordId kUnassigned = std::numeric_limits<WordId>::max();
  std::vector<WordId> assignment(n, kUnassigned);
  std::vector<WordId> next(n);
  std::vector<std::uint32_t> dist(n);
  std::vector<std::size_t> sizes(k);
  std::vector<std::uint32_t> ones(k * width);

  std::size_t iter = 0;
  while (iter < cfg.max_iterations) {
    ++iter;
    const Vocabulary current(centroids);
    detail::parallel_for(n, [&](std::size_t i) {
      const auto [w, d] = current.nearest(descriptors[i]);
      next[i] = w;
      dist[i] = d;
    });

    std::fill(sizes.begin(), sizes.end(), 0);
    for (WordId w : next) ++sizes[w];
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[next[i]] > 1 && (far == n || dist[i] > dist[far])) far = i;
      }
      if (far == n) break;  // every cluster is a singleton already
      --sizes[next[far]];
      next[far] = static_cast<WordId>(c);
      dist[far] = 0;
      sizes[c] = 1;
    }

    std::size_t changed = 0;
    for (std::size_t i = 0; i < n; ++i) changed += (next[i] != assignment[i]);
    assignment.swap(next);

    std::fill(ones.begin(), ones.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t* row = ones.data() + std::size_t{assignment[i]} * width;
      const auto& d = descriptors[i];
      for (std::size_t b = 0; b < width; ++b) row[b] += d.test(b);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] == 0) continue;
      centroids[c] = detail::majority_centroid({ones.data() + c * width, width}, sizes[c], width);
    }

    if (static_cast<double>(changed) < cfg.convergence * static_cast<double>(n)) break;
  }

  return {Vocabulary(std::move(centroids)), std::move(assignment), iter};
}

inline Vocabulary train(std::span<const BinaryDescriptor> descriptors, const TrainingConfig& cfg) {
  return train_with_assignment(descriptors, cfg).vocabulary;
}

}  // namespace mvs
