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

/// \file substring.hpp
/// Per-word substring dictionary and substring extraction.
///
/// For every visual word the dictionary keeps T bit positions that are
/// informative (mean close to 0.5) and mutually weakly correlated among the
/// training descriptors quantized to that word. A descriptor assigned to
/// word w is reduced to the T bits at those positions before it is stored
/// in, or compared against, the inverted index.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mvs/core.hpp"
#include "mvs/detail/parallel.hpp"
#include "mvs/vocabulary.hpp"

namespace mvs {

/// Per-bit means and the Pearson correlation matrix of a descriptor set.
struct BitStatistics {
  std::size_t width = 0;
  std::size_t samples = 0;
  std::vector<double> means;        // width
  std::vector<double> correlation;  // width * width, row-major

  double corr(std::size_t i, std::size_t j) const { return correlation[i * width + j]; }
};

namespace detail {

// Works for any sample count >= 1. Co-occurrence counts come from bit
// columns over the samples, so one popcount covers 64 samples.
inline BitStatistics bit_statistics_unchecked(std::span<const BinaryDescriptor> descs) {
  BitStatistics s;
  s.width = descs.front().width();
  s.samples = descs.size();
  const std::size_t width = s.width;
  const std::size_t n = descs.size();
  const std::size_t words = (n + 63) / 64;

  std::vector<std::uint64_t> columns(width * words, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = descs[i];
    for (std::size_t b = 0; b < width; ++b) {
      if (d.test(b)) columns[b * words + i / 64] |= std::uint64_t{1} << (i % 64);
    }
  }

  std::vector<std::uint64_t> ones(width);
  for (std::size_t b = 0; b < width; ++b) {
    std::uint64_t c = 0;
    for (std::size_t w = 0; w < words; ++w) c += std::popcount(columns[b * words + w]);
    ones[b] = c;
  }

  const double nd = static_cast<double>(n);
  s.means.resize(width);
  std::vector<double> var(width);
  for (std::size_t b = 0; b < width; ++b) {
    s.means[b] = static_cast<double>(ones[b]) / nd;
    // Population variance of a 0/1 variable from integer counts.
    var[b] = static_cast<double>(ones[b] * (n - ones[b])) / (nd * nd);
  }

  s.correlation.assign(width * width, 0.0);
  for (std::size_t i = 0; i < width; ++i) {
    s.correlation[i * width + i] = 1.0;
    if (var[i] == 0.0) continue;
    for (std::size_t j = i + 1; j < width; ++j) {
      if (var[j] == 0.0) continue;
      std::uint64_t both = 0;
      const std::uint64_t* ci = columns.data() + i * words;
      const std::uint64_t* cj = columns.data() + j * words;
      for (std::size_t w = 0; w < words; ++w) both += std::popcount(ci[w] & cj[w]);
      // n^2 * cov = n * both - ones_i * ones_j, exact in integers.
      const double num = static_cast<double>(static_cast<std::int64_t>(n * both) -
                                             static_cast<std::int64_t>(ones[i] * ones[j]));
      const double r = std::clamp(num / (nd * nd * std::sqrt(var[i] * var[j])), -1.0, 1.0);
      s.correlation[i * width + j] = r;
      s.correlation[j * width + i] = r;
    }
  }
  return s;
}

}  // namespace detail

/// Per-bit sample means and Pearson correlations. A constant bit has
/// correlation 0 with every other bit; the diagonal is always 1.
inline BitStatistics bit_statistics(std::span<const BinaryDescriptor> descs) {
  if (descs.size() < 2) throw UsageError("bit_statistics needs at least 2 descriptors");
  for (const auto& d : descs) {
    if (d.width() != descs.front().width()) throw UsageError("bit_statistics: mixed widths");
  }
  return detail::bit_statistics_unchecked(descs);
}

struct BitSelection {
  std::vector<std::uint8_t> positions;  // admission order
  double threshold = 0.0;               // threshold that produced the row
  std::size_t attempts = 0;
};

/// Greedy selection of `t_bits` positions for one word.
///
/// Bits are visited in ascending |mean - 0.5| (ties by bit id) and a bit is
/// admitted while its largest |corr| with the admitted bits stays below the
/// threshold. When a pass ends short of `t_bits` the threshold grows by
/// `th_step` and the pass restarts.
inline BitSelection select_bits(const BitStatistics& stats, std::size_t t_bits, double th_init,
                                double th_step) {
  if (t_bits == 0 || t_bits > stats.width) {
    throw ConfigError("substring length " + std::to_string(t_bits) + " must lie in [1, " +
                      std::to_string(stats.width) + "]");
  }
  if (!(th_init > 0.0 && th_init <= 1.0)) throw ConfigError("th_init must lie in (0, 1]");
  if (!(th_step > 0.0)) throw ConfigError("th_step must be positive");

  std::vector<std::uint8_t> order(stats.width);
  std::iota(order.begin(), order.end(), std::uint8_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::uint8_t a, std::uint8_t b) {
    return std::abs(stats.means[a] - 0.5) < std::abs(stats.means[b] - 0.5);
  });

  BitSelection sel;
  for (std::size_t attempt = 0;; ++attempt) {
    const double th = th_init + static_cast<double>(attempt) * th_step;
    sel.positions.clear();
    sel.positions.push_back(order[0]);
    for (std::size_t i = 1; i < order.size() && sel.positions.size() < t_bits; ++i) {
      const std::uint8_t j = order[i];
      double worst = 0.0;
      for (std::uint8_t k : sel.positions) worst = std::max(worst, std::abs(stats.corr(j, k)));
      if (worst < th) sel.positions.push_back(j);
    }
    sel.threshold = th;
    sel.attempts = attempt + 1;
    // Past th = 1 every |corr| <= 1 passes, so the row is always complete.
    if (sel.positions.size() == t_bits) return sel;
    if (th > 1.0) {
      throw ConfigError("substring selection could not reach " + std::to_string(t_bits) + " bits");
    }
  }
}

/// N rows of T bit positions, one row per visual word.
class SubstringDictionary {
 public:
  SubstringDictionary() = default;

  SubstringDictionary(std::size_t d_bits, std::size_t t_bits, std::vector<std::uint8_t> positions)
      : d_bits_(d_bits), t_bits_(t_bits), positions_(std::move(positions)) {
    validate_descriptor_width(d_bits_);
    if (t_bits_ < 8 || t_bits_ % 8 != 0 || t_bits_ > d_bits_) {
      throw ConfigError("substring length must be a multiple of 8 in [8, " +
                        std::to_string(d_bits_) + "], got " + std::to_string(t_bits_));
    }
    if (positions_.empty() || positions_.size() % t_bits_ != 0) {
      throw UsageError("dictionary position table is not a whole number of rows");
    }
    std::vector<bool> seen(d_bits_);
    for (std::size_t w = 0; w < n_words(); ++w) {
      std::fill(seen.begin(), seen.end(), false);
      for (std::uint8_t p : row(static_cast<WordId>(w))) {
        if (p >= d_bits_) throw UsageError("dictionary position out of range in row " + std::to_string(w));
        if (seen[p]) throw UsageError("dictionary row " + std::to_string(w) + " repeats a position");
        seen[p] = true;
      }
    }
  }

  std::size_t d_bits() const noexcept { return d_bits_; }
  std::size_t t_bits() const noexcept { return t_bits_; }
  std::size_t n_words() const noexcept { return t_bits_ == 0 ? 0 : positions_.size() / t_bits_; }

  std::span<const std::uint8_t> row(WordId w) const {
    if (w >= n_words()) {
      throw UsageError("word id " + std::to_string(w) + " out of range [0, " +
                       std::to_string(n_words()) + ")");
    }
    return {positions_.data() + std::size_t{w} * t_bits_, t_bits_};
  }

  /// Flat N x T table in word order, one byte per position.
  std::span<const std::uint8_t> table() const noexcept { return positions_; }

  friend bool operator==(const SubstringDictionary&, const SubstringDictionary&) = default;

 private:
  std::size_t d_bits_ = 0;
  std::size_t t_bits_ = 0;
  std::vector<std::uint8_t> positions_;
};

inline constexpr double kDefaultThresholdInit = 0.25;
inline constexpr double kDefaultThresholdStep = 0.05;

struct DictionaryBuild {
  SubstringDictionary dictionary;
  std::vector<double> final_thresholds;  // per word
  std::vector<std::size_t> cluster_sizes;
  double th_init = kDefaultThresholdInit;
  double th_step = kDefaultThresholdStep;
};

/// Partitions `training` by nearest word and selects one row per word.
/// Words without training vectors fall back to positions 0..T-1.
inline DictionaryBuild build_dictionary_with_report(std::span<const BinaryDescriptor> training,
                                                    const Vocabulary& vocab, std::size_t t_bits,
                                                    double th_init = kDefaultThresholdInit,
                                                    double th_step = kDefaultThresholdStep) {
  if (training.empty()) throw ConfigError("dictionary training set is empty");
  const std::size_t d_bits = vocab.width();
  if (t_bits < 8 || t_bits % 8 != 0 || t_bits > d_bits) {
    throw ConfigError("substring length must be a multiple of 8 in [8, " + std::to_string(d_bits) +
                      "], got " + std::to_string(t_bits));
  }
  if (!(th_init > 0.0 && th_init <= 1.0)) throw ConfigError("th_init must lie in (0, 1]");
  if (!(th_step > 0.0)) throw ConfigError("th_step must be positive");

  const std::size_t n_words = vocab.size();
  std::vector<WordId> word(training.size());
  detail::parallel_for(training.size(), [&](std::size_t i) { word[i] = vocab.quantize(training[i]); });

  std::vector<std::vector<BinaryDescriptor>> clusters(n_words);
  for (std::size_t i = 0; i < training.size(); ++i) clusters[word[i]].push_back(training[i]);

  DictionaryBuild out;
  out.th_init = th_init;
  out.th_step = th_step;
  out.final_thresholds.assign(n_words, 0.0);
  out.cluster_sizes.resize(n_words);
  std::vector<std::uint8_t> table(n_words * t_bits);

  detail::parallel_for(
      n_words,
      [&](std::size_t w) {
        out.cluster_sizes[w] = clusters[w].size();
        std::uint8_t* row = table.data() + w * t_bits;
        if (clusters[w].empty()) {
          std::iota(row, row + t_bits, std::uint8_t{0});
          return;
        }
        const auto stats = detail::bit_statistics_unchecked(clusters[w]);
        const auto sel = select_bits(stats, t_bits, th_init, th_step);
        std::copy(sel.positions.begin(), sel.positions.end(), row);
        out.final_thresholds[w] = sel.threshold;
      },
      16);

  out.dictionary = SubstringDictionary(d_bits, t_bits, std::move(table));
  return out;
}

inline SubstringDictionary build_dictionary(std::span<const BinaryDescriptor> training,
                                            const Vocabulary& vocab, std::size_t t_bits,
                                            double th_init = kDefaultThresholdInit,
                                            double th_step = kDefaultThresholdStep) {
  return build_dictionary_with_report(training, vocab, t_bits, th_init, th_step).dictionary;
}

/// Output bit i is input bit row[i].
inline Substring extract(const BinaryDescriptor& d, std::span<const std::uint8_t> row) {
  Substring s(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (row[i] >= d.width()) throw UsageError("substring position beyond descriptor width");
    if (d.test(row[i])) s.set(i);
  }
  return s;
}

inline Substring extract(const BinaryDescriptor& d, WordId w, const SubstringDictionary& dict) {
  if (d.width() != dict.d_bits()) throw UsageError("extract: descriptor width does not match dictionary");
  return extract(d, dict.row(w));
}

}  // namespace mvs
