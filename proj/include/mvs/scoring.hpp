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

/// \file scoring.hpp
/// K-nearest-neighbour search inside one posting list and image voting.
///
/// Every query feature is quantized to its word w, reduced to the substring
/// of w, and compared against the substrings stored in posting list w. Its
/// K nearest reference entries vote for their images under one of four
/// schemes:
///
///   TFIDF        idf(w)^2 with idf(w) = ln(n_images / doc_freq(w))
///   GAUSSIAN     exp(-d^2 / sigma^2)
///   LN_ORIGINAL  d_K^2 - d_k^2
///   LN_MODIFIED  (d_K / max(d_k, floor))^2 - 1, clamped at 0
///
/// where d_k is the distance of the k-th neighbour and d_K the distance of
/// the K-th. With fewer than K entries in the list d_K is taken to be T.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mvs/core.hpp"
#include "mvs/index.hpp"

namespace mvs {

enum class Scheme { kTfIdf, kGaussian, kLnOriginal, kLnModified };

inline std::string_view to_string(Scheme s) noexcept {
  switch (s) {
    case Scheme::kTfIdf: return "tfidf";
    case Scheme::kGaussian: return "gw";
    case Scheme::kLnOriginal: return "lno";
    case Scheme::kLnModified: return "lnm";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view name) {
  if (name == "tfidf") return Scheme::kTfIdf;
  if (name == "gw") return Scheme::kGaussian;
  if (name == "lno") return Scheme::kLnOriginal;
  if (name == "lnm") return Scheme::kLnModified;
  throw UsageError("unknown scoring scheme '" + std::string(name) + "' (tfidf|gw|lno|lnm)");
}

struct ScoringConfig {
  Scheme scheme = Scheme::kLnModified;
  std::size_t k_neighbors = 2;
  double sigma = 9.0;
  double zero_distance_floor = 0.5;

  void validate() const {
    if (k_neighbors < 1) throw ConfigError("k_neighbors must be >= 1");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (!(zero_distance_floor > 0.0)) throw ConfigError("zero_distance_floor must be positive");
  }
};

// Scalar vote formulas.

inline double vote_ln_original(double d_k, double d_K) noexcept { return d_K * d_K - d_k * d_k; }

inline double vote_ln_modified(double d_k, double d_K, double floor) noexcept {
  const double r = d_K / std::max(d_k, floor);
  return std::max(r * r - 1.0, 0.0);
}

inline double vote_gaussian(double d, double sigma) noexcept { return std::exp(-(d * d) / (sigma * sigma)); }

inline double idf(std::size_t n_images, std::size_t doc_freq) noexcept {
  if (doc_freq == 0 || n_images == 0) return 0.0;
  return std::log(static_cast<double>(n_images) / static_cast<double>(doc_freq));
}

/// Votes for a neighbour set sorted by ascending distance. Only the first
/// min(m, K) neighbours vote; `background` stands in for d_K when m < K.
/// For TFIDF every voter gets `idf_w`^2.
inline std::vector<double> neighbor_votes(std::span<const double> distances, const ScoringConfig& cfg,
                                          double background, double idf_w = 0.0) {
  const std::size_t m = std::min(distances.size(), cfg.k_neighbors);
  std::vector<double> votes(m);
  const double d_K = distances.size() >= cfg.k_neighbors ? distances[cfg.k_neighbors - 1] : background;
  for (std::size_t k = 0; k < m; ++k) {
    switch (cfg.scheme) {
      case Scheme::kTfIdf: votes[k] = idf_w * idf_w; break;
      case Scheme::kGaussian: votes[k] = vote_gaussian(distances[k], cfg.sigma); break;
      case Scheme::kLnOriginal: votes[k] = vote_ln_original(distances[k], d_K); break;
      case Scheme::kLnModified: votes[k] = vote_ln_modified(distances[k], d_K, cfg.zero_distance_floor); break;
    }
  }
  return votes;
}

struct Neighbor {
  std::uint32_t posting_index = 0;
  std::uint32_t distance = 0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// The `k` entries of `postings` nearest to `q`, ascending by distance with
/// ties in posting order. Returns everything when the list is shorter.
inline std::vector<Neighbor> knn_in_posting(const Substring& q, std::span<const IndexEntry> postings,
                                            std::size_t k) {
  std::vector<Neighbor> best;
  if (k == 0) return best;
  best.reserve(std::min(k, postings.size()) + 1);
  for (std::size_t i = 0; i < postings.size(); ++i) {
    if (postings[i].substring.width() != q.width()) {
      throw UsageError("knn_in_posting: substring width mismatch");
    }
    const std::uint32_t d = detail::hamming_unchecked(q, postings[i].substring);
    if (best.size() == k && d >= best.back().distance) continue;
    // Insert after every entry with distance <= d to keep posting order on ties.
    auto pos = std::upper_bound(best.begin(), best.end(), d,
                                [](std::uint32_t v, const Neighbor& n) { return v < n.distance; });
    best.insert(pos, Neighbor{static_cast<std::uint32_t>(i), d});
    if (best.size() > k) best.pop_back();
  }
  return best;
}

/// One reference entry matched by one query feature.
struct FeatureMatch {
  std::uint32_t query_feature_index = 0;
  double query_x = 0.0;
  double query_y = 0.0;
  IndexEntry entry;
  WordId word_id = 0;
  std::uint32_t posting_index = 0;
  std::uint32_t distance = 0;
  std::uint32_t neighbor_rank = 1;  // 1-based
};

struct ScoredMatch {
  std::uint32_t image_id = 0;
  double score = 0.0;
  FeatureMatch match;
};

/// Converts a sorted neighbour list from posting list `word` into votes.
inline std::vector<ScoredMatch> score_matches(std::span<const Neighbor> neighbors, WordId word,
                                              const EngineState& state, const ScoringConfig& cfg,
                                              std::uint32_t query_feature_index = 0,
                                              const Keypoint& query_keypoint = {}) {
  const auto postings = state.index().postings(word);
  std::vector<double> dist(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) dist[i] = neighbors[i].distance;
  const std::size_t df = state.index().doc_freq(word);
  const double idf_w = idf(state.index().n_images(), df);
  const auto votes = neighbor_votes(dist, cfg, static_cast<double>(state.params().t_bits), idf_w);

  std::vector<ScoredMatch> out;
  out.reserve(votes.size());
  for (std::size_t k = 0; k < votes.size(); ++k) {
    if (cfg.scheme == Scheme::kTfIdf && df == 0) continue;
    const auto& entry = postings[neighbors[k].posting_index];
    FeatureMatch m;
    m.query_feature_index = query_feature_index;
    m.query_x = query_keypoint.x;
    m.query_y = query_keypoint.y;
    m.entry = entry;
    m.word_id = word;
    m.posting_index = neighbors[k].posting_index;
    m.distance = neighbors[k].distance;
    m.neighbor_rank = static_cast<std::uint32_t>(k + 1);
    out.push_back({entry.image_id, votes[k], m});
  }
  return out;
}

struct VoteTable {
  std::vector<double> scores;          // per image
  std::vector<FeatureMatch> matches;   // in query-feature order, then rank
  std::vector<std::uint32_t> match_count;  // per image
};

struct RankedImage {
  std::uint32_t image_id = 0;
  double score = 0.0;
  friend bool operator==(const RankedImage&, const RankedImage&) = default;
};

struct SearchTimings {
  double quantize_s = 0.0;
  double hamming_s = 0.0;  // substring extraction, Hamming distances and voting
};

struct SearchResult {
  VoteTable votes;
  /// Images with at least one match, by descending score, ties by id.
  std::vector<RankedImage> ranking;
};

inline std::vector<RankedImage> rank_images(const VoteTable& votes) {
  std::vector<RankedImage> ranking;
  for (std::size_t i = 0; i < votes.scores.size(); ++i) {
    if (votes.match_count[i] > 0) ranking.push_back({static_cast<std::uint32_t>(i), votes.scores[i]});
  }
  std::sort(ranking.begin(), ranking.end(), [](const RankedImage& a, const RankedImage& b) {
    return a.score != b.score ? a.score > b.score : a.image_id < b.image_id;
  });
  return ranking;
}

/// Votes every query feature into a fresh table. Safe to call concurrently
/// on one const EngineState.
inline SearchResult search(std::span<const Feature> query, const EngineState& state,
                           const ScoringConfig& cfg, SearchTimings* timings = nullptr) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const std::size_t width = state.params().d_bits;
  for (const auto& f : query) {
    if (f.descriptor.width() != width) {
      throw UsageError("query descriptor width " + std::to_string(f.descriptor.width()) +
                       " does not match engine width " + std::to_string(width));
    }
  }

  const auto t0 = Clock::now();
  std::vector<WordId> words(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) words[i] = state.vocabulary().nearest(query[i].descriptor).first;
  const auto t1 = Clock::now();

  SearchResult out;
  const std::size_t n_images = state.index().n_images();
  out.votes.scores.assign(n_images, 0.0);
  out.votes.match_count.assign(n_images, 0);
  out.votes.matches.reserve(query.size() * cfg.k_neighbors);
  for (std::size_t i = 0; i < query.size(); ++i) {
    const WordId w = words[i];
    const Substring sub = extract(query[i].descriptor, state.dictionary().row(w));
    const auto neighbors = knn_in_posting(sub, state.index().postings(w), cfg.k_neighbors);
    for (auto& sm : score_matches(neighbors, w, state, cfg, static_cast<std::uint32_t>(i), query[i].keypoint)) {
      out.votes.scores[sm.image_id] += sm.score;
      ++out.votes.match_count[sm.image_id];
      out.votes.matches.push_back(std::move(sm.match));
    }
  }
  out.ranking = rank_images(out.votes);
  const auto t2 = Clock::now();

  if (timings != nullptr) {
    timings->quantize_s = std::chrono::duration<double>(t1 - t0).count();
    timings->hamming_s = std::chrono::duration<double>(t2 - t1).count();
  }
  return out;
}

}  // namespace mvs
