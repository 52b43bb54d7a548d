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

/// \file eval.hpp
/// Retrieval metrics (MAP, ROC, zero-false-positive accuracy), the
/// synthetic scene generator, and the query pipeline with stage timings.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mvs/core.hpp"
#include "mvs/detail/parallel.hpp"
#include "mvs/geometry.hpp"
#include "mvs/index.hpp"
#include "mvs/scoring.hpp"

namespace mvs {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Mean of precision@rank over the relevant items; relevant items missing
/// from the ranking contribute 0.
inline double average_precision(std::span<const std::uint32_t> ranking, std::span<const std::uint32_t> relevant) {
  if (relevant.empty()) throw UsageError("average_precision needs at least one relevant item");
  const std::set<std::uint32_t> rel(relevant.begin(), relevant.end());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (rel.count(ranking[i]) != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(rel.size());
}

struct GroundTruth {
  /// Relevant image ids per query.
  std::vector<std::vector<std::uint32_t>> relevant;
};

inline double mean_average_precision(std::span<const std::vector<std::uint32_t>> rankings, const GroundTruth& gt) {
  if (rankings.size() != gt.relevant.size()) throw UsageError("rankings and ground truth differ in length");
  if (rankings.empty()) throw UsageError("mean_average_precision needs at least one query");
  double sum = 0.0;
  for (std::size_t q = 0; q < rankings.size(); ++q) sum += average_precision(rankings[q], gt.relevant[q]);
  return sum / static_cast<double>(rankings.size());
}

struct RocPoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

/// One point per distinct observed score, thresholds ascending. A score
/// counts as detected at threshold t when score >= t.
inline std::vector<RocPoint> roc_curve(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw UsageError("roc_curve needs positive and negative scores");
  std::vector<double> pos(positives.begin(), positives.end());
  std::vector<double> neg(negatives.begin(), negatives.end());
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> thresholds;
  thresholds.reserve(pos.size() + neg.size());
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<RocPoint> curve;
  curve.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto p_below = std::lower_bound(pos.begin(), pos.end(), t) - pos.begin();
    const auto n_below = std::lower_bound(neg.begin(), neg.end(), t) - neg.begin();
    curve.push_back({t, static_cast<double>(pos.size() - static_cast<std::size_t>(p_below)) / static_cast<double>(pos.size()),
                     static_cast<double>(neg.size() - static_cast<std::size_t>(n_below)) / static_cast<double>(neg.size())});
  }
  return curve;
}

/// Fraction of positives strictly above the largest negative score, i.e.
/// the detection rate at the lowest threshold no negative reaches.
inline double zero_fp_accuracy(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw UsageError("zero_fp_accuracy needs positive and negative scores");
  const double max_neg = *std::max_element(negatives.begin(), negatives.end());
  const auto above = std::count_if(positives.begin(), positives.end(), [&](double s) { return s > max_neg; });
  return static_cast<double>(above) / static_cast<double>(positives.size());
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

struct HomographyJitter {
  double rotation_deg = 30.0;
  double scale_min = 0.7;
  double scale_max = 1.4;
  double translation_px = 50.0;
  double perspective = 2e-4;

  static HomographyJitter none() { return {0.0, 1.0, 1.0, 0.0, 0.0}; }
};

struct SyntheticSceneConfig {
  std::size_t n_images = 100;
  std::size_t features_per_image = 900;
  std::size_t n_queries = 400;
  std::size_t n_distractors = 0;
  std::size_t n_training_images = 0;
  double bit_flip_prob = 0.1;
  HomographyJitter jitter;
  double feature_dropout_prob = 0.0;
  double frame_width = 640.0;
  double frame_height = 480.0;
  std::size_t d_bits = 256;
  std::uint64_t seed = 0;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(bit_flip_prob) || !prob(feature_dropout_prob)) throw ConfigError("probabilities must lie in [0, 1]");
    if (features_per_image < 1) throw ConfigError("features_per_image must be >= 1");
    if (n_queries > 0 && n_images == 0) throw ConfigError("queries need at least one reference image");
    if (n_images > kMaxImages) throw ConfigError("at most 65536 reference images");
    if (!(frame_width > 0.0 && frame_height > 0.0)) throw ConfigError("frame size must be positive");
    if (!(jitter.scale_min > 0.0 && jitter.scale_min <= jitter.scale_max)) throw ConfigError("invalid scale range");
    validate_descriptor_width(d_bits);
  }
};

struct SyntheticQuery {
  std::vector<Feature> features;
  std::optional<std::uint32_t> source_image;  // empty for distractors
  Homography truth;                           // reference -> query
};

struct SyntheticScene {
  std::vector<std::vector<Feature>> references;
  std::vector<SyntheticQuery> queries;  // true queries first, then distractors
  std::vector<std::vector<Feature>> training;
};

namespace detail {

class SceneSampler {
 public:
  SceneSampler(const SyntheticSceneConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  Feature random_feature() {
    Feature f;
    // Stored as f32 on disk, so draw float-exact values.
    f.keypoint.x = static_cast<float>(uniform(0.0, cfg_.frame_width));
    f.keypoint.y = static_cast<float>(uniform(0.0, cfg_.frame_height));
    f.keypoint.scale = static_cast<float>(uniform(1.0, 8.0));
    f.keypoint.angle = static_cast<float>(uniform(0.0, 2.0 * std::numbers::pi));
    if (f.keypoint.x >= cfg_.frame_width) f.keypoint.x = 0.0;
    if (f.keypoint.y >= cfg_.frame_height) f.keypoint.y = 0.0;
    if (f.keypoint.angle >= static_cast<float>(2.0 * std::numbers::pi)) f.keypoint.angle = 0.0;
    f.descriptor = BinaryDescriptor(cfg_.d_bits);
    for (std::size_t w = 0; w < cfg_.d_bits / 64; ++w) {
      const std::uint64_t bits = rng_();
      for (std::size_t b = 0; b < 64; ++b) f.descriptor.set(64 * w + b, (bits >> b) & 1U);
    }
    for (std::size_t b = (cfg_.d_bits / 64) * 64; b < cfg_.d_bits; ++b) f.descriptor.set(b, rng_() & 1U);
    return f;
  }

  std::vector<Feature> random_image() {
    std::vector<Feature> out(cfg_.features_per_image);
    for (auto& f : out) f = random_feature();
    return out;
  }

  Homography random_homography() {
    const auto& j = cfg_.jitter;
    const double theta = uniform(-j.rotation_deg, j.rotation_deg) * std::numbers::pi / 180.0;
    const double s = uniform(j.scale_min, j.scale_max);
    const double tx = uniform(-j.translation_px, j.translation_px);
    const double ty = uniform(-j.translation_px, j.translation_px);
    const double px = uniform(-j.perspective, j.perspective);
    const double py = uniform(-j.perspective, j.perspective);
    const double cx = cfg_.frame_width / 2.0;
    const double cy = cfg_.frame_height / 2.0;
    Eigen::Matrix3d to_center, from_center, rs, persp;
    to_center << 1, 0, -cx, 0, 1, -cy, 0, 0, 1;
    from_center << 1, 0, cx + tx, 0, 1, cy + ty, 0, 0, 1;
    rs << s * std::cos(theta), -s * std::sin(theta), 0, s * std::sin(theta), s * std::cos(theta), 0, 0, 0, 1;
    persp << 1, 0, 0, 0, 1, 0, px, py, 1;
    rotation_ = theta;
    scale_ = s;
    return Homography(from_center * persp * rs * to_center);
  }

  SyntheticQuery warp(const std::vector<Feature>& source, std::uint32_t source_id) {
    SyntheticQuery q;
    q.source_image = source_id;
    q.truth = random_homography();
    for (const auto& f : source) {
      // Draw dropout and flips for every feature so the stream does not
      // depend on which points leave the frame.
      const bool drop = cfg_.feature_dropout_prob > 0.0 && unit() < cfg_.feature_dropout_prob;
      Feature g = f;
      if (cfg_.bit_flip_prob > 0.0) {
        for (std::size_t b = 0; b < cfg_.d_bits; ++b) {
          if (unit() < cfg_.bit_flip_prob) g.descriptor.flip(b);
        }
      }
      if (drop) continue;
      const auto p = q.truth.apply({f.keypoint.x, f.keypoint.y});
      if (!p) continue;
      const double x = static_cast<float>(p->x);
      const double y = static_cast<float>(p->y);
      if (!(x >= 0.0 && x < cfg_.frame_width && y >= 0.0 && y < cfg_.frame_height)) continue;
      g.keypoint.x = x;
      g.keypoint.y = y;
      g.keypoint.scale = static_cast<float>(f.keypoint.scale * scale_);
      double a = std::fmod(f.keypoint.angle + rotation_, 2.0 * std::numbers::pi);
      if (a < 0.0) a += 2.0 * std::numbers::pi;
      g.keypoint.angle = static_cast<float>(a);
      if (g.keypoint.angle >= static_cast<float>(2.0 * std::numbers::pi)) g.keypoint.angle = 0.0;
      q.features.push_back(g);
    }
    return q;
  }

 private:
  double uniform(double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

  const SyntheticSceneConfig& cfg_;
  std::mt19937_64 rng_;
  double rotation_ = 0.0;
  double scale_ = 1.0;
};

}  // namespace detail

/// Uniform random reference images in a frame; true queries are
/// projectively warped, bit-flipped, thinned copies of reference
/// i mod n_images; distractors and training images are fresh draws.
inline SyntheticScene generate_synthetic(const SyntheticSceneConfig& cfg) {
  cfg.validate();
  detail::SceneSampler sampler(cfg);
  SyntheticScene scene;
  scene.references.reserve(cfg.n_images);
  for (std::size_t i = 0; i < cfg.n_images; ++i) scene.references.push_back(sampler.random_image());
  for (std::size_t i = 0; i < cfg.n_queries; ++i) {
    const auto src = static_cast<std::uint32_t>(i % cfg.n_images);
    scene.queries.push_back(sampler.warp(scene.references[src], src));
  }
  for (std::size_t i = 0; i < cfg.n_distractors; ++i) {
    SyntheticQuery q;
    q.features = sampler.random_image();
    scene.queries.push_back(std::move(q));
  }
  for (std::size_t i = 0; i < cfg.n_training_images; ++i) scene.training.push_back(sampler.random_image());
  return scene;
}

// ---------------------------------------------------------------------------
// Ground-truth file: "query_path<TAB>relevant_image_id" per line, with -1
// marking a distractor. Paths are relative to the file's directory.
// ---------------------------------------------------------------------------

struct GroundTruthLine {
  std::string query_path;
  std::optional<std::uint32_t> relevant;
};

inline std::vector<GroundTruthLine> parse_ground_truth(std::istream& in) {
  std::vector<GroundTruthLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw UsageError("ground truth line " + std::to_string(lineno) + " has no TAB");
    GroundTruthLine g;
    g.query_path = line.substr(0, tab);
    const std::string id = line.substr(tab + 1);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(id, &used);
      if (used != id.size() || v < -1 || v >= static_cast<long long>(kMaxImages)) throw std::out_of_range(id);
      if (v >= 0) g.relevant = static_cast<std::uint32_t>(v);
    } catch (const std::logic_error&) {
      throw UsageError("ground truth line " + std::to_string(lineno) + ": bad image id '" + id + "'");
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline std::string format_ground_truth(std::span<const GroundTruthLine> lines) {
  std::ostringstream os;
  for (const auto& g : lines) {
    os << g.query_path << '\t' << (g.relevant ? static_cast<long long>(*g.relevant) : -1LL) << '\n';
  }
  return os.str();
}

/// Writes refs/, queries/, train/ and ground_truth.tsv under `dir`.
inline void write_synthetic(const SyntheticScene& scene, const std::filesystem::path& dir, std::size_t d_bits) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "refs");
  fs::create_directories(dir / "queries");
  auto name = [](const char* stem, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%05zu.bfds", stem, i);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < scene.references.size(); ++i) {
    write_descriptor_file(dir / "refs" / name("ref", i), d_bits, scene.references[i]);
  }
  std::vector<GroundTruthLine> gt;
  std::size_t true_i = 0;
  std::size_t distractor_i = 0;
  for (const auto& q : scene.queries) {
    const std::string file = q.source_image ? name("query", true_i++) : name("distractor", distractor_i++);
    write_descriptor_file(dir / "queries" / file, d_bits, q.features);
    gt.push_back({"queries/" + file, q.source_image});
  }
  if (!scene.training.empty()) {
    fs::create_directories(dir / "train");
    for (std::size_t i = 0; i < scene.training.size(); ++i) {
      write_descriptor_file(dir / "train" / name("train", i), d_bits, scene.training[i]);
    }
  }
  std::ofstream(dir / "ground_truth.tsv", std::ios::binary) << format_ground_truth(gt);
}

// ---------------------------------------------------------------------------
// Query pipeline and timing
// ---------------------------------------------------------------------------

struct StageTimings {
  double quantize_s = 0.0;
  double hamming_s = 0.0;
  double gv_s = 0.0;
  double total_s = 0.0;
};

struct PipelineConfig {
  ScoringConfig scoring;
  std::optional<GVConfig> gv;  // empty disables verification
};

struct QueryOutcome {
  std::vector<RankedImage> ranking;  // re-ordered by verification when enabled
  std::vector<GVReport> reports;
  StageTimings timings;

  /// Score of the top result: final GV score with verification, vote score
  /// without. Zero when nothing was retrieved.
  double top_score(bool with_gv) const {
    if (with_gv) return reports.empty() ? 0.0 : static_cast<double>(reports.front().final_score);
    return ranking.empty() ? 0.0 : ranking.front().score;
  }
  std::optional<std::uint32_t> top_image() const {
    if (ranking.empty()) return std::nullopt;
    return ranking.front().image_id;
  }
  bool any_accepted() const {
    return std::any_of(reports.begin(), reports.end(), [](const GVReport& r) { return r.accepted; });
  }
};

inline QueryOutcome run_query(std::span<const Feature> query, const EngineState& state, const PipelineConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  QueryOutcome out;
  SearchTimings st;
  auto result = search(query, state, cfg.scoring, &st);
  out.timings.quantize_s = st.quantize_s;
  out.timings.hamming_s = st.hamming_s;
  out.ranking = std::move(result.ranking);
  if (cfg.gv) {
    const auto t0 = Clock::now();
    out.reports = verify(out.ranking, result.votes, state, *cfg.gv);
    out.timings.gv_s = std::chrono::duration<double>(Clock::now() - t0).count();
    // Verified candidates first, in report order; the rest keep vote order.
    std::vector<RankedImage> reordered;
    for (const auto& r : out.reports) {
      reordered.push_back({r.image_id, static_cast<double>(r.final_score)});
    }
    for (std::size_t i = out.reports.size(); i < out.ranking.size(); ++i) reordered.push_back(out.ranking[i]);
    out.ranking = std::move(reordered);
  }
  out.timings.total_s = out.timings.quantize_s + out.timings.hamming_s + out.timings.gv_s;
  return out;
}

/// Runs queries concurrently over one immutable engine.
inline std::vector<QueryOutcome> run_queries(std::span<const std::vector<Feature>> queries, const EngineState& state,
                                             const PipelineConfig& cfg) {
  std::vector<QueryOutcome> out(queries.size());
  detail::parallel_for(queries.size(), [&](std::size_t i) { out[i] = run_query(queries[i], state, cfg); }, 8);
  return out;
}

/// Stage durations of the run with the median total over `repetitions`
/// single-threaded runs, so the stages add up to the reported total.
inline StageTimings timing_report(std::span<const Feature> query, const EngineState& state, const PipelineConfig& cfg,
                                  std::size_t repetitions = 5) {
  repetitions = std::max<std::size_t>(repetitions, 5);
  std::vector<StageTimings> runs;
  runs.reserve(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) runs.push_back(run_query(query, state, cfg).timings);
  std::sort(runs.begin(), runs.end(), [](const StageTimings& a, const StageTimings& b) { return a.total_s < b.total_s; });
  return runs[runs.size() / 2];
}

// ---------------------------------------------------------------------------
// Benchmark summary
// ---------------------------------------------------------------------------

struct EvaluationSummary {
  std::size_t true_queries = 0;
  std::size_t distractors = 0;
  double map = 0.0;
  double top1_recall = 0.0;  // with GV the top result must also be accepted
  std::size_t accepted_distractors = 0;
  std::vector<double> positive_scores;
  std::vector<double> negative_scores;
  std::vector<RocPoint> roc;
  std::optional<double> zero_fp;
  StageTimings median_timings;
};

/// `relevant[q]` empty marks query q as a distractor. A true query's
/// positive score is its top score when the top result is correct and 0
/// otherwise; a distractor's negative score is its top score.
inline EvaluationSummary summarize(std::span<const QueryOutcome> outcomes,
                                   std::span<const std::optional<std::uint32_t>> relevant, bool with_gv) {
  if (outcomes.size() != relevant.size()) throw UsageError("outcomes and ground truth differ in length");
  EvaluationSummary s;
  std::vector<std::vector<std::uint32_t>> rankings;
  GroundTruth gt;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < outcomes.size(); ++q) {
    const auto& o = outcomes[q];
    const double top = o.top_score(with_gv);
    if (relevant[q]) {
      ++s.true_queries;
      std::vector<std::uint32_t> ids;
      ids.reserve(o.ranking.size());
      for (const auto& r : o.ranking) ids.push_back(r.image_id);
      rankings.push_back(std::move(ids));
      gt.relevant.push_back({*relevant[q]});
      const bool correct = o.top_image() == relevant[q];
      const bool accepted = !with_gv || (!o.reports.empty() && o.reports.front().accepted);
      if (correct && accepted) ++hits;
      s.positive_scores.push_back(correct ? top : 0.0);
    } else {
      ++s.distractors;
      s.negative_scores.push_back(top);
      if (with_gv && o.any_accepted()) ++s.accepted_distractors;
    }
  }
  if (s.true_queries > 0) {
    s.map = mean_average_precision(rankings, gt);
    s.top1_recall = static_cast<double>(hits) / static_cast<double>(s.true_queries);
  }
  if (!s.positive_scores.empty() && !s.negative_scores.empty()) {
    s.roc = roc_curve(s.positive_scores, s.negative_scores);
    s.zero_fp = zero_fp_accuracy(s.positive_scores, s.negative_scores);
  }
  if (!outcomes.empty()) {
    auto median = [&](auto field) {
      std::vector<double> v;
      v.reserve(outcomes.size());
      for (const auto& o : outcomes) v.push_back(o.timings.*field);
      std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
      return v[v.size() / 2];
    };
    s.median_timings.quantize_s = median(&StageTimings::quantize_s);
    s.median_timings.hamming_s = median(&StageTimings::hamming_s);
    s.median_timings.gv_s = median(&StageTimings::gv_s);
    s.median_timings.total_s = median(&StageTimings::total_s);
  }
  return s;
}

/// Builds an engine over `references` (image id = position).
inline EngineState index_images(Vocabulary vocab, SubstringDictionary dict,
                                std::span<const std::vector<Feature>> references) {
  EngineState state(std::move(vocab), std::move(dict));
  for (std::size_t i = 0; i < references.size(); ++i) {
    state.add_image(static_cast<std::uint32_t>(i), references[i]);
  }
  return state;
}

}  // namespace mvs
