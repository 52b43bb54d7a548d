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

/// \file geometry.hpp
/// Geometric verification of retrieval candidates.
///
/// Matches voted into a candidate image are fed, best substring distance
/// first, to a progressive-sampling homography estimator. A model survives
/// only if the reference image rectangle projects to a convex quadrilateral
/// in the query, and the final score counts inliers after removing those
/// that duplicate an earlier inlier in both images.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "mvs/core.hpp"
#include "mvs/index.hpp"
#include "mvs/scoring.hpp"

namespace mvs {

/// Minimal sample was collinear, coincident or otherwise rank deficient.
class DegenerateSampleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// A reference-image point and the query-image point it matched.
struct Correspondence {
  Point2 reference;
  Point2 query;
};

inline constexpr double kProjectiveEps = 1e-12;

/// 3x3 projective map from reference to query coordinates, scaled so that
/// h(2,2) = 1 whenever that entry is nonzero (unit Frobenius norm otherwise).
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}

  explicit Homography(const Eigen::Matrix3d& m) : m_(m) {
    if (std::abs(m_(2, 2)) > kProjectiveEps) {
      m_ /= m_(2, 2);
    } else if (const double n = m_.norm(); n > 0.0) {
      m_ /= n;
    }
  }

  const Eigen::Matrix3d& matrix() const noexcept { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  bool finite() const noexcept { return m_.allFinite(); }
  bool invertible() const { return finite() && std::abs(m_.determinant()) > kProjectiveEps; }

  /// Maps p with perspective division; empty when p lands at infinity.
  std::optional<Point2> apply(const Point2& p) const noexcept { return project(m_, p); }

  Homography inverse() const { return Homography(m_.inverse()); }

  static std::optional<Point2> project(const Eigen::Matrix3d& m, const Point2& p) noexcept {
    const double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
    if (!(std::abs(w) >= kProjectiveEps)) return std::nullopt;
    return Point2{(m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2)) / w,
                  (m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)) / w};
  }

 private:
  Eigen::Matrix3d m_;
};

namespace detail {

// Similarity that moves the centroid to the origin and the mean distance
// from it to sqrt(2).
inline std::optional<Eigen::Matrix3d> normalizing_transform(std::span<const Point2> pts) {
  double cx = 0.0;
  double cy = 0.0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean = 0.0;
  for (const auto& p : pts) mean += std::hypot(p.x - cx, p.y - cy);
  mean /= static_cast<double>(pts.size());
  if (!(mean > 1e-12)) return std::nullopt;
  const double s = std::sqrt(2.0) / mean;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0;
  return t;
}

inline double triangle_area2(const Point2& a, const Point2& b, const Point2& c) noexcept {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// Collinearity tolerance on doubled triangle area in normalized coordinates.
inline constexpr double kCollinearEps = 1e-9;

inline bool has_collinear_triple(std::span<const Point2> p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j)
      for (std::size_t k = j + 1; k < p.size(); ++k)
        if (std::abs(triangle_area2(p[i], p[j], p[k])) < kCollinearEps) return true;
  return false;
}

/// Normalized DLT; empty on a degenerate configuration.
inline std::optional<Homography> try_dlt(std::span<const Correspondence> pairs) {
  const std::size_t n = pairs.size();
  if (n < 4) return std::nullopt;
  std::vector<Point2> src(n);
  std::vector<Point2> dst(n);
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = pairs[i].reference;
    dst[i] = pairs[i].query;
  }
  const auto ts = normalizing_transform(src);
  const auto td = normalizing_transform(dst);
  if (!ts || !td) return std::nullopt;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = {(*ts)(0, 0) * src[i].x + (*ts)(0, 2), (*ts)(1, 1) * src[i].y + (*ts)(1, 2)};
    dst[i] = {(*td)(0, 0) * dst[i].x + (*td)(0, 2), (*td)(1, 1) * dst[i].y + (*td)(1, 2)};
  }
  if (n == 4 && (has_collinear_triple(src) || has_collinear_triple(dst))) return std::nullopt;

  // Minimal samples: the exact solution with h22 = 1 from an 8x8 system is
  // much cheaper than the SVD. Falls through when that system is singular.
  if (n == 4) {
    Eigen::Matrix<double, 8, 8> a8;
    Eigen::Matrix<double, 8, 1> b8;
    for (std::size_t i = 0; i < 4; ++i) {
      const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
      const auto r = static_cast<Eigen::Index>(2 * i);
      a8.row(r) << x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y;
      a8.row(r + 1) << 0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y;
      b8(r) = u;
      b8(r + 1) = v;
    }
    const Eigen::PartialPivLU<Eigen::Matrix<double, 8, 8>> lu(a8);
    if (lu.rcond() > 1e-10) {
      const Eigen::Matrix<double, 8, 1> h = lu.solve(b8);
      Eigen::Matrix3d hn;
      hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
      const Homography out(td->inverse() * hn * (*ts));
      if (out.invertible()) return out;
      return std::nullopt;
    }
  }

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(std::max<std::size_t>(2 * n, 9)), 9);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
    a.row(r + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  // A unique solution needs a one-dimensional null space.
  if (!(s(7) > 1e-10 * s(0))) return std::nullopt;
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Homography out(td->inverse() * hn * (*ts));
  if (!out.invertible()) return std::nullopt;
  return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Least-squares homography through the normalized direct linear
/// transform. Throws DegenerateSampleError for collinear or coincident
/// configurations.
inline Homography estimate_homography_dlt(std::span<const Correspondence> pairs) {
  if (pairs.size() < 4) throw UsageError("a homography needs at least 4 correspondences");
  auto h = detail::try_dlt(pairs);
  if (!h) throw DegenerateSampleError("degenerate correspondence configuration");
  return *h;
}

struct GVConfig {
  std::size_t top_r = 3;
  std::size_t max_iterations = 2000;
  double inlier_px = 5.0;
  std::size_t min_inliers = 12;
  double dedup_px = 5.0;
  bool convexity_check = true;
  std::uint64_t seed = 0;
  /// Early-exit confidence of the sampling loop. Kept very close to 1
  /// because a noisy all-inlier sample rarely explains every inlier.
  double confidence = 0.999999999;

  void validate() const {
    if (top_r < 1) throw ConfigError("top_r must be >= 1");
    if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    if (!(inlier_px > 0.0)) throw ConfigError("inlier_px must be positive");
    if (!(dedup_px > 0.0)) throw ConfigError("dedup_px must be positive");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence must lie in (0, 1)");
  }
};

/// Inlier test: forward and backward transfer errors both below `px`.
inline bool is_inlier(const Eigen::Matrix3d& h, const Eigen::Matrix3d& h_inv, const Correspondence& c,
                      double px) noexcept {
  const auto fwd = Homography::project(h, c.reference);
  if (!fwd || std::hypot(fwd->x - c.query.x, fwd->y - c.query.y) >= px) return false;
  const auto bwd = Homography::project(h_inv, c.query);
  return bwd && std::hypot(bwd->x - c.reference.x, bwd->y - c.reference.y) < px;
}

struct ProsacResult {
  Homography homography;
  std::vector<std::size_t> inliers;  // indices into the input, ascending
  std::size_t iterations = 0;
};

/// Progressive sample consensus over correspondences sorted best first.
///
/// Samples are drawn from a pool of the top-n correspondences that grows
/// on the standard schedule; each 4-sample gives a DLT model, and the model
/// with the most inliers wins. Returns nothing for fewer than 4 inputs or
/// when no model reaches 4 inliers.
inline std::optional<ProsacResult> prosac_homography(std::span<const Correspondence> sorted,
                                                     const GVConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  constexpr std::size_t m = 4;
  const std::size_t big_n = sorted.size();
  if (big_n < m) return std::nullopt;

  std::mt19937_64 rng(seed);
  auto uniform = [&](std::size_t hi) { return std::uniform_int_distribution<std::size_t>(0, hi - 1)(rng); };

  // Growth schedule: T_n is the expected number of samples drawn from the
  // top-n pool, T'_n its integer cumulative counterpart.
  double t_n = static_cast<double>(cfg.max_iterations);
  for (std::size_t i = 0; i < m; ++i) t_n *= static_cast<double>(m - i) / static_cast<double>(big_n - i);
  double t_n_prime = 1.0;
  std::size_t n = m;

  std::optional<ProsacResult> best;
  std::size_t best_count = 0;
  std::size_t needed = cfg.max_iterations;
  std::array<std::size_t, m> sample{};
  std::array<Correspondence, m> pts{};
  std::vector<std::size_t> inliers;
  inliers.reserve(big_n);

  std::size_t t = 0;
  while (t < std::min(needed, cfg.max_iterations)) {
    ++t;
    if (static_cast<double>(t) > t_n_prime && n < big_n) {
      const double t_next = t_n * static_cast<double>(n + 1) / static_cast<double>(n + 1 - m);
      ++n;
      t_n_prime += std::ceil(t_next - t_n);
      t_n = t_next;
    }

    std::size_t drawn = 0;
    std::size_t pool = n;
    if (t_n_prime >= static_cast<double>(t)) {
      // Always include the newest member of the pool.
      sample[drawn++] = n - 1;
      pool = n - 1;
    }
    while (drawn < m) {
      const std::size_t c = uniform(pool);
      if (std::find(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(drawn), c) ==
          sample.begin() + static_cast<std::ptrdiff_t>(drawn)) {
        sample[drawn++] = c;
      }
    }
    for (std::size_t i = 0; i < m; ++i) pts[i] = sorted[sample[i]];

    const auto model = detail::try_dlt(pts);
    if (!model) continue;
    const Eigen::Matrix3d& h = model->matrix();
    const Eigen::Matrix3d h_inv = h.inverse();

    inliers.clear();
    for (std::size_t i = 0; i < big_n; ++i) {
      if (is_inlier(h, h_inv, sorted[i], cfg.inlier_px)) inliers.push_back(i);
    }
    if (inliers.size() > best_count) {
      best_count = inliers.size();
      best = ProsacResult{*model, inliers, t};
      if (best_count == big_n) break;
      const double ratio = static_cast<double>(best_count) / static_cast<double>(big_n);
      const double p_good = std::pow(ratio, static_cast<double>(m));
      if (p_good > 0.0) {
        const double k = std::log(1.0 - cfg.confidence) / std::log(1.0 - std::min(p_good, 1.0 - 1e-12));
        needed = static_cast<std::size_t>(std::ceil(std::max(k, 1.0)));
      }
    }
  }
  if (!best || best_count < m) return std::nullopt;
  best->iterations = t;
  return best;
}

/// Correspondences of `matches` in quality order: ascending substring
/// distance, ties in the order the matches were recorded.
inline std::vector<FeatureMatch> quality_sorted(std::span<const FeatureMatch> matches) {
  std::vector<FeatureMatch> out(matches.begin(), matches.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const FeatureMatch& a, const FeatureMatch& b) { return a.distance < b.distance; });
  return out;
}

inline Correspondence to_correspondence(const FeatureMatch& m) noexcept {
  return {{static_cast<double>(m.entry.x), static_cast<double>(m.entry.y)}, {m.query_x, m.query_y}};
}

/// 2D cross product in a y-up frame, so that a clockwise-on-screen
/// rectangle (image coordinates, y down) yields positive values.
inline double corner_cross(const Point2& from, const Point2& to_u, const Point2& to_v) noexcept {
  const double ux = to_u.x - from.x, uy = to_u.y - from.y;
  const double vx = to_v.x - from.x, vy = to_v.y - from.y;
  return uy * vx - ux * vy;
}

/// True when the reference rectangle (0,0),(w,0),(w,h),(0,h) maps to a
/// strictly convex quadrilateral with the same orientation.
inline bool convexity_check(const Homography& h, double ref_width, double ref_height) {
  if (!h.finite()) return false;
  const std::array<Point2, 4> corners{{{0.0, 0.0}, {ref_width, 0.0}, {ref_width, ref_height}, {0.0, ref_height}}};
  std::array<Point2, 4> p{};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto q = h.apply(corners[i]);
    if (!q) return false;
    p[i] = *q;
  }
  const Point2 &a = p[0], &b = p[1], &c = p[2], &d = p[3];
  return corner_cross(a, d, b) > 0.0 && corner_cross(b, a, c) > 0.0 && corner_cross(c, b, d) > 0.0 &&
         corner_cross(d, c, a) > 0.0;
}

/// Greedy scan that drops an inlier when an already kept inlier lies within
/// `dedup_px` of it in the query image and in the reference image.
inline std::vector<FeatureMatch> dedup_inliers(std::span<const FeatureMatch> inliers, double dedup_px) {
  std::vector<FeatureMatch> kept;
  kept.reserve(inliers.size());
  for (const auto& m : inliers) {
    const bool dup = std::any_of(kept.begin(), kept.end(), [&](const FeatureMatch& k) {
      return std::hypot(m.query_x - k.query_x, m.query_y - k.query_y) < dedup_px &&
             std::hypot(static_cast<double>(m.entry.x) - k.entry.x,
                        static_cast<double>(m.entry.y) - k.entry.y) < dedup_px;
    });
    if (!dup) kept.push_back(m);
  }
  return kept;
}

struct GVReport {
  std::uint32_t image_id = 0;
  std::optional<Homography> homography;
  std::vector<FeatureMatch> inlier_matches;  // after deduplication
  std::size_t match_count = 0;
  std::size_t raw_inliers = 0;
  std::size_t deduped_inliers = 0;
  bool convex = false;
  std::size_t final_score = 0;
  bool accepted = false;
};

/// Verifies one candidate image from its voted matches.
inline GVReport verify_candidate(std::uint32_t image_id, std::span<const FeatureMatch> all_matches,
                                 const EngineState& state, const GVConfig& cfg) {
  GVReport r;
  r.image_id = image_id;
  std::vector<FeatureMatch> mine;
  for (const auto& m : all_matches) {
    if (m.entry.image_id == image_id) mine.push_back(m);
  }
  r.match_count = mine.size();
  const auto sorted = quality_sorted(mine);
  std::vector<Correspondence> corr(sorted.size());
  std::transform(sorted.begin(), sorted.end(), corr.begin(), to_correspondence);

  const auto model = prosac_homography(corr, cfg, detail::splitmix64(cfg.seed ^ (std::uint64_t{image_id} << 32)));
  if (!model) return r;

  r.homography = model->homography;
  r.raw_inliers = model->inliers.size();
  const auto ext = state.index().extent(image_id);
  r.convex = convexity_check(model->homography, ext.width, ext.height);

  std::vector<FeatureMatch> inl;
  inl.reserve(model->inliers.size());
  for (auto i : model->inliers) inl.push_back(sorted[i]);
  r.inlier_matches = dedup_inliers(inl, cfg.dedup_px);
  r.deduped_inliers = r.inlier_matches.size();
  r.final_score = (cfg.convexity_check && !r.convex) ? 0 : r.deduped_inliers;
  r.accepted = r.final_score > 0 && r.final_score >= cfg.min_inliers;
  return r;
}

/// Verifies the top `cfg.top_r` candidates of `ranking`; reports come back
/// by descending final score, ties in ranking order.
inline std::vector<GVReport> verify(std::span<const RankedImage> ranking, const VoteTable& votes,
                                    const EngineState& state, const GVConfig& cfg) {
  cfg.validate();
  std::vector<GVReport> reports;
  const std::size_t r = std::min(cfg.top_r, ranking.size());
  reports.reserve(r);
  for (std::size_t i = 0; i < r; ++i) {
    reports.push_back(verify_candidate(ranking[i].image_id, votes.matches, state, cfg));
  }
  std::stable_sort(reports.begin(), reports.end(),
                   [](const GVReport& a, const GVReport& b) { return a.final_score > b.final_score; });
  return reports;
}

}  // namespace mvs
