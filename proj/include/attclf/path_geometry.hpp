#pragma once

// Reference paths as arc-length parameterized, piecewise-constant curvature
// profiles. Arc length wraps modulo the total length, so every track behaves
// as if it repeats.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "attclf/csv.hpp"
#include "attclf/errors.hpp"

namespace attclf {

struct PathSegment {
  double length = 0.0;     // m
  double curvature = 0.0;  // 1/m
};

struct GlobalPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // psi = phi + mu
};

class PathSpec {
 public:
  static constexpr double kPoseStep = 0.1;  // m, resolution of the cached pose table

  explicit PathSpec(std::vector<PathSegment> segments, double lane_half_width = 2.0,
                    double smoothing_window = 0.0)
      : segments_(std::move(segments)), half_width_(lane_half_width), window_(smoothing_window) {
    detail::require(!segments_.empty(), "segments", "path needs at least one segment");
    detail::require(lane_half_width > 0.0, "lane_half_width", "must be positive");
    detail::require(smoothing_window >= 0.0, "smoothing_window", "must be non-negative");
    ends_.reserve(segments_.size());
    integral_.reserve(segments_.size() + 1);
    integral_.push_back(0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& seg = segments_[i];
      const std::string field = "segments[" + std::to_string(i) + "]";
      detail::require(std::isfinite(seg.length) && seg.length > 0.0, field + ".length", "must be > 0");
      detail::require(std::isfinite(seg.curvature) && std::abs(seg.curvature) * half_width_ < 1.0,
                      field + ".curvature", "|curvature| * lane_half_width must be < 1");
      acc += seg.length;
      ends_.push_back(acc);
      integral_.push_back(integral_.back() + seg.length * seg.curvature);
    }
    total_ = acc;
    build_pose_table();
  }

  const std::vector<PathSegment>& segments() const noexcept { return segments_; }
  double lane_half_width() const noexcept { return half_width_; }
  double smoothing_window() const noexcept { return window_; }
  double total_length() const noexcept { return total_; }

  double wrap(double s) const noexcept {
    double r = s - total_ * std::floor(s / total_);
    if (r >= total_) r -= total_;
    return r < 0.0 ? 0.0 : r;
  }

  /// Raw segment curvature at s; segment i covers [start_i, end_i).
  double raw_curvature(double s) const noexcept {
    const double r = wrap(s);
    const auto it = std::upper_bound(ends_.begin(), ends_.end(), r);
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - ends_.begin()), segments_.size() - 1);
    return segments_[idx].curvature;
  }

  /// Curvature, averaged over the smoothing window when one is configured.
  double curvature_at(double s) const noexcept {
    if (window_ <= 0.0) return raw_curvature(s);
    const double h = 0.5 * window_;
    return (cumulative(s + h) - cumulative(s - h)) / window_;
  }

  /// d(kappa)/ds of curvature_at. Zero away from joints when unsmoothed.
  double curvature_slope(double s) const noexcept {
    if (window_ <= 0.0) return 0.0;
    const double h = 0.5 * window_;
    return (raw_curvature(s + h) - raw_curvature(s - h)) / window_;
  }

  /// Integral of the raw curvature from 0 to s (s may be any real).
  double cumulative(double s) const noexcept {
    const double laps = std::floor(s / total_);
    double r = s - laps * total_;
    if (r >= total_) r = 0.0;
    const auto it = std::upper_bound(ends_.begin(), ends_.end(), r);
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - ends_.begin()), segments_.size() - 1);
    const double start = idx == 0 ? 0.0 : ends_[idx - 1];
    return laps * integral_.back() + integral_[idx] + segments_[idx].curvature * (r - start);
  }

  /// Center-line tangent angle phi(s), from the cached table.
  double tangent_angle(double s) const { return center_pose(s).heading; }

  /// Global pose of the point at arc length s, lateral offset d (left positive),
  /// heading error mu.
  GlobalPose global_pose(double s, double d, double mu) const {
    const GlobalPose c = center_pose(s);
    return {c.x - d * std::sin(c.heading), c.y + d * std::cos(c.heading), c.heading + mu};
  }

 private:
  struct Node {
    double s, phi, x, y;
  };

  double left_limit_curvature(double s) const {
    // curvature_at(s) approached from below; only differs at raw segment joints.
    if (window_ > 0.0) return curvature_at(s);
    const auto it = std::lower_bound(ends_.begin(), ends_.end(), s);
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - ends_.begin()), segments_.size() - 1);
    return segments_[idx].curvature;
  }

  static void advance_arc(double& x, double& y, double phi0, double phi1, double ds) {
    const double dphi = phi1 - phi0;
    if (std::abs(dphi) > 1e-9) {
      const double k = dphi / ds;
      x += (std::sin(phi1) - std::sin(phi0)) / k;
      y += (std::cos(phi0) - std::cos(phi1)) / k;
    } else {
      const double mid = 0.5 * (phi0 + phi1);
      x += ds * std::cos(mid);
      y += ds * std::sin(mid);
    }
  }

  void build_pose_table() {
    const auto n = static_cast<std::size_t>(std::ceil(total_ / kPoseStep - 1e-9));
    table_.reserve(n + 1);
    table_.push_back({0.0, 0.0, 0.0, 0.0});
    for (std::size_t i = 1; i <= n; ++i) {
      const Node& prev = table_.back();
      const double s1 = std::min(static_cast<double>(i) * kPoseStep, total_);
      const double ds = s1 - prev.s;
      // Trapezoidal rule on phi; the position follows the exact arc of the step.
      const double phi1 = prev.phi + 0.5 * ds * (curvature_at(prev.s) + left_limit_curvature(s1));
      double x = prev.x, y = prev.y;
      advance_arc(x, y, prev.phi, phi1, ds);
      table_.push_back({s1, phi1, x, y});
    }
  }

  GlobalPose center_pose(double s) const {
    const double laps = std::floor(s / total_);
    double r = s - laps * total_;
    if (r >= total_) r = 0.0;
    auto idx = static_cast<std::size_t>(r / kPoseStep);
    idx = std::min(idx, table_.size() - 2);
    const Node& a = table_[idx];
    const Node& b = table_[idx + 1];
    const double frac = (r - a.s) / (b.s - a.s);
    const double phi = a.phi + frac * (b.phi - a.phi);
    double x = a.x, y = a.y;
    advance_arc(x, y, a.phi, phi, r - a.s);
    GlobalPose p{x, y, phi};
    // Each completed lap applies the rigid transform taking the start pose to the end pose.
    const Node& end = table_.back();
    for (long k = 0; k < static_cast<long>(laps); ++k) {
      const double c = std::cos(end.phi), sn = std::sin(end.phi);
      p = {end.x + c * p.x - sn * p.y, end.y + sn * p.x + c * p.y, p.heading + end.phi};
    }
    return p;
  }

  std::vector<PathSegment> segments_;
  double half_width_;
  double window_;
  double total_ = 0.0;
  std::vector<double> ends_;
  std::vector<double> integral_;
  std::vector<Node> table_;
};

inline double curvature_at(const PathSpec& path, double s) { return path.curvature_at(s); }

inline GlobalPose global_pose(const PathSpec& path, double s, double d, double mu) {
  return path.global_pose(s, d, mu);
}

enum class TrackKind { straight, circle, s_curve, random };

inline TrackKind parse_track_kind(const std::string& name) {
  if (name == "straight") return TrackKind::straight;
  if (name == "circle") return TrackKind::circle;
  if (name == "s_curve") return TrackKind::s_curve;
  if (name == "random") return TrackKind::random;
  throw ValidationError("kind", "unknown track kind '" + name + "' (straight, circle, s_curve, random)");
}

inline std::string to_string(TrackKind k) {
  switch (k) {
    case TrackKind::straight: return "straight";
    case TrackKind::circle: return "circle";
    case TrackKind::s_curve: return "s_curve";
    case TrackKind::random: return "random";
  }
  return "?";
}

struct TrackParams {
  double length = 300.0;
  double radius = 50.0;  // circle and s_curve
  double lane_half_width = 2.0;
  double smoothing_window = 0.0;
  // random tracks
  double segment_length_min = 20.0;
  double segment_length_max = 80.0;
  double curvature_min = 0.01;
  double curvature_max = 0.05;
  double straight_probability = 0.3;

  void validate(TrackKind kind) const {
    detail::require(length > 0.0, "length", "must be > 0");
    detail::require(lane_half_width > 0.0, "lane_half_width", "must be > 0");
    detail::require(smoothing_window >= 0.0, "smoothing_window", "must be >= 0");
    if (kind == TrackKind::circle || kind == TrackKind::s_curve) {
      detail::require(radius > lane_half_width, "radius", "must exceed lane_half_width");
    }
    if (kind == TrackKind::random) {
      detail::require(segment_length_min > 0.0 && segment_length_min <= segment_length_max,
                      "segment_length_min", "need 0 < segment_length_min <= segment_length_max");
      detail::require(curvature_min >= 0.0 && curvature_min <= curvature_max, "curvature_min",
                      "need 0 <= curvature_min <= curvature_max");
      detail::require(curvature_max * lane_half_width < 1.0, "curvature_max",
                      "|curvature| * lane_half_width must be < 1");
      detail::require(straight_probability >= 0.0 && straight_probability <= 1.0, "straight_probability",
                      "must lie in [0, 1]");
    }
  }
};

/// Builds a track; random tracks are a pure function of the seed.
inline PathSpec make_track(TrackKind kind, std::uint64_t seed, const TrackParams& p) {
  p.validate(kind);
  std::vector<PathSegment> segs;
  switch (kind) {
    case TrackKind::straight:
      segs.push_back({p.length, 0.0});
      break;
    case TrackKind::circle:
      segs.push_back({p.length, 1.0 / p.radius});
      break;
    case TrackKind::s_curve: {
      const double k = 1.0 / p.radius;
      segs = {{0.2 * p.length, 0.0}, {0.3 * p.length, k}, {0.3 * p.length, -k}, {0.2 * p.length, 0.0}};
      break;
    }
    case TrackKind::random: {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      double acc = 0.0;
      while (acc < p.length - 1e-9) {
        double len = p.segment_length_min + unit(rng) * (p.segment_length_max - p.segment_length_min);
        len = std::min(len, p.length - acc);
        double k = 0.0;
        const double draw_straight = unit(rng);
        const double magnitude = p.curvature_min + unit(rng) * (p.curvature_max - p.curvature_min);
        const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
        if (draw_straight >= p.straight_probability) k = sign * magnitude;
        segs.push_back({len, k});
        acc += len;
      }
      break;
    }
  }
  return PathSpec(std::move(segs), p.lane_half_width, p.smoothing_window);
}

/// CSV: optional '#' comment lines (carrying lane_half_width / smoothing_window),
/// one header line `length,curvature`, one row per segment.
inline void write_path_csv(std::ostream& os, const PathSpec& path, const std::string& comment = "") {
  os << "# " << (comment.empty() ? "path" : comment) << " lane_half_width=" << csv::fmt(path.lane_half_width())
     << " smoothing_window=" << csv::fmt(path.smoothing_window()) << '\n';
  os << "length,curvature\n";
  for (const auto& s : path.segments()) csv::row(os, s.length, s.curvature);
}

inline PathSpec read_path_csv(std::istream& is) {
  const csv::Table t = csv::read(is);
  const auto lc = t.column("length");
  const auto kc = t.column("curvature");
  std::vector<PathSegment> segs;
  for (const auto& r : t.rows) segs.push_back({csv::to_double(r[lc], "length"), csv::to_double(r[kc], "curvature")});
  const double hw = csv::to_double(csv::comment_value(t, "lane_half_width", "2"), "lane_half_width");
  const double win = csv::to_double(csv::comment_value(t, "smoothing_window", "0"), "smoothing_window");
  return PathSpec(std::move(segs), hw, win);
}

}  // namespace attclf
