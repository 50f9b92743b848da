#pragma once

// Planar primitives for scene scoring: oriented rectangles with a
// separating-axis overlap test, even-odd point-in-polygon, polyline
// projection and angle wrapping.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "tandem/error.hpp"

namespace tandem::geom {

using Vec2 = Eigen::Vector2d;
using Polygon = std::vector<Vec2>;

/// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

inline Vec2 heading_vector(double theta) { return {std::cos(theta), std::sin(theta)}; }

inline double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

struct OrientedBox {
  Vec2 center = Vec2::Zero();
  double heading = 0;
  double length = 0;  // along heading
  double width = 0;

  std::array<Vec2, 4> corners() const {
    const Vec2 f = heading_vector(heading) * (0.5 * length);
    const Vec2 l = Vec2(-std::sin(heading), std::cos(heading)) * (0.5 * width);
    return {center + f + l, center + f - l, center - f - l, center - f + l};
  }

  /// Sub-box covering the front (+1) or rear (-1) half.
  OrientedBox half(int side) const {
    return {center + heading_vector(heading) * (0.25 * length * side), heading, 0.5 * length, width};
  }
};

/// Separating-axis test over the four edge normals. Touching boxes count as
/// overlapping.
inline bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners(), cb = b.corners();
  for (double theta : {a.heading, a.heading + std::numbers::pi / 2, b.heading, b.heading + std::numbers::pi / 2}) {
    const Vec2 axis = heading_vector(theta);
    double amin = std::numeric_limits<double>::infinity(), amax = -amin, bmin = amin, bmax = -amin;
    for (const auto& p : ca) {
      const double t = axis.dot(p);
      amin = std::min(amin, t);
      amax = std::max(amax, t);
    }
    for (const auto& p : cb) {
      const double t = axis.dot(p);
      bmin = std::min(bmin, t);
      bmax = std::max(bmax, t);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

/// Even-odd ray casting along +x.
inline bool point_in_polygon(const Vec2& p, const Polygon& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

inline double signed_area(const Polygon& poly) {
  double s = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) s += cross(poly[j], poly[i]);
  return 0.5 * s;
}

inline bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
  auto orient = [](const Vec2& a, const Vec2& b, const Vec2& c) {
    const double v = cross(b - a, c - a);
    return (v > 0.0) - (v < 0.0);
  };
  auto on_segment = [](const Vec2& a, const Vec2& b, const Vec2& c) {
    return std::min(a.x(), b.x()) <= c.x() && c.x() <= std::max(a.x(), b.x()) && std::min(a.y(), b.y()) <= c.y() &&
           c.y() <= std::max(a.y(), b.y());
  };
  const int o1 = orient(p1, p2, q1), o2 = orient(p1, p2, q2), o3 = orient(q1, q2, p1), o4 = orient(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

/// Throws degenerate_polygon unless the polygon has >= 3 finite vertices,
/// nonzero area and no crossing non-adjacent edges.
inline void validate_polygon(const Polygon& poly, const char* what) {
  auto fail = [&](const char* why) { throw Error(ErrorCode::degenerate_polygon, std::string(what) + ": " + why); };
  if (poly.size() < 3) fail("fewer than 3 vertices");
  for (const auto& p : poly)
    if (!p.allFinite()) fail("non-finite vertex");
  if (std::abs(signed_area(poly)) <= 1e-12) fail("zero area");
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) fail("self-intersecting");
    }
}

struct PolylineProjection {
  double arc_length = 0;  // along the polyline to the foot point
  double lateral = 0;     // signed, positive to the left
  std::size_t segment = 0;
};

/// Closest point on a polyline (>= 2 points).
inline PolylineProjection project_onto_polyline(const Vec2& p, const std::vector<Vec2>& line) {
  PolylineProjection best;
  double best_d2 = std::numeric_limits<double>::infinity();
  double start = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 seg = line[i + 1] - line[i];
    const double len2 = seg.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - line[i]).dot(seg) / len2, 0.0, 1.0) : 0.0;
    const Vec2 foot = line[i] + t * seg;
    const double d2 = (p - foot).squaredNorm();
    const double len = std::sqrt(len2);
    if (d2 < best_d2) {
      best_d2 = d2;
      const double side = cross(seg, p - line[i]);
      best = {start + t * len, (side >= 0.0 ? 1.0 : -1.0) * std::sqrt(d2), i};
    }
    start += len;
  }
  return best;
}

}  // namespace tandem::geom
