#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace birdflux {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  bool operator==(const Vec2&) const = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

/// Axis-aligned planar region, coordinates in km.
struct Domain {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  bool contains(Vec2 p) const { return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max; }
};

using Polygon = std::vector<Vec2>;

/// Signed shoelace area; positive for counter-clockwise vertex order.
double signed_area(std::span<const Vec2> poly);
Vec2 centroid(std::span<const Vec2> poly);
double perimeter(std::span<const Vec2> poly);

/// Point-in-convex-polygon test for a counter-clockwise polygon (boundary counts as inside).
bool contains(std::span<const Vec2> convex_ccw, Vec2 p, double eps = 1e-12);

/// Exact area of the intersection between a simple polygon (ccw) and a disk.
double circle_polygon_overlap(std::span<const Vec2> poly, Vec2 center, double radius);

/// Counter-clockwise convex hull (Andrew's monotone chain). Collinear points are dropped.
Polygon convex_hull(std::vector<Vec2> points);

/// Outward offset of a convex ccw polygon by `distance`, corners rounded with
/// arc segments no wider than `max_arc_step` radians.
Polygon buffer_convex(std::span<const Vec2> hull, double distance, double max_arc_step = 0.1);

/// Point at arc length `s` along the closed polygon boundary (s wraps).
Vec2 point_at_arclength(std::span<const Vec2> poly, double s);

}  // namespace birdflux
