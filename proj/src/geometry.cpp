#include "birdflux/geometry.hpp"

#include <algorithm>
#include <numbers>
#include <stdexcept>

namespace birdflux {

double signed_area(std::span<const Vec2> poly) {
  double a = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t k = 0; k < n; ++k) a += cross(poly[k], poly[(k + 1) % n]);
  return 0.5 * a;
}

Vec2 centroid(std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  // Shift to the first vertex to limit cancellation on large coordinates.
  const Vec2 o = poly[0];
  double a = 0.0;
  Vec2 c{};
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 p = poly[k] - o;
    const Vec2 q = poly[(k + 1) % n] - o;
    const double w = cross(p, q);
    a += w;
    c += (p + q) * w;
  }
  if (a == 0.0) throw std::invalid_argument("centroid of a degenerate polygon");
  return o + c * (1.0 / (3.0 * a));
}

double perimeter(std::span<const Vec2> poly) {
  double p = 0.0;
  for (std::size_t k = 0; k < poly.size(); ++k) p += distance(poly[k], poly[(k + 1) % poly.size()]);
  return p;
}

bool contains(std::span<const Vec2> convex_ccw, Vec2 p, double eps) {
  const std::size_t n = convex_ccw.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 a = convex_ccw[k];
    const Vec2 b = convex_ccw[(k + 1) % n];
    if (cross(b - a, p - a) < -eps * norm(b - a)) return false;
  }
  return true;
}

namespace {

// Signed area of the intersection of triangle (origin, a, b) with the disk of
// radius r centered at the origin.
double triangle_disk_area(Vec2 a, Vec2 b, double r) {
  const Vec2 d = b - a;
  const double qa = dot(d, d);
  if (qa == 0.0) return 0.0;
  const double qb = 2.0 * dot(a, d);
  const double qc = dot(a, a) - r * r;
  double ts[4];
  int nt = 0;
  ts[nt++] = 0.0;
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc > 0.0) {
    const double sq = std::sqrt(disc);
    const double t1 = (-qb - sq) / (2.0 * qa);
    const double t2 = (-qb + sq) / (2.0 * qa);
    if (t1 > 0.0 && t1 < 1.0) ts[nt++] = t1;
    if (t2 > 0.0 && t2 < 1.0) ts[nt++] = t2;
  }
  ts[nt++] = 1.0;
  double area = 0.0;
  for (int k = 0; k + 1 < nt; ++k) {
    const Vec2 p = a + d * ts[k];
    const Vec2 q = a + d * ts[k + 1];
    const Vec2 mid = (p + q) * 0.5;
    if (dot(mid, mid) <= r * r) {
      area += 0.5 * cross(p, q);
    } else {
      area += 0.5 * r * r * std::atan2(cross(p, q), dot(p, q));
    }
  }
  return area;
}

}  // namespace

double circle_polygon_overlap(std::span<const Vec2> poly, Vec2 center, double radius) {
  double area = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t k = 0; k < n; ++k) {
    area += triangle_disk_area(poly[k] - center, poly[(k + 1) % n] - center, radius);
  }
  return std::abs(area);
}

Polygon convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  Polygon hull(2 * pts.size());
  std::size_t k = 0;
  for (const Vec2 p : pts) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    const Vec2 p = pts[i];
    while (k >= lower && cross(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= 0.0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  return hull;
}

Polygon buffer_convex(std::span<const Vec2> hull, double dist, double max_arc_step) {
  const std::size_t n = hull.size();
  Polygon out;
  auto edge_normal = [&](std::size_t k) {
    const Vec2 e = hull[(k + 1) % n] - hull[k];
    const double len = norm(e);
    return Vec2{e.y / len, -e.x / len};  // outward for ccw order
  };
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 n_in = edge_normal((k + n - 1) % n);
    const Vec2 n_out = edge_normal(k);
    double a0 = std::atan2(n_in.y, n_in.x);
    double a1 = std::atan2(n_out.y, n_out.x);
    while (a1 < a0) a1 += 2.0 * std::numbers::pi;
    const int steps = std::max(1, static_cast<int>(std::ceil((a1 - a0) / max_arc_step)));
    for (int s = 0; s <= steps; ++s) {
      const double a = a0 + (a1 - a0) * s / steps;
      out.push_back(hull[k] + Vec2{std::cos(a), std::sin(a)} * dist);
    }
  }
  return out;
}

Vec2 point_at_arclength(std::span<const Vec2> poly, double s) {
  const double total = perimeter(poly);
  s = std::fmod(s, total);
  if (s < 0.0) s += total;
  const std::size_t n = poly.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 a = poly[k];
    const Vec2 b = poly[(k + 1) % n];
    const double len = distance(a, b);
    if (s <= len) return a + (b - a) * (len > 0.0 ? s / len : 0.0);
    s -= len;
  }
  return poly.back();
}

}  // namespace birdflux
