#include "birdflux/tessellation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <numbers>
#include <utility>

#include "birdflux/errors.hpp"

namespace birdflux {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;

// Axial neighbor offsets for pointy-top hexagons, ordered by direction angle 0, 60, ..., 300 degrees.
constexpr std::pair<int, int> kAxialDirs[6] = {{1, 0}, {0, 1}, {-1, 1}, {-1, 0}, {0, -1}, {1, -1}};

Vec2 hex_direction(int k) {
  const double a = k * std::numbers::pi / 3.0;
  return {std::cos(a), std::sin(a)};
}

Vec2 axial_center(int q, int r, double radius) {
  return {kSqrt3 * radius * (q + 0.5 * r), 1.5 * radius * r};
}

Polygon hex_polygon(Vec2 c, double radius) {
  Polygon p(6);
  for (int k = 0; k < 6; ++k) {
    const double a = std::numbers::pi / 6.0 + k * std::numbers::pi / 3.0;
    p[k] = c + Vec2{radius * std::cos(a), radius * std::sin(a)};
  }
  return p;
}

Domain bounding_box(const std::vector<Polygon>& cells) {
  Domain d{1e300, -1e300, 1e300, -1e300};
  for (const auto& poly : cells) {
    for (const Vec2 v : poly) {
      d.x_min = std::min(d.x_min, v.x);
      d.x_max = std::max(d.x_max, v.x);
      d.y_min = std::min(d.y_min, v.y);
      d.y_max = std::max(d.y_max, v.y);
    }
  }
  return d;
}

// Fills derived per-cell structures (adjacency, cell_faces) from `faces`.
void finish(Tessellation& t) {
  const int n = t.num_cells();
  t.adjacency.assign(n, {});
  t.cell_faces.assign(n, {});
  for (int f = 0; f < t.num_faces(); ++f) {
    const Face& face = t.faces[f];
    t.adjacency[face.i].push_back(face.j);
    t.adjacency[face.j].push_back(face.i);
    t.cell_faces[face.i].push_back(f);
    t.cell_faces[face.j].push_back(f);
  }
  if (t.face_shift.empty()) t.face_shift.assign(t.faces.size(), Vec2{});
  t.domain = bounding_box(t.cells);
}

// Builds a hex tessellation from a set of axial coordinates. `wrap` maps an
// out-of-set axial coordinate to (in-set coordinate, position shift) for periodic grids.
template <typename Wrap>
Tessellation hex_from_axial(const std::vector<std::pair<int, int>>& coords, double diameter, Vec2 origin, Wrap wrap) {
  const double radius = 0.5 * diameter;
  std::map<std::pair<int, int>, int> index;
  for (int i = 0; i < static_cast<int>(coords.size()); ++i) index[coords[i]] = i;

  Tessellation t;
  t.kind = TessellationKind::hex;
  const double area = hex_area(diameter);
  for (const auto& [q, r] : coords) {
    const Vec2 c = origin + axial_center(q, r, radius);
    t.centers.push_back(c);
    t.cells.push_back(hex_polygon(c, radius));
    t.areas.push_back(area);
  }
  std::vector<int> degree(coords.size(), 0);
  for (int i = 0; i < static_cast<int>(coords.size()); ++i) {
    const auto [q, r] = coords[i];
    for (int k = 0; k < 6; ++k) {
      std::pair<int, int> nb{q + kAxialDirs[k].first, r + kAxialDirs[k].second};
      Vec2 shift{};
      auto it = index.find(nb);
      if (it == index.end()) {
        auto wrapped = wrap(nb);
        if (!wrapped) continue;
        it = index.find(wrapped->first);
        if (it == index.end()) continue;
        shift = wrapped->second;
      }
      ++degree[i];
      const int j = it->second;
      if (j > i) {
        t.faces.push_back({i, j, radius, hex_direction(k)});
        t.face_shift.push_back(shift);
      }
    }
  }
  t.is_boundary.resize(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) t.is_boundary[i] = degree[i] < 6;
  finish(t);
  return t;
}

struct NoWrap {
  std::optional<std::pair<std::pair<int, int>, Vec2>> operator()(std::pair<int, int>) const { return std::nullopt; }
};

}  // namespace

std::string to_string(TessellationKind kind) { return kind == TessellationKind::hex ? "hex" : "voronoi"; }

double hex_area(double d) { return 3.0 * kSqrt3 / 8.0 * d * d; }

std::vector<int> Tessellation::boundary_cells() const {
  std::vector<int> out;
  for (int i = 0; i < num_cells(); ++i)
    if (is_boundary[i]) out.push_back(i);
  return out;
}

std::vector<int> Tessellation::interior_cells() const {
  std::vector<int> out;
  for (int i = 0; i < num_cells(); ++i)
    if (!is_boundary[i]) out.push_back(i);
  return out;
}

int Tessellation::face_index(int i, int j) const {
  if (i < 0 || i >= num_cells()) throw LookupError("cell index out of range: " + std::to_string(i));
  for (const int f : cell_faces[i]) {
    const Face& face = faces[f];
    if ((face.i == i && face.j == j) || (face.i == j && face.j == i)) return f;
  }
  throw LookupError("cells " + std::to_string(i) + " and " + std::to_string(j) + " are not adjacent");
}

int Tessellation::locate(Vec2 p) const {
  for (int i = 0; i < num_cells(); ++i) {
    if (contains(cells[i], p)) return i;
  }
  return -1;
}

Tessellation Tessellation::scaled(double s) const {
  Tessellation t = *this;
  for (auto& poly : t.cells)
    for (auto& v : poly) v = v * s;
  for (auto& c : t.centers) c = c * s;
  for (auto& a : t.areas) a *= s * s;
  for (auto& f : t.faces) f.length *= s;
  for (auto& sh : t.face_shift) sh = sh * s;
  for (auto& sd : t.seeds) sd = sd * s;
  t.domain = {domain.x_min * s, domain.x_max * s, domain.y_min * s, domain.y_max * s};
  return t;
}

Tessellation build_hex_tessellation(const Domain& domain, double diameter) {
  if (!(diameter > 0.0)) throw SizingError("cell diameter must be positive");
  if (!(domain.x_min < domain.x_max && domain.y_min < domain.y_max)) throw SizingError("empty domain");
  const double radius = 0.5 * diameter;
  const double dx = kSqrt3 * radius;
  if (domain.width() < 2.0 * dx || domain.height() < 3.5 * radius) {
    throw SizingError("domain must be at least two hexagons wide in each axis");
  }
  const double eps = 1e-9 * diameter;
  std::vector<std::pair<int, int>> coords;
  for (int r = 0; domain.y_min + radius + 1.5 * radius * r + radius <= domain.y_max + eps; ++r) {
    const double shift = (r % 2) ? 0.5 * dx : 0.0;
    for (int c = 0; domain.x_min + 0.5 * dx + shift + dx * c + 0.5 * dx <= domain.x_max + eps; ++c) {
      coords.emplace_back(c - r / 2, r);
    }
  }
  const Vec2 origin{domain.x_min + 0.5 * dx, domain.y_min + radius};

  // Drop outer-ring cells that touch no interior cell (grid corners). Removing
  // them never changes the interior set, but loop until stable regardless.
  for (;;) {
    Tessellation t = hex_from_axial(coords, diameter, origin, NoWrap{});
    std::vector<std::pair<int, int>> kept;
    for (int i = 0; i < t.num_cells(); ++i) {
      bool ok = !t.is_boundary[i];
      for (const int j : t.adjacency[i]) ok = ok || !t.is_boundary[j];
      if (ok) kept.push_back(coords[i]);
    }
    if (kept.size() == coords.size()) {
      if (t.num_cells() < 4) throw SizingError("hex tessellation has fewer than 4 cells");
      return t;
    }
    coords = std::move(kept);
    if (coords.size() < 4) throw SizingError("hex tessellation has fewer than 4 cells");
  }
}

Tessellation build_hex_patch(Vec2 center, int rings, double diameter) {
  if (!(diameter > 0.0)) throw SizingError("cell diameter must be positive");
  if (rings < 1) throw SizingError("hex patch needs at least one ring");
  std::vector<std::pair<int, int>> coords;
  for (int r = -rings; r <= rings; ++r) {
    for (int q = -rings; q <= rings; ++q) {
      if (std::abs(q + r) <= rings) coords.emplace_back(q, r);
    }
  }
  return hex_from_axial(coords, diameter, center, NoWrap{});
}

Tessellation build_hex_torus(int cols, int rows, double diameter, Vec2 origin) {
  if (!(diameter > 0.0)) throw SizingError("cell diameter must be positive");
  if (cols < 3 || rows < 4 || rows % 2 != 0) throw SizingError("hex torus needs cols >= 3 and an even rows >= 4");
  const double radius = 0.5 * diameter;
  const double period_x = kSqrt3 * radius * cols;
  const double period_y = 1.5 * radius * rows;
  std::vector<std::pair<int, int>> coords;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) coords.emplace_back(c - r / 2, r);
  auto floor_div = [](int a, int b) { return (a >= 0) ? a / b : -((-a + b - 1) / b); };
  auto wrap = [&](std::pair<int, int> qr) -> std::optional<std::pair<std::pair<int, int>, Vec2>> {
    const auto [q, r] = qr;
    const int c = q + floor_div(r, 2);
    const int rw = ((r % rows) + rows) % rows;
    const int cw = ((c % cols) + cols) % cols;
    const int wrap_r = floor_div(r, rows);
    const int wrap_c = floor_div(c, cols);
    const Vec2 shift{wrap_c * period_x, wrap_r * period_y};
    return std::pair{std::pair{cw - rw / 2, rw}, shift};
  };
  Tessellation t = hex_from_axial(coords, diameter, origin, wrap);
  std::fill(t.is_boundary.begin(), t.is_boundary.end(), 0);
  return t;
}

namespace {

struct LabeledVertex {
  Vec2 p;
  int label;  // generator of the edge starting at p, or -1 for the outer clip polygon
};

// Clips a convex polygon to the half-plane closer to `own` than to `other`.
std::vector<LabeledVertex> clip_bisector(const std::vector<LabeledVertex>& poly, Vec2 own, Vec2 other, int other_label) {
  const Vec2 n = other - own;
  const Vec2 mid = (own + other) * 0.5;
  auto side = [&](Vec2 p) { return dot(p - mid, n); };
  std::vector<LabeledVertex> out;
  const std::size_t m = poly.size();
  for (std::size_t k = 0; k < m; ++k) {
    const LabeledVertex& a = poly[k];
    const LabeledVertex& b = poly[(k + 1) % m];
    const double sa = side(a.p);
    const double sb = side(b.p);
    if (sa <= 0.0) {
      out.push_back(a);
      if (sb > 0.0) {
        const double t = sa / (sa - sb);
        out.push_back({a.p + (b.p - a.p) * t, other_label});
      }
    } else if (sb <= 0.0) {
      const double t = sa / (sa - sb);
      out.push_back({a.p + (b.p - a.p) * t, a.label});
    }
  }
  return out;
}

}  // namespace

Tessellation build_voronoi_tessellation(const std::vector<Vec2>& seeds, double buffer_km, int n_dummy) {
  if (seeds.size() < 3) throw GeometryError("Voronoi tessellation needs at least 3 seeds");
  if (!(buffer_km > 0.0)) throw GeometryError("buffer must be positive");
  if (n_dummy < 0) throw GeometryError("negative dummy count");
  for (std::size_t a = 0; a < seeds.size(); ++a) {
    for (std::size_t b = a + 1; b < seeds.size(); ++b) {
      if (distance(seeds[a], seeds[b]) < 1e-9) {
        throw GeometryError("duplicate Voronoi seeds " + std::to_string(a) + " and " + std::to_string(b));
      }
    }
  }
  const Polygon hull = convex_hull(seeds);
  double extent = 0.0;
  for (const Vec2 s : seeds) extent = std::max(extent, distance(s, seeds[0]));
  if (hull.size() < 3 || std::abs(signed_area(hull)) <= 1e-12 * extent * extent) {
    throw GeometryError("Voronoi seeds are collinear");
  }
  const Polygon clip = buffer_convex(hull, buffer_km);

  std::vector<Vec2> all = seeds;
  const double total = perimeter(clip);
  for (int k = 0; k < n_dummy; ++k) all.push_back(point_at_arclength(clip, total * k / n_dummy));

  Tessellation t;
  t.kind = TessellationKind::voronoi;
  t.seeds = all;
  t.n_real_seeds = static_cast<int>(seeds.size());
  const int n = static_cast<int>(all.size());

  std::map<std::pair<int, int>, double> face_len;
  for (int i = 0; i < n; ++i) {
    std::vector<LabeledVertex> poly;
    for (const Vec2 v : clip) poly.push_back({v, -1});
    // Visit generators nearest-first so the polygon shrinks quickly.
    std::vector<int> order(n);
    for (int j = 0; j < n; ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return distance(all[a], all[i]) < distance(all[b], all[i]);
    });
    for (const int j : order) {
      if (j == i) continue;
      // A generator farther than twice the current cell radius cannot cut it.
      double reach = 0.0;
      for (const auto& v : poly) reach = std::max(reach, distance(v.p, all[i]));
      if (distance(all[j], all[i]) > 2.0 * reach) break;
      poly = clip_bisector(poly, all[i], all[j], j);
      if (poly.size() < 3) break;
    }
    if (poly.size() < 3) throw GeometryError("degenerate Voronoi cell for seed " + std::to_string(i));
    Polygon cell;
    for (std::size_t k = 0; k < poly.size(); ++k) {
      cell.push_back(poly[k].p);
      const int j = poly[k].label;
      if (j < 0) continue;
      const double len = distance(poly[k].p, poly[(k + 1) % poly.size()].p);
      auto key = std::minmax(i, j);
      auto& stored = face_len[{key.first, key.second}];
      stored = std::max(stored, len);
    }
    const double area = signed_area(cell);
    if (!(area > 0.0)) throw GeometryError("non-positive Voronoi cell area for seed " + std::to_string(i));
    t.cells.push_back(std::move(cell));
    t.areas.push_back(area);
    t.centers.push_back(centroid(t.cells.back()));
  }
  const double min_len = 1e-9 * std::sqrt(std::abs(signed_area(clip)));
  for (const auto& [key, len] : face_len) {
    if (len <= min_len) continue;
    const Vec2 d = all[key.second] - all[key.first];
    t.faces.push_back({key.first, key.second, len, d * (1.0 / norm(d))});
  }
  t.is_boundary.assign(n, 0);
  for (int i = t.n_real_seeds; i < n; ++i) t.is_boundary[i] = 1;
  finish(t);
  return t;
}

FaceGeometry face_geometry(const Tessellation& tess, int i, int j) {
  const int f = tess.face_index(i, j);
  const Face& face = tess.faces[f];
  const Vec2 shift = tess.face_shift[f];
  const Vec2 dij = tess.centers[face.j] + shift - tess.centers[face.i];
  const double sign = face.i == i ? 1.0 : -1.0;
  return {face.length, face.normal * sign, norm(dij)};
}

void validate_boundary_rule(const Tessellation& tess) {
  for (int i = 0; i < tess.num_cells(); ++i) {
    if (!tess.is_boundary[i]) continue;
    const bool ok = std::any_of(tess.adjacency[i].begin(), tess.adjacency[i].end(),
                                [&](int j) { return !tess.is_boundary[j]; });
    if (!ok) throw ConfigError("boundary cell " + std::to_string(i) + " has no interior neighbor");
  }
}

nlohmann::ordered_json to_json(const Tessellation& tess) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["kind"] = to_string(tess.kind);
  ordered_json cells = ordered_json::array();
  for (int i = 0; i < tess.num_cells(); ++i) {
    ordered_json c;
    c["id"] = i;
    c["center"] = {tess.centers[i].x, tess.centers[i].y};
    c["area"] = tess.areas[i];
    ordered_json verts = ordered_json::array();
    for (const Vec2 v : tess.cells[i]) verts.push_back({v.x, v.y});
    c["vertices"] = std::move(verts);
    c["neighbors"] = tess.adjacency[i];
    c["is_boundary"] = static_cast<bool>(tess.is_boundary[i]);
    cells.push_back(std::move(c));
  }
  j["cells"] = std::move(cells);
  ordered_json faces = ordered_json::array();
  for (const Face& f : tess.faces) {
    ordered_json o;
    o["i"] = f.i;
    o["j"] = f.j;
    o["length"] = f.length;
    o["normal"] = {f.normal.x, f.normal.y};
    faces.push_back(std::move(o));
  }
  j["faces"] = std::move(faces);
  return j;
}

Tessellation tessellation_from_json(const nlohmann::json& j) {
  Tessellation t;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "hex") {
    t.kind = TessellationKind::hex;
  } else if (kind == "voronoi") {
    t.kind = TessellationKind::voronoi;
  } else {
    throw ConfigError("unknown tessellation kind '" + kind + "'");
  }
  for (const auto& c : j.at("cells")) {
    const auto& ctr = c.at("center");
    t.centers.push_back({ctr.at(0).get<double>(), ctr.at(1).get<double>()});
    t.areas.push_back(c.at("area").get<double>());
    Polygon poly;
    for (const auto& v : c.at("vertices")) poly.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
    t.cells.push_back(std::move(poly));
    t.is_boundary.push_back(c.at("is_boundary").get<bool>() ? 1 : 0);
  }
  for (const auto& f : j.at("faces")) {
    const auto& n = f.at("normal");
    t.faces.push_back({f.at("i").get<int>(), f.at("j").get<int>(), f.at("length").get<double>(),
                       {n.at(0).get<double>(), n.at(1).get<double>()}});
  }
  finish(t);
  return t;
}

}  // namespace birdflux
