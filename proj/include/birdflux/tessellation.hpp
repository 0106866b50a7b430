#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "birdflux/geometry.hpp"

namespace birdflux {

enum class TessellationKind { hex, voronoi };

std::string to_string(TessellationKind kind);

/// A shared face between cells i < j. The normal points from i to j.
struct Face {
  int i = 0;
  int j = 0;
  double length = 0.0;
  Vec2 normal;
};

struct FaceGeometry {
  double length = 0.0;
  Vec2 normal;  // outward from the queried cell
  double center_distance = 0.0;
};

/// Finite-volume partition of a planar domain together with its dual graph.
/// Immutable once built; all geometric quantities are in km / km^2.
struct Tessellation {
  TessellationKind kind = TessellationKind::hex;
  Domain domain;
  std::vector<Polygon> cells;  // counter-clockwise vertex lists
  std::vector<Vec2> centers;
  std::vector<double> areas;
  std::vector<Face> faces;
  std::vector<std::vector<int>> adjacency;
  std::vector<std::vector<int>> cell_faces;  // face indices incident to each cell
  std::vector<char> is_boundary;
  /// Offsets added to the neighbor center when a face wraps around a periodic domain.
  std::vector<Vec2> face_shift;
  std::vector<Vec2> seeds;  // Voronoi generators (real seeds first, then dummies)
  int n_real_seeds = 0;

  int num_cells() const { return static_cast<int>(cells.size()); }
  int num_faces() const { return static_cast<int>(faces.size()); }
  std::vector<int> boundary_cells() const;
  std::vector<int> interior_cells() const;

  /// Index into `faces` for the unordered pair {i, j}; throws LookupError if not adjacent.
  int face_index(int i, int j) const;

  /// Index of the cell whose polygon contains p, or -1.
  int locate(Vec2 p) const;

  /// Copy with every length multiplied by `s` (areas by s^2).
  Tessellation scaled(double s) const;
};

/// Regular pointy-top hexagonal grid covering `domain`. Only whole hexagons are
/// kept; cells on the outer ring without any interior neighbor are pruned so the
/// boundary rule is well defined. `cell_diameter_km` is the vertex-to-vertex diameter.
Tessellation build_hex_tessellation(const Domain& domain, double cell_diameter_km);

/// Hexagon-shaped patch of 1 + 3 r (r + 1) cells centered at `center`.
Tessellation build_hex_patch(Vec2 center, int rings, double cell_diameter_km);

/// Doubly periodic `cols` x `rows` hex grid (rows must be even). No boundary cells.
Tessellation build_hex_torus(int cols, int rows, double cell_diameter_km, Vec2 origin = {});

/// Voronoi diagram of `seeds` plus `n_dummy` boundary seeds spaced evenly along the
/// buffered convex hull, clipped to that hull. Dummy cells form the boundary set.
Tessellation build_voronoi_tessellation(const std::vector<Vec2>& seeds, double buffer_km, int n_dummy);

/// Geometry of the face between adjacent cells i and j, oriented outward from i.
FaceGeometry face_geometry(const Tessellation& tess, int i, int j);

/// Throws ConfigError if a boundary cell has no interior neighbor.
void validate_boundary_rule(const Tessellation& tess);

/// Regular hexagon area for a vertex-to-vertex diameter.
double hex_area(double cell_diameter_km);

nlohmann::ordered_json to_json(const Tessellation& tess);
Tessellation tessellation_from_json(const nlohmann::json& j);

}  // namespace birdflux
