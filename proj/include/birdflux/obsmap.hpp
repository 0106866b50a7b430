#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "birdflux/tessellation.hpp"

namespace birdflux {

/// Radar locations and the radius of the disk approximating each measurement area.
struct SensorNetwork {
  std::vector<std::string> ids;
  std::vector<Vec2> locations;
  std::vector<double> radius_km;

  int size() const { return static_cast<int>(locations.size()); }
  /// Sub-network restricted to `members` (in the given order).
  SensorNetwork subset(const std::vector<int>& members) const;
};

/// Radar measurements at one time step. A velocity component of NaN marks an
/// unreliable velocity for an otherwise valid reading.
struct SensorFrame {
  std::vector<double> density;
  std::vector<double> vx;
  std::vector<double> vy;
  std::vector<char> valid;

  SensorFrame() = default;
  explicit SensorFrame(int n) : density(n, 0.0), vx(n, 0.0), vy(n, 0.0), valid(n, 1) {}
  int size() const { return static_cast<int>(density.size()); }
  bool velocity_valid(int m) const;
};

/// Per-cell quantities at one time step.
struct CellFields {
  std::vector<double> density;
  std::vector<double> vx;
  std::vector<double> vy;
  std::vector<double> source_sink;
  std::vector<char> missing;

  CellFields() = default;
  explicit CellFields(int n) : density(n, 0.0), vx(n, 0.0), vy(n, 0.0), source_sink(n, 0.0), missing(n, 0) {}
  int size() const { return static_cast<int>(density.size()); }
  bool all_missing() const;
};

using WeightList = std::vector<std::pair<int, double>>;

/// Inverse-distance k-nearest-radar interpolation weights per cell.
struct RadarToCellMap {
  int k = 0;
  int num_radars = 0;
  std::vector<WeightList> cells;
};

/// Area-overlap weights per radar.
struct CellToRadarMap {
  int num_cells = 0;
  std::vector<WeightList> radars;

  /// Row-major (radars x cells) weight matrix.
  Eigen::SparseMatrix<double, Eigen::RowMajor> matrix() const;
};

enum class OverlapMethod { exact, monte_carlo };

RadarToCellMap build_radar_to_cell(const Tessellation& tess, const SensorNetwork& net, int k);

/// Pseudo-measurements per cell. Invalid radars are dropped and the remaining
/// weights renormalized; cells without any valid contributor are flagged missing.
/// Non-finite velocities of valid radars are read as zero.
CellFields interpolate_to_cells(const RadarToCellMap& map, const SensorFrame& frame);

CellToRadarMap build_cell_to_radar(const Tessellation& tess, const SensorNetwork& net,
                                   OverlapMethod method = OverlapMethod::exact, int mc_samples = 100000,
                                   std::uint64_t mc_seed = 7);

/// Radar-space view of cell fields (area-weighted averages). All radars are marked valid.
SensorFrame observe(const CellToRadarMap& map, const CellFields& cells);

/// Replaces missing cells by the mean over non-missing neighbors, sweeping until
/// every reachable cell is filled; unreachable cells get zero.
void fill_missing(const Tessellation& tess, CellFields& fields);

}  // namespace birdflux
