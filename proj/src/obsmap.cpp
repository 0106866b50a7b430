#include "birdflux/obsmap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "birdflux/errors.hpp"

namespace birdflux {

SensorNetwork SensorNetwork::subset(const std::vector<int>& members) const {
  SensorNetwork out;
  for (const int m : members) {
    out.ids.push_back(ids[m]);
    out.locations.push_back(locations[m]);
    out.radius_km.push_back(radius_km[m]);
  }
  return out;
}

bool SensorFrame::velocity_valid(int m) const {
  return valid[m] && std::isfinite(vx[m]) && std::isfinite(vy[m]);
}

bool CellFields::all_missing() const {
  return std::all_of(missing.begin(), missing.end(), [](char c) { return c != 0; });
}

Eigen::SparseMatrix<double, Eigen::RowMajor> CellToRadarMap::matrix() const {
  std::vector<Eigen::Triplet<double>> trip;
  for (int m = 0; m < static_cast<int>(radars.size()); ++m)
    for (const auto& [c, w] : radars[m]) trip.emplace_back(m, c, w);
  Eigen::SparseMatrix<double, Eigen::RowMajor> a(static_cast<int>(radars.size()), num_cells);
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

RadarToCellMap build_radar_to_cell(const Tessellation& tess, const SensorNetwork& net, int k) {
  if (k < 1) throw ConfigError("radar-to-cell neighbor count must be >= 1");
  if (net.size() == 0) throw ConfigError("empty sensor network");
  RadarToCellMap map;
  map.k = k;
  map.num_radars = net.size();
  const int kk = std::min(k, net.size());
  std::vector<int> order(net.size());
  for (const Vec2 c : tess.centers) {
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> d(net.size());
    for (int m = 0; m < net.size(); ++m) d[m] = distance(c, net.locations[m]);
    // Ties at equal distance resolve to the lower radar index.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
    WeightList w;
    if (d[order[0]] < 1e-6) {
      w.emplace_back(order[0], 1.0);
      for (int r = 1; r < kk; ++r) w.emplace_back(order[r], 0.0);
    } else {
      double total = 0.0;
      for (int r = 0; r < kk; ++r) total += 1.0 / d[order[r]];
      for (int r = 0; r < kk; ++r) w.emplace_back(order[r], (1.0 / d[order[r]]) / total);
    }
    map.cells.push_back(std::move(w));
  }
  return map;
}

CellFields interpolate_to_cells(const RadarToCellMap& map, const SensorFrame& frame) {
  if (frame.size() != map.num_radars) throw ConfigError("sensor frame does not match the radar-to-cell map");
  const int n = static_cast<int>(map.cells.size());
  CellFields out(n);
  for (int i = 0; i < n; ++i) {
    double total = 0.0;
    double rho = 0.0, vx = 0.0, vy = 0.0;
    for (const auto& [m, w] : map.cells[i]) {
      if (!frame.valid[m]) continue;
      total += w;
      rho += w * frame.density[m];
      if (frame.velocity_valid(m)) {
        vx += w * frame.vx[m];
        vy += w * frame.vy[m];
      }
    }
    // A contributor set whose weights are all zero (zero-distance rule with the
    // exact radar invalid) carries no information either.
    if (total <= 0.0) {
      out.missing[i] = 1;
      continue;
    }
    out.density[i] = rho / total;
    out.vx[i] = vx / total;
    out.vy[i] = vy / total;
  }
  return out;
}

CellToRadarMap build_cell_to_radar(const Tessellation& tess, const SensorNetwork& net, OverlapMethod method,
                                   int mc_samples, std::uint64_t mc_seed) {
  CellToRadarMap map;
  map.num_cells = tess.num_cells();
  std::vector<double> reach(tess.num_cells(), 0.0);
  for (int i = 0; i < tess.num_cells(); ++i)
    for (const Vec2 v : tess.cells[i]) reach[i] = std::max(reach[i], distance(v, tess.centers[i]));

  for (int m = 0; m < net.size(); ++m) {
    const Vec2 x = net.locations[m];
    const double r = net.radius_km[m];
    if (!(r > 0.0)) throw ConfigError("radar " + net.ids[m] + " has a non-positive measurement radius");
    std::vector<double> overlap(tess.num_cells(), 0.0);
    if (method == OverlapMethod::exact) {
      for (int i = 0; i < tess.num_cells(); ++i) {
        if (distance(x, tess.centers[i]) > r + reach[i]) continue;
        overlap[i] = circle_polygon_overlap(tess.cells[i], x, r);
      }
    } else {
      std::mt19937_64 rng(mc_seed + static_cast<std::uint64_t>(m));
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      int drawn = 0;
      while (drawn < mc_samples) {
        const Vec2 p{u(rng), u(rng)};
        if (dot(p, p) > 1.0) continue;
        ++drawn;
        const int cell = tess.locate(x + p * r);
        if (cell >= 0) overlap[cell] += 1.0;
      }
    }
    const double total = std::accumulate(overlap.begin(), overlap.end(), 0.0);
    if (!(total > 0.0)) throw GeometryError("measurement disk of radar " + net.ids[m] + " lies outside the tessellation");
    WeightList w;
    for (int i = 0; i < tess.num_cells(); ++i) {
      if (overlap[i] > 0.0) w.emplace_back(i, overlap[i] / total);
    }
    map.radars.push_back(std::move(w));
  }
  return map;
}

SensorFrame observe(const CellToRadarMap& map, const CellFields& cells) {
  const int m_count = static_cast<int>(map.radars.size());
  SensorFrame out(m_count);
  for (int m = 0; m < m_count; ++m) {
    double rho = 0.0, vx = 0.0, vy = 0.0;
    for (const auto& [i, w] : map.radars[m]) {
      rho += w * cells.density[i];
      vx += w * cells.vx[i];
      vy += w * cells.vy[i];
    }
    out.density[m] = rho;
    out.vx[m] = vx;
    out.vy[m] = vy;
  }
  return out;
}

void fill_missing(const Tessellation& tess, CellFields& f) {
  for (;;) {
    CellFields next = f;
    bool changed = false;
    bool pending = false;
    for (int i = 0; i < f.size(); ++i) {
      if (!f.missing[i]) continue;
      double rho = 0.0, vx = 0.0, vy = 0.0;
      int count = 0;
      for (const int j : tess.adjacency[i]) {
        if (f.missing[j]) continue;
        rho += f.density[j];
        vx += f.vx[j];
        vy += f.vy[j];
        ++count;
      }
      if (count == 0) {
        pending = true;
        continue;
      }
      next.density[i] = rho / count;
      next.vx[i] = vx / count;
      next.vy[i] = vy / count;
      next.missing[i] = 0;
      changed = true;
    }
    f = std::move(next);
    if (!pending) return;
    if (!changed) {
      for (int i = 0; i < f.size(); ++i) {
        if (f.missing[i]) {
          f.density[i] = f.vx[i] = f.vy[i] = 0.0;
          f.missing[i] = 0;
        }
      }
      return;
    }
  }
}

}  // namespace birdflux
