#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "birdflux/obsmap.hpp"

namespace testing {

struct ObsmapViolations {
  double partition = 0.0;      // |sum of weights - 1|
  double negative_weight = 0.0;
  double constant = 0.0;
  double linearity = 0.0;
  double monotone = 0.0;       // largest decrease after raising one input
  double bounds = 0.0;         // largest excursion outside [min, max] of contributors
  double round_trip = 0.0;
  int wrong_k = 0;

  double worst() const {
    return std::max({partition, negative_weight, constant, linearity, monotone, bounds, round_trip});
  }
};

/// Random hex or Voronoi tessellation with a random radar network inside it.
struct RandomGeometry {
  birdflux::Tessellation tess;
  birdflux::SensorNetwork net;
  int k = 1;
};

inline RandomGeometry random_geometry(std::uint64_t seed) {
  using namespace birdflux;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RandomGeometry g;
  if (seed % 2 == 0) {
    const double d = 60.0 + 100.0 * u(rng);
    g.tess = build_hex_tessellation({0, d * (3 + 6 * u(rng)), 0, d * (3 + 6 * u(rng))}, d);
  } else {
    std::vector<Vec2> seeds;
    const int n = 5 + static_cast<int>(20 * u(rng));
    while (static_cast<int>(seeds.size()) < n) seeds.push_back({1000 * u(rng), 800 * u(rng)});
    g.tess = build_voronoi_tessellation(seeds, 150.0 + 200 * u(rng), 12 + static_cast<int>(20 * u(rng)));
  }
  const int m = 3 + static_cast<int>(15 * u(rng));
  for (int r = 0; r < m; ++r) {
    const int cell = static_cast<int>(u(rng) * g.tess.num_cells()) % g.tess.num_cells();
    // A random point inside the convex cell.
    Vec2 p{};
    double total = 0.0;
    for (const Vec2& v : g.tess.cells[cell]) {
      const double w = u(rng);
      p += v * w;
      total += w;
    }
    g.net.ids.push_back("R" + std::to_string(r));
    g.net.locations.push_back(p * (1.0 / total));
    g.net.radius_km.push_back(10.0 + 40.0 * u(rng));
  }
  g.k = 1 + static_cast<int>(12 * u(rng));
  return g;
}

inline ObsmapViolations check_obsmap_properties(const RandomGeometry& g, std::uint64_t seed) {
  using namespace birdflux;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  ObsmapViolations v;
  const RadarToCellMap r2c = build_radar_to_cell(g.tess, g.net, g.k);
  const CellToRadarMap c2r = build_cell_to_radar(g.tess, g.net);
  const int m = g.net.size();
  const int n = g.tess.num_cells();

  for (const auto& w : r2c.cells) {
    if (static_cast<int>(w.size()) != std::min(g.k, m)) ++v.wrong_k;
    double s = 0.0;
    for (const auto& [_, x] : w) {
      s += x;
      v.negative_weight = std::max(v.negative_weight, -x);
    }
    v.partition = std::max(v.partition, std::abs(s - 1.0));
  }
  for (const auto& w : c2r.radars) {
    double s = 0.0;
    for (const auto& [_, x] : w) {
      s += x;
      v.negative_weight = std::max(v.negative_weight, -x);
    }
    v.partition = std::max(v.partition, std::abs(s - 1.0));
  }

  auto radar_frame = [&] {
    SensorFrame f(m);
    for (int i = 0; i < m; ++i) {
      f.density[i] = u(rng);
      f.vx[i] = u(rng) - 50.0;
      f.vy[i] = u(rng) - 50.0;
    }
    return f;
  };
  auto cell_fields = [&] {
    CellFields f(n);
    for (int i = 0; i < n; ++i) {
      f.density[i] = u(rng);
      f.vx[i] = u(rng) - 50.0;
      f.vy[i] = u(rng) - 50.0;
    }
    return f;
  };

  // Constant reproduction, including the round trip.
  const double c = 42.125;
  SensorFrame cf(m);
  std::fill(cf.density.begin(), cf.density.end(), c);
  std::fill(cf.vx.begin(), cf.vx.end(), -c);
  std::fill(cf.vy.begin(), cf.vy.end(), 0.5 * c);
  const CellFields ci = interpolate_to_cells(r2c, cf);
  for (int i = 0; i < n; ++i) v.constant = std::max(v.constant, std::abs(ci.density[i] - c));
  const SensorFrame rt = observe(c2r, ci);
  for (int i = 0; i < m; ++i) {
    v.round_trip = std::max({v.round_trip, std::abs(rt.density[i] - c), std::abs(rt.vx[i] + c),
                             std::abs(rt.vy[i] - 0.5 * c)});
  }
  CellFields cc(n);
  std::fill(cc.density.begin(), cc.density.end(), c);
  const SensorFrame co = observe(c2r, cc);
  for (int i = 0; i < m; ++i) v.constant = std::max(v.constant, std::abs(co.density[i] - c));

  // Linearity.
  const double a = 1.7, b = -0.6;
  const SensorFrame x = radar_frame(), y = radar_frame();
  SensorFrame xy(m);
  for (int i = 0; i < m; ++i) {
    xy.density[i] = a * x.density[i] + b * y.density[i];
    xy.vx[i] = a * x.vx[i] + b * y.vx[i];
    xy.vy[i] = a * x.vy[i] + b * y.vy[i];
  }
  const CellFields ix = interpolate_to_cells(r2c, x), iy = interpolate_to_cells(r2c, y),
                   ixy = interpolate_to_cells(r2c, xy);
  for (int i = 0; i < n; ++i) {
    const double scale = 1.0 + std::abs(ixy.density[i]);
    v.linearity = std::max(v.linearity, std::abs(ixy.density[i] - (a * ix.density[i] + b * iy.density[i])) / scale);
    v.linearity = std::max(v.linearity, std::abs(ixy.vx[i] - (a * ix.vx[i] + b * iy.vx[i])) / scale);
  }
  const CellFields p = cell_fields(), q = cell_fields();
  CellFields pq(n);
  for (int i = 0; i < n; ++i) pq.density[i] = a * p.density[i] + b * q.density[i];
  const SensorFrame op = observe(c2r, p), oq = observe(c2r, q), opq = observe(c2r, pq);
  for (int i = 0; i < m; ++i) {
    const double scale = 1.0 + std::abs(opq.density[i]);
    v.linearity = std::max(v.linearity, std::abs(opq.density[i] - (a * op.density[i] + b * oq.density[i])) / scale);
  }

  // Bound preservation.
  for (int i = 0; i < n; ++i) {
    double lo = 1e300, hi = -1e300;
    for (const auto& [r, w] : r2c.cells[i]) {
      if (w <= 0.0) continue;
      lo = std::min(lo, x.density[r]);
      hi = std::max(hi, x.density[r]);
    }
    v.bounds = std::max({v.bounds, lo - ix.density[i], ix.density[i] - hi});
  }
  for (int r = 0; r < m; ++r) {
    double lo = 1e300, hi = -1e300;
    for (const auto& [i, w] : c2r.radars[r]) {
      lo = std::min(lo, p.density[i]);
      hi = std::max(hi, p.density[i]);
    }
    v.bounds = std::max({v.bounds, lo - op.density[r], op.density[r] - hi});
  }

  // Monotonicity: raise a single input.
  for (int r = 0; r < m; ++r) {
    SensorFrame raised = x;
    raised.density[r] += 10.0;
    const CellFields out = interpolate_to_cells(r2c, raised);
    for (int i = 0; i < n; ++i) v.monotone = std::max(v.monotone, ix.density[i] - out.density[i]);
  }
  for (int i = 0; i < n; ++i) {
    CellFields raised = p;
    raised.density[i] += 10.0;
    const SensorFrame out = observe(c2r, raised);
    for (int r = 0; r < m; ++r) v.monotone = std::max(v.monotone, op.density[r] - out.density[r]);
  }
  return v;
}

}  // namespace testing
