#pragma once

#include <vector>

namespace birdflux {

/// Cell-space quantities of one forecast step k (densities at t_k, terms integrated over [t_{k-1}, t_k]).
struct StepRecord {
  std::vector<double> density;
  std::vector<double> vx;
  std::vector<double> vy;
  std::vector<double> delta;
  std::vector<double> gamma;
  std::vector<double> source_sink;
  std::vector<double> flux;  // one signed value per tessellation face, oriented i -> j
};

/// Initial state plus per-step predictions over the forecast horizon.
/// Units are physical: birds/km^2, km/h, birds per face per interval.
struct ForecastRun {
  std::vector<double> initial_density;
  std::vector<StepRecord> steps;

  int horizon() const { return static_cast<int>(steps.size()); }
};

}  // namespace birdflux
