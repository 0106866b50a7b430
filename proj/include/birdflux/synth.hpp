#pragma once

// Synthetic migration seasons: a fine-grid continuity simulation with known
// velocity and source fields, sparse noisy radar sampling, and environmental
// feature vectors on the model tessellation.

#include <string>
#include <vector>

#include <json.hpp>

#include "birdflux/fvm.hpp"
#include "birdflux/obsmap.hpp"
#include "birdflux/random.hpp"
#include "birdflux/tessellation.hpp"

namespace birdflux::synth {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Smooth random wind: mean plus travelling plane waves.
struct WindSpec {
  Vec2 mean{3.0, 0.0};
  int modes = 3;
  double amplitude = 8.0;  // bound on the summed wave magnitude, km/h
  double min_wavelength_km = 600.0;
  double max_wavelength_km = 1500.0;
  double min_period_h = 24.0;
  double max_period_h = 96.0;
};

/// Diurnal take-off / landing schedule (hours of day, UTC).
struct ScheduleSpec {
  int dawn = 6;
  int dusk = 19;
  std::vector<int> takeoff_hours{19, 20, 21};
  std::vector<double> takeoff_profile{1.0, 0.6, 0.3};
  double takeoff_base = 60.0;        // birds/km^2 per hour at profile 1
  double temperature_effect = 0.5;   // take-off multiplier exp(effect * T)
  std::vector<int> landing_hours{2, 3, 4, 5, 6, 7};
  std::vector<double> landing_rate{0.1, 0.2, 0.35, 0.5, 0.6, 0.8};  // fraction per hour
  int grounded_from = 8;             // densities forced to zero from here until dusk
};

struct ScenarioConfig {
  int rings = 2;  // model tessellation: hex patch with 1 + 3 r (r + 1) cells
  double cell_diameter_km = 137.5;
  int n_radars = 7;
  double radar_radius_km = 35.0;
  std::vector<int> seasons{2013, 2014, 2015, 2016, 2017, 2018, 2019, 2020, 2021};
  int days = 10;  // per season, starting August 1
  WindSpec wind;
  Vec2 heading{-6.0, -12.0};
  ScheduleSpec schedule;
  int land_cover_classes = 16;
  double density_noise = 3.0;
  double velocity_noise = 1.0;
  double missing_rate = 0.02;
  double fine_factor = 4.0;  // fine diameter = model diameter / factor
  double fine_dt = 0.25;     // hours
  double margin_cells = 1.0;  // fine grid extends this many model diameters beyond the patch
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::ordered_json to_json(const ScenarioConfig& config);
/// Overrides fields of `base` with the keys present in `j`; unknown keys are rejected.
ScenarioConfig scenario_from_json(const nlohmann::json& j, ScenarioConfig base = {});

/// Number of environmental features per cell and hour.
constexpr int kEnvFeatures = 9;

/// One season of data. Frame t is the state at hour t since season start.
struct Season {
  int label = 0;
  std::vector<std::string> times;  // ISO-8601 UTC hours
  std::vector<int> hour_of_day;
  std::vector<char> day;            // daytime flag per frame
  std::vector<SensorFrame> frames;  // radar readings
  std::vector<Matrix> env;          // cells x kEnvFeatures
  // Coarse ground truth: density at each hour, velocity / source / take-off
  // over the interval ending at each hour (zero for t = 0).
  std::vector<std::vector<double>> density;
  std::vector<std::vector<double>> vx;
  std::vector<std::vector<double>> vy;
  std::vector<std::vector<double>> source;
  std::vector<std::vector<double>> gamma;
  std::vector<double> delta;  // spatially uniform landing fraction per interval
  double ledger_residual = 0.0;  // worst fine-grid ledger violation

  int hours() const { return static_cast<int>(frames.size()); }
  bool is_day(int t) const { return day.at(t) != 0; }
};

struct Dataset {
  ScenarioConfig config;
  Tessellation tess;  // model tessellation, km
  SensorNetwork net;
  Matrix land_cover;  // cells x classes
  std::vector<Season> seasons;

  const Season& season(int label) const;
};

// Field building blocks ----------------------------------------------------------

class WindField {
 public:
  WindField(const WindSpec& spec, Rng& rng);
  Vec2 at(Vec2 x, double t) const;
  /// Upper bound on |wind|.
  double max_speed() const;

 private:
  struct Mode {
    Vec2 k;
    Vec2 direction;
    double omega;
    double phase;
    double amplitude;
  };
  Vec2 mean_;
  std::vector<Mode> modes_;
};

/// Smooth field in [-1, 1] that follows an AR(1) process from night to night.
class TemperatureField {
 public:
  TemperatureField(int nights, Rng& rng);
  double at(Vec2 x, int night) const;

 private:
  std::vector<Vec2> k_;
  std::vector<double> phase_;
  std::vector<std::vector<double>> coeff_;  // night x mode
};

bool is_day(const ScheduleSpec& s, int hour_of_day);
/// Index of the night an hour belongs to: evenings count toward the same day,
/// mornings toward the previous one.
int night_index(int day, int hour_of_day);
/// ISO-8601 UTC hour for `hours` after midnight of August 1 in `year`.
std::string iso_hour(int year, int hours);
/// Calendar day of year (1-based) and year length for that time.
std::pair<int, int> day_of_year(int year, int hours);

/// Environmental features of every cell at one hour.
/// Columns: wind x, wind y (normalized), temperature, solar position, its one-hour
/// change (normalized), day flag, dusk flag, dawn flag, normalized day of year.
Matrix env_features(const Tessellation& tess, const WindField& wind, double wind_norm, const TemperatureField& temp,
                    const ScheduleSpec& schedule, int year, int hours);

/// Rectangular fine grid covering the model tessellation plus a margin.
Tessellation fine_grid(const Tessellation& coarse, const ScenarioConfig& config);

/// Fine cell -> coarse cell containing its center (-1 when outside the patch).
std::vector<int> fine_to_coarse(const Tessellation& fine, const Tessellation& coarse);

/// Mean of fine values over each coarse cell's members.
std::vector<double> aggregate(const std::vector<int>& membership, int n_coarse, const std::vector<double>& fine);

// Generation ---------------------------------------------------------------------

Dataset generate(const ScenarioConfig& config);

/// Noisy disk-average readings of a fine field. Velocities are density weighted
/// and marked invalid (NaN) when the noiseless density is below `min_density`.
SensorFrame sample_radars(const CellToRadarMap& disk_weights, const std::vector<double>& rho,
                          const std::vector<double>& vx, const std::vector<double>& vy, double density_noise,
                          double velocity_noise, Rng& rng, double min_density = 5.0);

/// Sorted nighttime densities across all radars, seasons and hours; its 95% quantile
/// replaces the fixed event threshold on synthetic data.
double density_quantile(const Dataset& data, double q);

/// Upwind transport with a uniform velocity and no sources for `steps` steps.
/// When `ledger` is given it receives the worst per-step ledger residual.
std::vector<double> advect_uniform(const Tessellation& tess, std::vector<double> rho, Vec2 velocity, double dt,
                                   int steps, double* ledger = nullptr);

// Refinement study ----------------------------------------------------------------

struct RefinementConfig {
  double cell_diameter_km = 137.5;
  int levels = 3;           // diameters d, d/2, d/4, ...
  double dt = 1.0;          // hours at the coarsest level, halved with the diameter
  double duration_h = 12.0;
  Vec2 velocity{20.0, 8.0};
  double bump_sigma_km = 200.0;
  double bump_peak = 100.0;
  bool periodic = false;    // torus with the analytic solution as truth
  double domain_km = 1800.0;
  double fine_factor = 4.0;
};

struct RefinementResult {
  std::vector<double> diameters;
  std::vector<double> errors;  // relative L1 error against the truth per level
  std::vector<double> ratios;  // errors[l] / errors[l + 1]
  std::vector<double> ledger_residual;
};

/// First-order convergence check of the upwind scheme under uniform advection.
/// Non-periodic runs compare each level with a simulation on a grid `fine_factor`
/// times finer, aggregated to the coarse cells; periodic runs compare with the
/// exactly translated profile.
RefinementResult refinement_study(const RefinementConfig& config);

/// Relative L1 error of one coarse upwind step, using aggregated true velocity and
/// sources, against the aggregated fine state one hour later. Averaged over
/// nighttime hours with any birds aloft.
double coarse_step_error(const Dataset& data, const Season& season);

}  // namespace birdflux::synth
