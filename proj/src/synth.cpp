#include "birdflux/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <set>

#include "birdflux/errors.hpp"
#include "birdflux/json_util.hpp"

namespace birdflux::synth {

namespace {

constexpr double kPi = std::numbers::pi;

double hex_inradius(double diameter) { return 0.25 * std::numbers::sqrt3 * diameter; }

Vec2 random_unit(Rng& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  const double a = angle(rng);
  return {std::cos(a), std::sin(a)};
}

double fraction_per_step(double per_hour, double dt) { return 1.0 - std::pow(1.0 - per_hour, dt); }

int rate_index(const std::vector<int>& hours, int hour_of_day) {
  const auto it = std::find(hours.begin(), hours.end(), hour_of_day);
  return it == hours.end() ? -1 : static_cast<int>(it - hours.begin());
}

double hour_of_day(double t) {
  double h = std::fmod(t, 24.0);
  if (h < 0.0) h += 24.0;
  return h;
}

/// True when the state at time-of-day `h` lies in the grounded window.
bool grounded_at(const ScheduleSpec& s, double h) {
  return h >= s.grounded_from - 1e-9 && h <= s.dusk + 1e-9;
}

int nearest_center(const Tessellation& tess, Vec2 p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < tess.num_cells(); ++i) {
    const double d = distance(tess.centers[i], p);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::vector<double> upwind_step(const Tessellation& tess, const std::vector<double>& rho, const std::vector<double>& vx,
                                const std::vector<double>& vy, const std::vector<double>& source, double dt,
                                double* ledger) {
  std::vector<double> flux = fvm::upwind_fluxes(tess, rho, vx, vy, dt);
  std::vector<double> next = fvm::continuity_step(tess, rho, flux, source);
  if (ledger) {
    ForecastRun run;
    run.initial_density = rho;
    StepRecord step;
    step.density = next;
    step.flux = std::move(flux);
    step.source_sink = source;
    run.steps.push_back(std::move(step));
    *ledger = std::max(*ledger, fvm::ledger_residual(fvm::mass_ledger(tess, run)));
  }
  return next;
}

double interior_l1(const Tessellation& tess, const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (int i = 0; i < tess.num_cells(); ++i) {
    if (tess.is_boundary[i]) continue;
    num += std::abs(a[i] - b[i]) * tess.areas[i];
    den += std::abs(b[i]) * tess.areas[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

struct StaticContext {
  Tessellation coarse;
  Tessellation fine;
  std::vector<int> membership;
  SensorNetwork net;
  Matrix land_cover;
  std::vector<double> habitat;  // per fine cell
  CellToRadarMap disks;         // fine cells -> radars
};

StaticContext build_static(const ScenarioConfig& c) {
  StaticContext s;
  s.coarse = build_hex_patch({0.0, 0.0}, c.rings, c.cell_diameter_km);
  s.fine = fine_grid(s.coarse, c);
  s.membership = fine_to_coarse(s.fine, s.coarse);

  Rng rng = make_stream(c.seed, "static");
  const int n = s.coarse.num_cells();
  std::gamma_distribution<double> gamma(0.5, 1.0);
  s.land_cover = Matrix(n, c.land_cover_classes);
  for (int i = 0; i < n; ++i) {
    double total = 0.0;
    for (int k = 0; k < c.land_cover_classes; ++k) {
      s.land_cover(i, k) = std::max(gamma(rng), 1e-12);
      total += s.land_cover(i, k);
    }
    s.land_cover.row(i) /= total;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> preference(c.land_cover_classes);
  for (double& p : preference) p = unit(rng);
  std::vector<double> coarse_habitat(n, 0.5);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c.land_cover_classes; ++k) coarse_habitat[i] += s.land_cover(i, k) * preference[k];
  s.habitat.resize(s.fine.num_cells());
  for (int f = 0; f < s.fine.num_cells(); ++f) {
    const int owner = s.membership[f] >= 0 ? s.membership[f] : nearest_center(s.coarse, s.fine.centers[f]);
    s.habitat[f] = coarse_habitat[owner];
  }

  std::vector<int> interior = s.coarse.interior_cells();
  std::shuffle(interior.begin(), interior.end(), rng);
  const double spread = std::max(0.0, 0.9 * (hex_inradius(c.cell_diameter_km) - c.radar_radius_km));
  for (int m = 0; m < c.n_radars; ++m) {
    const int cell = interior[m % interior.size()];
    const double r = spread * std::sqrt(unit(rng));
    const Vec2 loc = s.coarse.centers[cell] + random_unit(rng) * r;
    char id[16];
    std::snprintf(id, sizeof id, "R%02d", m);
    s.net.ids.emplace_back(id);
    s.net.locations.push_back(loc);
    s.net.radius_km.push_back(c.radar_radius_km);
  }
  s.disks = build_cell_to_radar(s.fine, s.net, OverlapMethod::exact);
  return s;
}

Season simulate_season(const ScenarioConfig& c, const StaticContext& ctx, int label) {
  Rng rng = make_stream(c.seed, "season", static_cast<std::uint64_t>(label));
  const WindField wind(c.wind, rng);
  const TemperatureField temp(c.days + 1, rng);
  const double wind_norm = wind.max_speed() > 0.0 ? wind.max_speed() : 1.0;
  const ScheduleSpec& sched = c.schedule;
  const Tessellation& fine = ctx.fine;
  const int nf = fine.num_cells();
  const int nc = ctx.coarse.num_cells();
  const int sub = static_cast<int>(std::lround(1.0 / c.fine_dt));
  const double dt = c.fine_dt;
  const int hours = c.days * 24;

  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto velocity_at = [&](double t, std::vector<double>& vx, std::vector<double>& vy) {
    const bool grounded = grounded_at(sched, hour_of_day(t));
    for (int f = 0; f < nf; ++f) {
      if (grounded) {
        vx[f] = vy[f] = 0.0;
        continue;
      }
      const Vec2 v = c.heading + wind.at(fine.centers[f], t);
      vx[f] = v.x;
      vy[f] = v.y;
    }
  };

  Season season;
  season.label = label;
  std::vector<double> rho(nf, 0.0), vx(nf), vy(nf), source(nf);
  std::vector<double> vx_sum(nf), vy_sum(nf), s_sum(nf), g_sum(nf);

  auto record = [&](int t, bool has_interval, double survival) {
    season.times.push_back(iso_hour(label, t));
    season.hour_of_day.push_back(t % 24);
    season.day.push_back(is_day(sched, t % 24) ? 1 : 0);
    season.env.push_back(env_features(ctx.coarse, wind, wind_norm, temp, sched, label, t));
    season.density.push_back(aggregate(ctx.membership, nc, rho));
    if (has_interval) {
      season.vx.push_back(aggregate(ctx.membership, nc, vx_sum));
      season.vy.push_back(aggregate(ctx.membership, nc, vy_sum));
      season.source.push_back(aggregate(ctx.membership, nc, s_sum));
      season.gamma.push_back(aggregate(ctx.membership, nc, g_sum));
      season.delta.push_back(1.0 - survival);
    } else {
      const std::vector<double> zero(nc, 0.0);
      season.vx.push_back(zero);
      season.vy.push_back(zero);
      season.source.push_back(zero);
      season.gamma.push_back(zero);
      season.delta.push_back(0.0);
    }
    std::vector<double> ix(nf), iy(nf);
    velocity_at(t, ix, iy);
    SensorFrame frame = sample_radars(ctx.disks, rho, ix, iy, c.density_noise, c.velocity_noise, rng);
    const bool day = is_day(sched, t % 24);
    for (int m = 0; m < frame.size(); ++m) {
      if (day) {
        frame.density[m] = 0.0;
        frame.vx[m] = frame.vy[m] = std::numeric_limits<double>::quiet_NaN();
      }
      if (unit(rng) < c.missing_rate) frame.valid[m] = 0;
    }
    season.frames.push_back(std::move(frame));
  };

  record(0, false, 1.0);
  for (int t = 1; t <= hours; ++t) {
    std::fill(vx_sum.begin(), vx_sum.end(), 0.0);
    std::fill(vy_sum.begin(), vy_sum.end(), 0.0);
    std::fill(s_sum.begin(), s_sum.end(), 0.0);
    std::fill(g_sum.begin(), g_sum.end(), 0.0);
    double survival = 1.0;
    for (int k = 0; k < sub; ++k) {
      const double start = (t - 1) + k * dt;
      const double end = start + dt;
      const int hod = static_cast<int>(std::floor(hour_of_day(start) + 1e-9)) % 24;
      const bool grounded = grounded_at(sched, hour_of_day(end));
      if (grounded) {
        std::fill(vx.begin(), vx.end(), 0.0);
        std::fill(vy.begin(), vy.end(), 0.0);
        for (int f = 0; f < nf; ++f) source[f] = -rho[f];
        survival = 0.0;
      } else {
        velocity_at(start, vx, vy);
        const int li = rate_index(sched.landing_hours, hod);
        const int ti = rate_index(sched.takeoff_hours, hod);
        const double delta = li >= 0 ? fraction_per_step(sched.landing_rate[li], dt) : 0.0;
        survival *= 1.0 - delta;
        const int night = night_index((t - 1) / 24, hod);
        for (int f = 0; f < nf; ++f) {
          double g = 0.0;
          if (ti >= 0) {
            g = sched.takeoff_base * sched.takeoff_profile[ti] * ctx.habitat[f] *
                std::exp(sched.temperature_effect * temp.at(fine.centers[f], night)) * dt;
          }
          source[f] = g - delta * rho[f];
          g_sum[f] += g;
        }
      }
      for (int f = 0; f < nf; ++f) {
        vx_sum[f] += vx[f] * dt;
        vy_sum[f] += vy[f] * dt;
        s_sum[f] += source[f];
      }
      rho = upwind_step(fine, rho, vx, vy, source, dt, &season.ledger_residual);
    }
    record(t, true, survival);
  }
  return season;
}

}  // namespace

void ScenarioConfig::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (rings < 1) throw ConfigError("scenario.rings must be at least 1");
  if (!(cell_diameter_km > 0.0) || !finite(cell_diameter_km)) throw ConfigError("scenario.cell_diameter_km must be positive");
  if (n_radars < 1) throw ConfigError("scenario.n_radars must be at least 1");
  if (!(radar_radius_km > 0.0) || radar_radius_km > hex_inradius(cell_diameter_km))
    throw ConfigError("scenario.radar_radius_km must be positive and fit inside a cell");
  if (seasons.empty()) throw ConfigError("scenario.seasons must not be empty");
  if (std::set<int>(seasons.begin(), seasons.end()).size() != seasons.size())
    throw ConfigError("scenario.seasons must be unique");
  if (days < 1) throw ConfigError("scenario.days must be at least 1");
  if (!finite(wind.amplitude) || wind.amplitude < 0.0 || !finite(wind.mean.x) || !finite(wind.mean.y))
    throw ConfigError("scenario.wind amplitudes must be finite and nonnegative");
  if (wind.modes < 0) throw ConfigError("scenario.wind.modes must be nonnegative");
  if (!(wind.min_wavelength_km > 0.0 && wind.min_wavelength_km <= wind.max_wavelength_km))
    throw ConfigError("scenario.wind wavelengths must satisfy 0 < min <= max");
  if (!(wind.min_period_h > 0.0 && wind.min_period_h <= wind.max_period_h))
    throw ConfigError("scenario.wind periods must satisfy 0 < min <= max");
  if (!finite(heading.x) || !finite(heading.y)) throw ConfigError("scenario.heading must be finite");
  const ScheduleSpec& s = schedule;
  if (s.takeoff_hours.size() != s.takeoff_profile.size() || s.landing_hours.size() != s.landing_rate.size())
    throw ConfigError("schedule hour and rate lists must have equal lengths");
  for (int h : s.takeoff_hours)
    if (h < 0 || h > 23) throw ConfigError("schedule hours must lie in 0..23");
  for (int h : s.landing_hours)
    if (h < 0 || h > 23) throw ConfigError("schedule hours must lie in 0..23");
  for (double r : s.landing_rate)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("schedule.landing_rate entries must lie in [0, 1]");
  for (double p : s.takeoff_profile)
    if (!(p >= 0.0) || !finite(p)) throw ConfigError("schedule.takeoff_profile entries must be nonnegative");
  if (!(s.takeoff_base >= 0.0) || !finite(s.takeoff_base) || !finite(s.temperature_effect))
    throw ConfigError("schedule take-off amplitudes must be finite");
  if (!(0 <= s.dawn && s.dawn < s.grounded_from && s.grounded_from < s.dusk && s.dusk <= 23))
    throw ConfigError("schedule requires 0 <= dawn < grounded_from < dusk <= 23");
  if (land_cover_classes < 1) throw ConfigError("scenario.land_cover_classes must be at least 1");
  if (!(density_noise >= 0.0) || !(velocity_noise >= 0.0) || !finite(density_noise) || !finite(velocity_noise))
    throw ConfigError("scenario noise levels must be finite and nonnegative");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("scenario.missing_rate must lie in [0, 1)");
  if (!(fine_factor >= 1.0)) throw ConfigError("scenario.fine_factor must be at least 1");
  if (!(fine_dt > 0.0 && fine_dt <= 1.0) || std::abs(1.0 / fine_dt - std::round(1.0 / fine_dt)) > 1e-9)
    throw ConfigError("scenario.fine_dt must divide one hour");
  if (!(margin_cells >= 0.0)) throw ConfigError("scenario.margin_cells must be nonnegative");
}

const Season& Dataset::season(int label) const {
  for (const Season& s : seasons)
    if (s.label == label) return s;
  throw LookupError("no season labeled " + std::to_string(label));
}

WindField::WindField(const WindSpec& spec, Rng& rng) : mean_(spec.mean) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> weights(spec.modes);
  double total = 0.0;
  for (double& w : weights) {
    w = 0.25 + unit(rng);
    total += w;
  }
  for (int m = 0; m < spec.modes; ++m) {
    Mode mode;
    const double wavelength = spec.min_wavelength_km + unit(rng) * (spec.max_wavelength_km - spec.min_wavelength_km);
    const double period = spec.min_period_h + unit(rng) * (spec.max_period_h - spec.min_period_h);
    mode.k = random_unit(rng) * (2.0 * kPi / wavelength);
    mode.direction = random_unit(rng);
    mode.omega = 2.0 * kPi / period;
    mode.phase = 2.0 * kPi * unit(rng);
    mode.amplitude = spec.amplitude * weights[m] / total;
    modes_.push_back(mode);
  }
}

Vec2 WindField::at(Vec2 x, double t) const {
  Vec2 v = mean_;
  for (const Mode& m : modes_) v += m.direction * (m.amplitude * std::cos(dot(m.k, x) - m.omega * t + m.phase));
  return v;
}

double WindField::max_speed() const {
  double s = norm(mean_);
  for (const Mode& m : modes_) s += m.amplitude;
  return s;
}

TemperatureField::TemperatureField(int nights, Rng& rng) {
  constexpr int kModes = 3;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int m = 0; m < kModes; ++m) {
    k_.push_back(random_unit(rng) * (2.0 * kPi / (800.0 + 1200.0 * unit(rng))));
    phase_.push_back(2.0 * kPi * unit(rng));
  }
  std::vector<double> c(kModes);
  for (double& v : c) v = 0.5 / std::sqrt(1.0 - 0.49) * normal(rng);
  for (int n = 0; n <= nights; ++n) {
    if (n > 0)
      for (double& v : c) v = 0.7 * v + 0.5 * normal(rng);
    coeff_.push_back(c);
  }
}

double TemperatureField::at(Vec2 x, int night) const {
  const int idx = std::clamp(night + 1, 0, static_cast<int>(coeff_.size()) - 1);
  double s = 0.0;
  for (std::size_t m = 0; m < k_.size(); ++m) s += coeff_[idx][m] * std::cos(dot(k_[m], x) + phase_[m]);
  return std::tanh(s);
}

bool is_day(const ScheduleSpec& s, int hour_of_day) { return hour_of_day >= s.dawn && hour_of_day < s.dusk; }

int night_index(int day, int hour_of_day) { return hour_of_day >= 12 ? day : day - 1; }

std::pair<int, int> day_of_year(int year, int hours) {
  using namespace std::chrono;
  const sys_days start{std::chrono::year{year} / August / 1};
  const sys_days day = start + days{hours / 24};
  const year_month_day ymd{day};
  const int doy = static_cast<int>((day - sys_days{ymd.year() / January / 1}).count()) + 1;
  return {doy, ymd.year().is_leap() ? 366 : 365};
}

std::string iso_hour(int year, int hours) {
  using namespace std::chrono;
  const sys_days day = sys_days{std::chrono::year{year} / August / 1} + days{hours / 24};
  const year_month_day ymd{day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00:00Z", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hours % 24);
  return buf;
}

Matrix env_features(const Tessellation& tess, const WindField& wind, double wind_norm, const TemperatureField& temp,
                    const ScheduleSpec& schedule, int year, int hours) {
  const int hod = hours % 24;
  const double solar = std::cos(2.0 * kPi * (hod - 12) / 24.0);
  const double solar_next = std::cos(2.0 * kPi * (hod + 1 - 12) / 24.0);
  const double solar_change = (solar_next - solar) / (2.0 * std::sin(kPi / 24.0));
  const auto [doy, len] = day_of_year(year, hours);
  const int night = night_index(hours / 24, hod);
  Matrix m(tess.num_cells(), kEnvFeatures);
  for (int i = 0; i < tess.num_cells(); ++i) {
    const Vec2 w = wind.at(tess.centers[i], hours);
    m(i, 0) = w.x / wind_norm;
    m(i, 1) = w.y / wind_norm;
    m(i, 2) = temp.at(tess.centers[i], night);
    m(i, 3) = solar;
    m(i, 4) = solar_change;
    m(i, 5) = is_day(schedule, hod) ? 1.0 : 0.0;
    m(i, 6) = hod == schedule.dusk ? 1.0 : 0.0;
    m(i, 7) = hod == schedule.dawn ? 1.0 : 0.0;
    m(i, 8) = static_cast<double>(doy - 1) / (len - 1);
  }
  return m;
}

Tessellation fine_grid(const Tessellation& coarse, const ScenarioConfig& config) {
  Domain box{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const Polygon& poly : coarse.cells)
    for (const Vec2& p : poly) {
      box.x_min = std::min(box.x_min, p.x);
      box.x_max = std::max(box.x_max, p.x);
      box.y_min = std::min(box.y_min, p.y);
      box.y_max = std::max(box.y_max, p.y);
    }
  const double margin = config.margin_cells * config.cell_diameter_km;
  box.x_min -= margin;
  box.x_max += margin;
  box.y_min -= margin;
  box.y_max += margin;
  return build_hex_tessellation(box, config.cell_diameter_km / config.fine_factor);
}

std::vector<int> fine_to_coarse(const Tessellation& fine, const Tessellation& coarse) {
  std::vector<int> out(fine.num_cells());
  for (int f = 0; f < fine.num_cells(); ++f) out[f] = coarse.locate(fine.centers[f]);
  return out;
}

std::vector<double> aggregate(const std::vector<int>& membership, int n_coarse, const std::vector<double>& fine) {
  std::vector<double> sum(n_coarse, 0.0);
  std::vector<int> count(n_coarse, 0);
  for (std::size_t f = 0; f < membership.size(); ++f) {
    if (membership[f] < 0) continue;
    sum[membership[f]] += fine[f];
    ++count[membership[f]];
  }
  for (int i = 0; i < n_coarse; ++i) sum[i] = count[i] ? sum[i] / count[i] : 0.0;
  return sum;
}

SensorFrame sample_radars(const CellToRadarMap& disk_weights, const std::vector<double>& rho,
                          const std::vector<double>& vx, const std::vector<double>& vy, double density_noise,
                          double velocity_noise, Rng& rng, double min_density) {
  const int n = static_cast<int>(disk_weights.radars.size());
  SensorFrame frame(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int m = 0; m < n; ++m) {
    double r = 0.0, mx = 0.0, my = 0.0;
    for (const auto& [cell, w] : disk_weights.radars[m]) {
      r += w * rho[cell];
      mx += w * rho[cell] * vx[cell];
      my += w * rho[cell] * vy[cell];
    }
    const double e_rho = normal(rng);
    const double e_x = normal(rng);
    const double e_y = normal(rng);
    frame.density[m] = std::max(0.0, r + density_noise * e_rho);
    if (r < min_density) {
      frame.vx[m] = frame.vy[m] = std::numeric_limits<double>::quiet_NaN();
    } else {
      frame.vx[m] = mx / r + velocity_noise * e_x;
      frame.vy[m] = my / r + velocity_noise * e_y;
    }
  }
  return frame;
}

double density_quantile(const Dataset& data, double q) {
  std::vector<double> values;
  for (const Season& s : data.seasons)
    for (int t = 0; t < s.hours(); ++t) {
      if (is_day(data.config.schedule, s.hour_of_day[t])) continue;
      const SensorFrame& f = s.frames[t];
      for (int m = 0; m < f.size(); ++m)
        if (f.valid[m]) values.push_back(f.density[m]);
    }
  if (values.empty()) throw DataError("no nighttime readings to compute a density quantile");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * (values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - lo) * (values[hi] - values[lo]);
}

Dataset generate(const ScenarioConfig& config) {
  config.validate();
  StaticContext ctx = build_static(config);
  const Vec2 drift = config.heading + config.wind.mean;
  const double max_speed = norm(drift) + config.wind.amplitude;
  const double cfl = fvm::cfl_number(ctx.fine, max_speed, config.fine_dt);
  if (cfl > 1.0) {
    char msg[200];
    std::snprintf(msg, sizeof msg,
                  "fine grid violates the CFL bound (number %.3f) for wind amplitude %.3f km/h; reduce the "
                  "amplitude or fine_dt",
                  cfl, config.wind.amplitude);
    throw ConfigError(msg);
  }
  Dataset data;
  data.config = config;
  data.tess = ctx.coarse;
  data.net = ctx.net;
  data.land_cover = ctx.land_cover;
  for (int label : config.seasons) data.seasons.push_back(simulate_season(config, ctx, label));
  return data;
}

std::vector<double> advect_uniform(const Tessellation& tess, std::vector<double> rho, Vec2 velocity, double dt,
                                   int steps, double* ledger) {
  const std::vector<double> vx(tess.num_cells(), velocity.x), vy(tess.num_cells(), velocity.y);
  const std::vector<double> zero(tess.num_cells(), 0.0);
  for (int k = 0; k < steps; ++k) rho = upwind_step(tess, rho, vx, vy, zero, dt, ledger);
  return rho;
}

RefinementResult refinement_study(const RefinementConfig& c) {
  if (c.levels < 2) throw ConfigError("refinement study needs at least two levels");
  if (!(c.dt > 0.0) || !(c.duration_h > 0.0)) throw ConfigError("refinement study needs positive dt and duration");
  const double steps0 = c.duration_h / c.dt;
  if (std::abs(steps0 - std::round(steps0)) > 1e-9) throw ConfigError("duration must be a multiple of dt");
  RefinementResult out;

  auto bump = [&](Vec2 d) { return c.bump_peak * std::exp(-dot(d, d) / (2.0 * c.bump_sigma_km * c.bump_sigma_km)); };

  auto advect = [&](const Tessellation& tess, std::vector<double> rho, double dt, int steps, double* ledger) {
    return advect_uniform(tess, std::move(rho), c.velocity, dt, steps, ledger);
  };
  auto check_cfl = [&](const Tessellation& tess, double dt) {
    if (fvm::cfl_number(tess, norm(c.velocity), dt) > 1.0)
      throw ConfigError("refinement study violates the CFL bound; reduce the velocity or dt");
  };

  if (c.periodic) {
    const double dx0 = 0.5 * std::numbers::sqrt3 * c.cell_diameter_km;
    const int cols0 = std::max(3, static_cast<int>(std::lround(c.domain_km / dx0)));
    int rows0 = std::max(4, static_cast<int>(std::lround(c.domain_km / (0.75 * c.cell_diameter_km))));
    rows0 += rows0 % 2;
    const double px = cols0 * dx0, py = rows0 * 0.75 * c.cell_diameter_km;
    auto wrapped = [&](Vec2 d) {
      d.x -= px * std::round(d.x / px);
      d.y -= py * std::round(d.y / py);
      return d;
    };
    const Vec2 start{0.5 * px, 0.5 * py};
    const Vec2 end = start + c.velocity * c.duration_h;
    for (int l = 0; l < c.levels; ++l) {
      const int scale = 1 << l;
      const double d = c.cell_diameter_km / scale;
      const double dt = c.dt / scale;
      const Tessellation tess = build_hex_torus(cols0 * scale, rows0 * scale, d);
      check_cfl(tess, dt);
      std::vector<double> rho(tess.num_cells()), truth(tess.num_cells());
      for (int i = 0; i < tess.num_cells(); ++i) {
        rho[i] = bump(wrapped(tess.centers[i] - start));
        truth[i] = bump(wrapped(tess.centers[i] - end));
      }
      double ledger = 0.0;
      rho = advect(tess, rho, dt, static_cast<int>(std::lround(steps0)) * scale, &ledger);
      out.diameters.push_back(d);
      out.errors.push_back(interior_l1(tess, rho, truth));
      out.ledger_residual.push_back(ledger);
    }
  } else {
    const Domain domain{0.0, c.domain_km, 0.0, c.domain_km};
    const int finest = 1 << (c.levels - 1);
    const double ref_d = c.cell_diameter_km / finest / c.fine_factor;
    const double ref_dt = c.dt / finest / c.fine_factor;
    const double ref_steps = c.duration_h / ref_dt;
    if (std::abs(ref_steps - std::round(ref_steps)) > 1e-6)
      throw ConfigError("reference time step must divide the duration");
    const Tessellation ref = build_hex_tessellation(domain, ref_d);
    check_cfl(ref, ref_dt);
    const Vec2 start = Vec2{0.5 * c.domain_km, 0.5 * c.domain_km} - c.velocity * (0.5 * c.duration_h);
    std::vector<double> ref0(ref.num_cells());
    for (int f = 0; f < ref.num_cells(); ++f) ref0[f] = bump(ref.centers[f] - start);
    double ref_ledger = 0.0;
    const std::vector<double> ref_end = advect(ref, ref0, ref_dt, static_cast<int>(std::lround(ref_steps)), &ref_ledger);
    for (int l = 0; l < c.levels; ++l) {
      const int scale = 1 << l;
      const double d = c.cell_diameter_km / scale;
      const double dt = c.dt / scale;
      const Tessellation tess = build_hex_tessellation(domain, d);
      check_cfl(tess, dt);
      const std::vector<int> members = fine_to_coarse(ref, tess);
      std::vector<double> rho = aggregate(members, tess.num_cells(), ref0);
      const std::vector<double> truth = aggregate(members, tess.num_cells(), ref_end);
      double ledger = ref_ledger;
      rho = advect(tess, rho, dt, static_cast<int>(std::lround(steps0)) * scale, &ledger);
      out.diameters.push_back(d);
      out.errors.push_back(interior_l1(tess, rho, truth));
      out.ledger_residual.push_back(ledger);
    }
  }
  for (std::size_t l = 0; l + 1 < out.errors.size(); ++l)
    out.ratios.push_back(out.errors[l + 1] > 0.0 ? out.errors[l] / out.errors[l + 1]
                                                 : std::numeric_limits<double>::infinity());
  return out;
}

double coarse_step_error(const Dataset& data, const Season& season) {
  const Tessellation& tess = data.tess;
  const ScheduleSpec& sched = data.config.schedule;
  double total = 0.0;
  int count = 0;
  for (int t = 1; t < season.hours(); ++t) {
    const int hod = season.hour_of_day[t];
    if (grounded_at(sched, hod) || is_day(sched, hod)) continue;
    double mass = 0.0;
    for (int i = 0; i < tess.num_cells(); ++i)
      if (!tess.is_boundary[i]) mass += season.density[t][i];
    if (!(mass > 1e-6 * tess.num_cells())) continue;
    const std::vector<double>& prev = season.density[t - 1];
    const std::vector<double> flux = fvm::upwind_fluxes(tess, prev, season.vx[t], season.vy[t], 1.0);
    const std::vector<double> next = fvm::continuity_step(tess, prev, flux, season.source[t]);
    total += interior_l1(tess, next, season.density[t]);
    ++count;
  }
  if (count == 0) throw DataError("season has no nighttime hours with birds aloft");
  return total / count;
}

nlohmann::ordered_json to_json(const ScenarioConfig& c) {
  auto vec = [](Vec2 v) { return nlohmann::ordered_json::array({v.x, v.y}); };
  nlohmann::ordered_json wind;
  wind["mean"] = vec(c.wind.mean);
  wind["modes"] = c.wind.modes;
  wind["amplitude"] = c.wind.amplitude;
  wind["min_wavelength_km"] = c.wind.min_wavelength_km;
  wind["max_wavelength_km"] = c.wind.max_wavelength_km;
  wind["min_period_h"] = c.wind.min_period_h;
  wind["max_period_h"] = c.wind.max_period_h;
  const ScheduleSpec& s = c.schedule;
  nlohmann::ordered_json sched;
  sched["dawn"] = s.dawn;
  sched["dusk"] = s.dusk;
  sched["takeoff_hours"] = s.takeoff_hours;
  sched["takeoff_profile"] = s.takeoff_profile;
  sched["takeoff_base"] = s.takeoff_base;
  sched["temperature_effect"] = s.temperature_effect;
  sched["landing_hours"] = s.landing_hours;
  sched["landing_rate"] = s.landing_rate;
  sched["grounded_from"] = s.grounded_from;
  nlohmann::ordered_json j;
  j["rings"] = c.rings;
  j["cell_diameter_km"] = c.cell_diameter_km;
  j["n_radars"] = c.n_radars;
  j["radar_radius_km"] = c.radar_radius_km;
  j["seasons"] = c.seasons;
  j["days"] = c.days;
  j["wind"] = wind;
  j["heading"] = vec(c.heading);
  j["schedule"] = sched;
  j["land_cover_classes"] = c.land_cover_classes;
  j["density_noise"] = c.density_noise;
  j["velocity_noise"] = c.velocity_noise;
  j["missing_rate"] = c.missing_rate;
  j["fine_factor"] = c.fine_factor;
  j["fine_dt"] = c.fine_dt;
  j["margin_cells"] = c.margin_cells;
  j["seed"] = c.seed;
  return j;
}

namespace {

void read_vec(ObjectReader& r, const std::string& key, Vec2& out) {
  std::vector<double> v{out.x, out.y};
  r.read(key, v);
  if (v.size() != 2) throw ConfigError(key + " must have two components");
  out = {v[0], v[1]};
}

}  // namespace

ScenarioConfig scenario_from_json(const nlohmann::json& j, ScenarioConfig c) {
  ObjectReader r(j, "scenario");
  r.read("rings", c.rings);
  r.read("cell_diameter_km", c.cell_diameter_km);
  r.read("n_radars", c.n_radars);
  r.read("radar_radius_km", c.radar_radius_km);
  r.read("seasons", c.seasons);
  r.read("days", c.days);
  if (r.has("wind")) {
    ObjectReader w(r.child("wind"), "scenario.wind");
    read_vec(w, "mean", c.wind.mean);
    w.read("modes", c.wind.modes);
    w.read("amplitude", c.wind.amplitude);
    w.read("min_wavelength_km", c.wind.min_wavelength_km);
    w.read("max_wavelength_km", c.wind.max_wavelength_km);
    w.read("min_period_h", c.wind.min_period_h);
    w.read("max_period_h", c.wind.max_period_h);
    w.finish();
  }
  read_vec(r, "heading", c.heading);
  if (r.has("schedule")) {
    ObjectReader s(r.child("schedule"), "scenario.schedule");
    s.read("dawn", c.schedule.dawn);
    s.read("dusk", c.schedule.dusk);
    s.read("takeoff_hours", c.schedule.takeoff_hours);
    s.read("takeoff_profile", c.schedule.takeoff_profile);
    s.read("takeoff_base", c.schedule.takeoff_base);
    s.read("temperature_effect", c.schedule.temperature_effect);
    s.read("landing_hours", c.schedule.landing_hours);
    s.read("landing_rate", c.schedule.landing_rate);
    s.read("grounded_from", c.schedule.grounded_from);
    s.finish();
  }
  r.read("land_cover_classes", c.land_cover_classes);
  r.read("density_noise", c.density_noise);
  r.read("velocity_noise", c.velocity_noise);
  r.read("missing_rate", c.missing_rate);
  r.read("fine_factor", c.fine_factor);
  r.read("fine_dt", c.fine_dt);
  r.read("margin_cells", c.margin_cells);
  r.read("seed", c.seed);
  r.finish();
  return c;
}

}  // namespace birdflux::synth
