#pragma once

// Forecast metrics in physical units, the historical-average baseline, binned
// reports and the spatial cross-validation harness.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "birdflux/model.hpp"
#include "birdflux/synth.hpp"
#include "birdflux/train.hpp"

namespace birdflux::eval {

using Metric = std::optional<double>;

/// Aligned radar-space predictions and observations, one entry per forecast hour.
struct ForecastSet {
  std::vector<SensorFrame> pred;
  std::vector<SensorFrame> obs;
  std::vector<char> daytime;
  std::vector<int> lead;  // hours after t_0, starting at 1

  void append(const ForecastSet& other);
  int size() const { return static_cast<int>(obs.size()); }
};

/// Observations counted by the density metrics: valid, finite, nighttime.
bool counted(const ForecastSet& s, int t, int m);

/// Root mean squared density error over counted radar-hours.
Metric rmse(const ForecastSet& s);

struct PrecisionRecall {
  Metric precision;
  Metric recall;
};
/// Events are densities strictly above `threshold`.
PrecisionRecall precision_recall(const ForecastSet& s, double threshold = 150.0);

struct VelocityMetrics {
  Metric speed_rmse;       // km/h
  Metric direction_error;  // mean absolute circular heading difference, degrees
  long count = 0;
};
/// Counted radar-hours with finite observed and predicted velocity and observed density above `min_density`.
VelocityMetrics velocity_metrics(const ForecastSet& s, double min_density = 5.0);

/// Absolute difference of two headings in degrees, in [0, 180].
double heading_difference(double a_deg, double b_deg);

/// Radar-specific mean by (day of season, hour of day) over training seasons,
/// smoothed over +-`window_days`. Velocities average only readings whose density
/// exceeds `min_density`. Combinations without data fall back to the radar's mean
/// over all training readings at that hour, then over all hours.
class HistoricalAverage {
 public:
  HistoricalAverage(const std::vector<const synth::Season*>& seasons, int num_radars, int window_days = 7,
                    double min_density = 5.0);
  SensorFrame predict(int day_of_season, int hour_of_day) const;
  /// Frames for hours [start, start + count) of a season laid out like the training ones.
  std::vector<SensorFrame> predict_range(int start, int count) const;

 private:
  struct Accumulator {
    double rho = 0.0, vx = 0.0, vy = 0.0;
    long n_rho = 0, n_v = 0;
  };
  int num_radars_;
  int window_;
  int days_ = 0;
  std::vector<Accumulator> cells_;        // [(day * 24 + hour) * radars + m]
  std::vector<Accumulator> hour_mean_;    // [hour * radars + m]
  std::vector<Accumulator> radar_mean_;   // [m]
};

struct Bin {
  std::string label;
  double lo = 0.0;
  double hi = 0.0;
  long count = 0;
  Metric rmse;
};

struct MetricReport {
  Metric rmse;
  Metric precision;
  Metric recall;
  double threshold = 150.0;
  VelocityMetrics velocity;
  long count = 0;
  std::vector<Bin> horizon_bins;  // 1-24, 25-48, 49-72 hours ahead
  std::vector<Bin> density_bins;  // observed density terciles
  std::vector<std::string> radar_ids;
  std::vector<Metric> radar_rmse;
};

MetricReport binned_reports(const ForecastSet& s, const std::vector<std::string>& radar_ids, double threshold = 150.0);
nlohmann::ordered_json to_json(const MetricReport& r);
/// Per-radar table: radar_id,rmse
std::string radar_table_csv(const MetricReport& r);

/// Per radar: (held-out rmse - mean trained-on rmse) / mean trained-on rmse. Absent
/// when the radar was never held out or never trained on.
std::vector<Metric> relative_rmse_change(const std::vector<Metric>& held_out,
                                         const std::vector<std::vector<double>>& trained_on);

// Forecast generation -------------------------------------------------------------

/// Runs the model on every 13:00 evaluation window of `seasons`, feeding only the
/// `input_radars` to the encoder and comparing against all radars.
ForecastSet forecast_windows(const model::Model& model, const nets::ParamSet& params, const synth::Dataset& data,
                             const std::vector<int>& season_labels, const std::vector<int>& input_radars, int context = 24,
                             int horizon = 72, double max_missing = 0.1);

/// Historical-average forecasts for the same windows.
ForecastSet baseline_windows(const HistoricalAverage& ha, const synth::Dataset& data,
                             const std::vector<int>& season_labels, int context = 24, int horizon = 72,
                             double max_missing = 0.1);

std::vector<const synth::Season*> seasons_by_label(const synth::Dataset& data, const std::vector<int>& labels);

// Cross-validation ----------------------------------------------------------------

struct CvConfig {
  int folds = 10;
  std::vector<int> train_seasons{2013, 2014, 2015, 2016, 2017, 2018};
  std::vector<int> test_seasons{2020, 2021};
  std::uint64_t seed = 1;
};

nlohmann::ordered_json to_json(const CvConfig& c);
CvConfig cv_config_from_json(const nlohmann::json& j, CvConfig base = {});

struct FoldResult {
  train::Fold fold;
  std::vector<Metric> radar_rmse;  // every radar, this fold's model
  Metric held_out_rmse;
  Metric trained_on_rmse;
  int best_epoch = -1;
};

struct CvResult {
  std::vector<FoldResult> folds;
  std::vector<Metric> relative_change;  // per radar
  Metric mean_relative_change;
  MetricReport held_out;  // pooled over each radar's held-out fold
};

using FoldCallback = std::function<void(int fold, const FoldResult&)>;

/// Trains one model per fold on its training radars and evaluates on the test seasons.
CvResult cross_validate(const synth::Dataset& data, const model::ModelConfig& model_config,
                        const train::TrainConfig& train_config, const CvConfig& cv, const FoldCallback& on_fold = {});

nlohmann::ordered_json to_json(const CvResult& r, const std::vector<std::string>& radar_ids);

}  // namespace birdflux::eval
