#pragma once

// Loss, horizon curriculum, Adam, sequence windows, spatial folds and the
// training loop.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "birdflux/model.hpp"
#include "birdflux/nets.hpp"
#include "birdflux/synth.hpp"

namespace birdflux::train {

using ad::Matrix;

struct TrainConfig {
  double lambda = 0.1;
  double lr = 1e-4;
  int batch_size = 32;
  int max_epochs = 500;
  bool curriculum = true;
  int k_start = 2;
  int k_step = 2;
  int k_every = 10;   // epochs between horizon increments
  int k_max = 48;
  int context = 24;
  int stride = 1;           // hours between training windows
  int validation_stride = 6;
  int validation_season = 2019;
  double clip_norm = 10.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_missing = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Forecast horizon used at `epoch`: k_start + k_step * floor(epoch / k_every), capped at
/// k_max. Without the curriculum every epoch trains at k_max.
int curriculum_horizon(int epoch, const TrainConfig& cfg);

// Loss ---------------------------------------------------------------------------

struct LossValue {
  double total = 0.0;
  double rho = 0.0;  // (1/K) sum of density terms
  double v = 0.0;    // (1/K) sum of velocity terms
  int empty_steps = 0;  // steps without any valid radar for the density term
};

/// Loss of a physical-unit run against radar targets, evaluated in model units.
/// `daytime[k]` masks target step k entirely. Velocities enter only where the
/// reading is valid, finite, and the observed density exceeds `min_density`.
LossValue loss(const ForecastRun& run, const std::vector<SensorFrame>& targets, const std::vector<char>& daytime,
               const CellToRadarMap& c2r, double lambda, const model::Scaling& scaling, double min_density = 5.0);

struct LossTerms {
  ad::Var total;
  LossValue value;
};

/// One training target: radar frames after t_0 and their daytime flags.
struct Target {
  std::vector<SensorFrame> frames;
  std::vector<char> daytime;
};

/// Differentiable batch loss: the mean over sequences of the per-sequence loss above.
LossTerms trajectory_loss(const model::Trajectory& traj, const std::vector<const Target*>& targets,
                          const CellToRadarMap& c2r, int num_cells, double lambda, const model::Scaling& scaling,
                          double min_density = 5.0);

// Optimizer ------------------------------------------------------------------------

struct AdamState {
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
  long steps = 0;
};

struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Bias-corrected update. Returns false and leaves everything untouched when a
  /// gradient entry is not finite.
  bool step(nets::ParamSet& params, const std::map<std::string, Matrix>& grads, AdamState& state) const;
};

double global_norm(const std::map<std::string, Matrix>& grads);
/// Rescales all gradients so their global norm is at most `max_norm`; returns the norm before clipping.
double clip_global_norm(std::map<std::string, Matrix>& grads, double max_norm);

// Sequences -----------------------------------------------------------------------

enum class WindowMode { training, evaluation };

struct Sequence {
  int season = 0;  // index into the season list
  int start = 0;   // first context frame
  int context = 24;
  int horizon = 48;
  double missing = 0.0;  // fraction of invalid radar-hours across the window
  std::string start_time;

  int t0() const { return start + context - 1; }
  int length() const { return context + horizon; }
};

/// Sliding windows over each season. Training windows start every `stride` hours;
/// evaluation windows start only at 13:00. Windows with more than `max_missing`
/// invalid radar-hours are dropped.
std::vector<Sequence> make_sequences(const std::vector<const synth::Season*>& seasons, int context, int horizon,
                                     WindowMode mode, int stride = 1, double max_missing = 0.1);

/// Model input and targets for one window.
struct Example {
  Sequence seq;
  model::ModelInput input;
  Target target;
};

/// Builds examples with radar data restricted to `radars` (indices into the season frames).
std::vector<Example> make_examples(const model::Model& model, const SensorNetwork& net, const std::vector<int>& radars,
                                   const std::vector<const synth::Season*>& seasons,
                                   const std::vector<Sequence>& sequences, int knn);

/// Restricts every frame to the given radar indices.
std::vector<SensorFrame> select_radars(const std::vector<SensorFrame>& frames, const std::vector<int>& radars);

// Cross-validation -------------------------------------------------------------------

struct Fold {
  std::vector<int> train;  // radar indices
  std::vector<int> test;
};

/// Seeded shuffle split into near-equal test sets.
std::vector<Fold> spatial_cv_split(const std::vector<std::string>& radar_ids, int n_folds, std::uint64_t seed);

// Training loop ------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  int horizon = 0;
  double loss = 0.0;
  double loss_rho = 0.0;
  double loss_v = 0.0;
  double grad_norm = 0.0;  // mean pre-clip norm over applied steps
  int neg_cells = 0;       // negative predicted cell densities seen during the epoch
  double validation = 0.0; // loss at k_max on the validation windows (NaN without any)
  int skipped_steps = 0;
  int empty_steps = 0;
};

std::string log_csv_header();
std::string log_csv_row(const EpochLog& e);

struct FitData {
  std::vector<Example> train;
  std::vector<Example> validation;
  CellToRadarMap c2r;  // training radars only
};

struct FitResult {
  nets::ParamSet best;  // lowest validation loss (last epoch without validation data)
  nets::ParamSet last;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_validation = 0.0;
  bool aborted = false;
};

/// Mean loss over examples at `horizon` in evaluation mode.
LossValue evaluate_loss(const model::Model& model, const nets::ParamSet& params, const std::vector<Example>& examples,
                        const CellToRadarMap& c2r, int horizon, double lambda, int batch_size = 32);

using EpochCallback = std::function<void(const EpochLog&)>;

FitResult fit(const model::Model& model, nets::ParamSet params, const FitData& data, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

/// Model over the dataset tessellation with its land cover.
model::Model make_model(const synth::Dataset& data, const model::ModelConfig& config);

}  // namespace birdflux::train
