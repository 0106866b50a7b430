#pragma once

// Encoder / decoder forecaster whose decoder advances cell densities with a
// finite-volume step. Everything inside Model works in scaled units; callers
// convert at the data boundary through Scaling.

#include <string>
#include <vector>

#include "birdflux/fvm.hpp"
#include "birdflux/nets.hpp"
#include "birdflux/obsmap.hpp"
#include "birdflux/run.hpp"
#include "birdflux/tessellation.hpp"

namespace birdflux::model {

using ad::Matrix;

enum class FluxScheme { upwind, flowrate, none };
std::string to_string(FluxScheme s);
FluxScheme flux_scheme_from_string(const std::string& s);

/// Multipliers from physical to model units.
struct Scaling {
  double density = 1e-3;  // birds/km^2
  double length = 1e-2;   // km, and km/h for velocities
};

struct ModelConfig {
  FluxScheme flux = FluxScheme::upwind;
  int hidden = 128;                  // encoder and decoder LSTM
  std::vector<int> gat_hidden = {32, 32};
  int mlp_hidden = 128;              // MLP_v, MLP_s and MLP_A
  int knn = 10;
  int context = 24;
  double dropout = 0.1;
  int env_features = 9;
  int land_cover_classes = 16;
  double dt = 1.0;  // hours
  Scaling scaling;

  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// Time-invariant inputs. Land cover rows sum to 1; location entries lie in [-1, 1].
struct StaticFeatures {
  Matrix land_cover;  // cells x classes
  Matrix location;    // cells x 4: sin/cos of both normalized coordinates
  Matrix edge;        // faces x 4: center distance, normal (x, y), face length, all for i -> j
};

/// Location embedding plus edge features for `tess` (physical km), with the given land cover.
StaticFeatures make_static_features(const Tessellation& tess, Matrix land_cover, const Scaling& scaling = {});

/// One sequence in model units.
struct ModelInput {
  std::vector<Matrix> pseudo;  // context frames t_{-tau}..t_0, each cells x 3 (rho, vx, vy), gaps filled
  Matrix initial_density;      // cells x 1
  std::vector<Matrix> env;     // context + horizon frames, each cells x env_features
};

/// Interpolates physical sensor frames to cells, fills gaps and scales.
/// `env` must hold the context frames followed by at least the forecast frames.
ModelInput prepare_input(const Tessellation& tess, const RadarToCellMap& r2c, const std::vector<SensorFrame>& context,
                         std::vector<Matrix> env, const Scaling& scaling);

/// Differentiable outputs for a batch of B sequences stacked cell-major (row b * n + i).
struct Trajectory {
  ad::Var initial;
  std::vector<ad::Var> density;   // per step, rows x 1
  std::vector<ad::Var> velocity;  // rows x 2
  std::vector<ad::Var> delta;
  std::vector<ad::Var> gamma;
  std::vector<ad::Var> source;
  std::vector<ad::Var> flux;      // faces * B x 1
  int horizon() const { return static_cast<int>(density.size()); }
};

class Model {
 public:
  /// `tess` in physical km; the model keeps a scaled copy.
  Model(ModelConfig config, const Tessellation& tess, StaticFeatures features);

  const ModelConfig& config() const { return config_; }
  const Tessellation& tessellation() const { return physical_; }
  const Tessellation& scaled_tessellation() const { return tess_; }
  const StaticFeatures& features() const { return features_; }
  int num_cells() const { return tess_.num_cells(); }

  /// Adds every parameter with its canonical name.
  void init(nets::ParamSet& params, Rng& rng) const;
  /// Decoder input layout recorded in checkpoint manifests.
  static std::vector<std::string> decoder_input_order();

  /// GAT embedding of the static features, cells x gat width.
  ad::Var static_embedding(const nets::Bindings& p) const;
  /// Runs the encoder over the context window and returns its final state.
  nets::LstmState encode(const nets::Bindings& p, const std::vector<const ModelInput*>& batch,
                         const ad::Var& embedding) const;
  /// Initial densities: the filled pseudo-density at t_0.
  ad::Var initial_state(ad::Tape& tape, const std::vector<const ModelInput*>& batch) const;
  /// Decoder rollout for `horizon` steps from the encoder state.
  Trajectory rollout(const nets::Bindings& p, const std::vector<const ModelInput*>& batch,
                     const nets::LstmState& encoded, const ad::Var& rho0, const ad::Var& embedding, int horizon,
                     const nets::DropoutSpec& drop = {}) const;
  /// encode -> initial_state -> rollout.
  Trajectory forward(const nets::Bindings& p, const std::vector<const ModelInput*>& batch, int horizon,
                     const nets::DropoutSpec& drop = {}) const;

  /// Evaluation-mode forecast of one sequence in physical units.
  ForecastRun predict(const nets::ParamSet& params, const ModelInput& input, int horizon) const;
  /// Splits a batched trajectory into physical-unit runs.
  std::vector<ForecastRun> to_runs(const Trajectory& traj, int batch_size) const;

 private:
  ad::Var expand_cells(const ad::Var& per_cell, int batch_size) const;
  ad::Var stack_env(ad::Tape& tape, const std::vector<const ModelInput*>& batch, int frame) const;

  ModelConfig config_;
  Tessellation physical_;
  Tessellation tess_;  // scaled
  StaticFeatures features_;
  nets::GraphEdges edges_;
  nets::Lstm encoder_;
  nets::Lstm decoder_;
  nets::Gat gat_;
  nets::Mlp mlp_v_;
  nets::Mlp mlp_s_;
  nets::Mlp mlp_a_;
};

/// Cell- and radar-space forecast.
struct Forecast {
  ForecastRun run;
  std::vector<SensorFrame> radar;  // one per step
};

/// Fraction of invalid radar-hours in a set of frames.
double missing_fraction(const std::vector<SensorFrame>& frames);

/// interpolate -> encode -> initial_state -> rollout -> observe. Rejects a context with
/// more than `max_missing` invalid radar-hours.
Forecast forecast(const Model& model, const nets::ParamSet& params, const RadarToCellMap& r2c,
                  const CellToRadarMap& c2r, const std::vector<SensorFrame>& context, std::vector<Matrix> env,
                  int horizon, double max_missing = 0.1);

}  // namespace birdflux::model
