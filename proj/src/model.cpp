#include "birdflux/model.hpp"

#include <cmath>
#include <numbers>

#include "birdflux/errors.hpp"
#include "birdflux/json_util.hpp"

namespace birdflux::model {

namespace {

Matrix cells_matrix(const CellFields& f, const Scaling& s) {
  Matrix m(f.size(), 3);
  for (int i = 0; i < f.size(); ++i) {
    m(i, 0) = f.density[i] * s.density;
    m(i, 1) = f.vx[i] * s.length;
    m(i, 2) = f.vy[i] * s.length;
  }
  return m;
}

void check_finite(const ad::Var& v, int step, const char* what) {
  if (!v.value().allFinite())
    throw NumericalError(std::string("non-finite ") + what + " at decoder step " + std::to_string(step));
}

}  // namespace

std::string to_string(FluxScheme s) {
  switch (s) {
    case FluxScheme::upwind: return "upwind";
    case FluxScheme::flowrate: return "flowrate";
    case FluxScheme::none: return "none";
  }
  return "upwind";
}

FluxScheme flux_scheme_from_string(const std::string& s) {
  if (s == "upwind") return FluxScheme::upwind;
  if (s == "flowrate") return FluxScheme::flowrate;
  if (s == "none") return FluxScheme::none;
  throw ConfigError("unknown flux scheme '" + s + "'");
}

void ModelConfig::validate() const {
  if (hidden < 1 || mlp_hidden < 1 || env_features < 1 || land_cover_classes < 1)
    throw ConfigError("model sizes must be positive");
  if (gat_hidden.empty()) throw ConfigError("GAT needs at least one layer");
  for (int w : gat_hidden)
    if (w < 1) throw ConfigError("GAT widths must be positive");
  if (knn < 1) throw ConfigError("knn must be >= 1");
  if (context < 1) throw ConfigError("context must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (!(scaling.density > 0.0) || !(scaling.length > 0.0)) throw ConfigError("scaling factors must be positive");
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["flux"] = to_string(c.flux);
  j["hidden"] = c.hidden;
  j["gat_hidden"] = c.gat_hidden;
  j["mlp_hidden"] = c.mlp_hidden;
  j["knn"] = c.knn;
  j["context"] = c.context;
  j["dropout"] = c.dropout;
  j["env_features"] = c.env_features;
  j["land_cover_classes"] = c.land_cover_classes;
  j["dt"] = c.dt;
  j["scaling"] = {{"density", c.scaling.density}, {"length", c.scaling.length}};
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  ObjectReader r(j, "model");
  std::string flux = to_string(c.flux);
  r.read("flux", flux);
  c.flux = flux_scheme_from_string(flux);
  r.read("hidden", c.hidden);
  r.read("gat_hidden", c.gat_hidden);
  r.read("mlp_hidden", c.mlp_hidden);
  r.read("knn", c.knn);
  r.read("context", c.context);
  r.read("dropout", c.dropout);
  r.read("env_features", c.env_features);
  r.read("land_cover_classes", c.land_cover_classes);
  r.read("dt", c.dt);
  if (r.has("scaling")) {
    ObjectReader s(r.child("scaling"), "model.scaling");
    s.read("density", c.scaling.density);
    s.read("length", c.scaling.length);
    s.finish();
  }
  r.finish();
  c.validate();
  return c;
}

StaticFeatures make_static_features(const Tessellation& tess, Matrix land_cover, const Scaling& scaling) {
  const int n = tess.num_cells();
  if (land_cover.rows() != n) throw DataError("land cover rows do not match the cell count");
  for (int i = 0; i < n; ++i) {
    if (land_cover.row(i).minCoeff() < 0.0 || std::abs(land_cover.row(i).sum() - 1.0) > 1e-9)
      throw DataError("land cover of cell " + std::to_string(i) + " is not a proportion vector");
  }
  StaticFeatures f;
  f.land_cover = std::move(land_cover);
  f.location.resize(n, 4);
  const Domain& d = tess.domain;
  constexpr double half_pi = std::numbers::pi / 2.0;
  for (int i = 0; i < n; ++i) {
    const double x = -half_pi + std::numbers::pi * (tess.centers[i].x - d.x_min) / d.width();
    const double y = -half_pi + std::numbers::pi * (tess.centers[i].y - d.y_min) / d.height();
    f.location.row(i) << std::sin(x), std::cos(x), std::sin(y), std::cos(y);
  }
  f.edge.resize(tess.num_faces(), 4);
  for (int k = 0; k < tess.num_faces(); ++k) {
    const Face& face = tess.faces[k];
    const FaceGeometry g = face_geometry(tess, face.i, face.j);
    f.edge.row(k) << g.center_distance * scaling.length, g.normal.x, g.normal.y, g.length * scaling.length;
  }
  return f;
}

ModelInput prepare_input(const Tessellation& tess, const RadarToCellMap& r2c, const std::vector<SensorFrame>& context,
                         std::vector<Matrix> env, const Scaling& scaling) {
  if (context.empty()) throw DataError("empty context window");
  if (env.size() < context.size()) throw DataError("environment frames do not cover the context window");
  ModelInput in;
  for (const SensorFrame& frame : context) {
    CellFields cells = interpolate_to_cells(r2c, frame);
    if (cells.size() != tess.num_cells()) throw DataError("radar-to-cell map does not match the tessellation");
    fill_missing(tess, cells);
    in.pseudo.push_back(cells_matrix(cells, scaling));
  }
  in.initial_density = in.pseudo.back().col(0);
  for (const Matrix& e : env)
    if (e.rows() != tess.num_cells()) throw DataError("environment frame has the wrong number of cells");
  in.env = std::move(env);
  return in;
}

Model::Model(ModelConfig config, const Tessellation& tess, StaticFeatures features)
    : config_(std::move(config)),
      physical_(tess),
      tess_(tess.scaled(config_.scaling.length)),
      features_(std::move(features)),
      edges_(nets::GraphEdges::from_adjacency(tess.adjacency)) {
  config_.validate();
  validate_boundary_rule(tess);
  const int n = tess.num_cells();
  if (features_.land_cover.rows() != n || features_.land_cover.cols() != config_.land_cover_classes)
    throw ConfigError("land cover features do not match the model configuration");
  if (features_.location.rows() != n || features_.location.cols() != 4)
    throw ConfigError("location features must be cells x 4");
  if (features_.edge.rows() != tess.num_faces() || features_.edge.cols() != 4)
    throw ConfigError("edge features must be faces x 4");

  const int h = config_.hidden;
  const int u = config_.env_features;
  const int g = config_.gat_hidden.back();
  std::vector<int> gat_sizes{config_.land_cover_classes + 4};
  gat_sizes.insert(gat_sizes.end(), config_.gat_hidden.begin(), config_.gat_hidden.end());
  gat_ = nets::Gat{"gat", gat_sizes};
  encoder_ = nets::Lstm{"enc", 3 + u + g, h};
  decoder_ = nets::Lstm{"dec", 1 + u + g + h, h};
  mlp_v_ = nets::Mlp{"mlp_v", {h + u + 4, config_.mlp_hidden, 2}};
  mlp_s_ = nets::Mlp{"mlp_s", {h + u + 4, config_.mlp_hidden, 2}};
  mlp_a_ = nets::Mlp{"mlp_a", {h + 2 * u + 4, config_.mlp_hidden, 1}};
}

void Model::init(nets::ParamSet& params, Rng& rng) const {
  gat_.init(params, rng);
  encoder_.init(params, rng);
  decoder_.init(params, rng);
  mlp_v_.init(params, rng);
  mlp_s_.init(params, rng);
  if (config_.flux == FluxScheme::flowrate) mlp_a_.init(params, rng);
}

std::vector<std::string> Model::decoder_input_order() { return {"density", "env", "static_embedding", "z0"}; }

ad::Var Model::expand_cells(const ad::Var& per_cell, int batch_size) const {
  if (batch_size == 1) return per_cell;
  const int n = num_cells();
  ad::IndexList idx(static_cast<std::size_t>(n) * batch_size);
  for (std::size_t r = 0; r < idx.size(); ++r) idx[r] = static_cast<int>(r % n);
  return ad::gather_rows(per_cell, idx);
}

ad::Var Model::stack_env(ad::Tape& tape, const std::vector<const ModelInput*>& batch, int frame) const {
  const int n = num_cells();
  Matrix m(static_cast<Eigen::Index>(n) * static_cast<Eigen::Index>(batch.size()), config_.env_features);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (frame >= static_cast<int>(batch[b]->env.size()))
      throw DataError("environment frame " + std::to_string(frame) + " is not available");
    const Matrix& e = batch[b]->env[frame];
    if (e.cols() != config_.env_features) throw DataError("environment frame has the wrong feature count");
    m.middleRows(static_cast<Eigen::Index>(b) * n, n) = e;
  }
  return tape.constant(std::move(m));
}

ad::Var Model::static_embedding(const nets::Bindings& p) const {
  ad::Tape& tape = p.tape();
  Matrix x(num_cells(), config_.land_cover_classes + 4);
  x << features_.land_cover, features_.location;
  return gat_.forward(p, tape.constant(std::move(x)), edges_);
}

nets::LstmState Model::encode(const nets::Bindings& p, const std::vector<const ModelInput*>& batch,
                              const ad::Var& embedding) const {
  if (batch.empty()) throw DataError("empty batch");
  ad::Tape& tape = p.tape();
  const int n = num_cells();
  const int bsz = static_cast<int>(batch.size());
  const std::size_t frames = batch[0]->pseudo.size();
  for (const ModelInput* in : batch)
    if (in->pseudo.size() != frames) throw DataError("sequences in a batch must share the context length");
  const ad::Var emb = expand_cells(embedding, bsz);
  nets::LstmState state = encoder_.zero_state(tape, n * bsz);
  for (std::size_t t = 0; t < frames; ++t) {
    Matrix y(static_cast<Eigen::Index>(n) * bsz, 3);
    for (int b = 0; b < bsz; ++b) y.middleRows(static_cast<Eigen::Index>(b) * n, n) = batch[b]->pseudo[t];
    const ad::Var x = ad::concat_cols({tape.constant(std::move(y)), stack_env(tape, batch, static_cast<int>(t)), emb});
    state = encoder_.step(p, x, state);
  }
  return state;
}

ad::Var Model::initial_state(ad::Tape& tape, const std::vector<const ModelInput*>& batch) const {
  const int n = num_cells();
  Matrix rho(static_cast<Eigen::Index>(n) * static_cast<Eigen::Index>(batch.size()), 1);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b]->initial_density.rows() != n) throw DataError("initial density has the wrong number of cells");
    rho.middleRows(static_cast<Eigen::Index>(b) * n, n) = batch[b]->initial_density;
  }
  return tape.constant(std::move(rho));
}

Trajectory Model::rollout(const nets::Bindings& p, const std::vector<const ModelInput*>& batch,
                          const nets::LstmState& encoded, const ad::Var& rho0, const ad::Var& embedding, int horizon,
                          const nets::DropoutSpec& drop) const {
  if (horizon < 1) throw ConfigError("forecast horizon must be >= 1");
  ad::Tape& tape = p.tape();
  const int bsz = static_cast<int>(batch.size());
  const int last_context = static_cast<int>(batch[0]->pseudo.size()) - 1;
  const fvm::GraphOps g(tess_, bsz, config_.dt);
  const ad::Var emb = expand_cells(embedding, bsz);
  const ad::Var loc = expand_cells(tape.constant(features_.location), bsz);
  const ad::Var z0 = encoded.h;

  ad::Var e_out, e_in;
  if (config_.flux == FluxScheme::flowrate) {
    const int nf = tess_.num_faces();
    Matrix out(static_cast<Eigen::Index>(nf) * bsz, 4), in(static_cast<Eigen::Index>(nf) * bsz, 4);
    for (int b = 0; b < bsz; ++b) {
      out.middleRows(static_cast<Eigen::Index>(b) * nf, nf) = features_.edge;
      in.middleRows(static_cast<Eigen::Index>(b) * nf, nf) = features_.edge;
    }
    in.middleCols(1, 2) *= -1.0;
    e_out = tape.constant(std::move(out));
    e_in = tape.constant(std::move(in));
  }

  Trajectory traj;
  traj.initial = rho0;
  ad::Var rho = rho0;
  nets::LstmState state = encoded;
  for (int k = 1; k <= horizon; ++k) {
    const ad::Var u = stack_env(tape, batch, last_context + k);
    state = decoder_.step(p, ad::concat_cols({rho, u, emb, z0}), state);
    state.h = fvm::apply_boundary(g, state.h);
    state.c = fvm::apply_boundary(g, state.c);

    const ad::Var feat = ad::concat_cols({state.h, u, loc});
    const ad::Var v = mlp_v_.forward(p, feat, drop);
    const ad::Var s_raw = mlp_s_.forward(p, feat, drop);
    const ad::Var delta = ad::square(ad::tanh(ad::slice_cols(s_raw, 0, 1)));
    const ad::Var gamma = ad::square(ad::slice_cols(s_raw, 1, 1));

    ad::Var flux;
    switch (config_.flux) {
      case FluxScheme::upwind: flux = fvm::upwind_fluxes(g, rho, v); break;
      case FluxScheme::flowrate: {
        const ad::Var u_prev = stack_env(tape, batch, last_context + k - 1);
        const ad::Var a_out = ad::sigmoid(mlp_a_.forward(
            p,
            ad::concat_cols({ad::gather_rows(state.h, g.face_i), ad::gather_rows(u_prev, g.face_i),
                             ad::gather_rows(u, g.face_j), e_out}),
            drop));
        const ad::Var a_in = ad::sigmoid(mlp_a_.forward(
            p,
            ad::concat_cols({ad::gather_rows(state.h, g.face_j), ad::gather_rows(u_prev, g.face_j),
                             ad::gather_rows(u, g.face_i), e_in}),
            drop));
        flux = fvm::flowrate_fluxes(g, rho, a_out, a_in);
        break;
      }
      case FluxScheme::none: flux = tape.constant(Matrix::Zero(g.faces(), 1)); break;
    }
    const ad::Var source = fvm::source_sink(delta, gamma, rho);
    rho = fvm::continuity_step(g, rho, flux, source);
    check_finite(rho, k, "density");
    check_finite(v, k, "velocity");

    traj.density.push_back(rho);
    traj.velocity.push_back(v);
    traj.delta.push_back(delta);
    traj.gamma.push_back(gamma);
    traj.source.push_back(source);
    traj.flux.push_back(flux);
  }
  return traj;
}

Trajectory Model::forward(const nets::Bindings& p, const std::vector<const ModelInput*>& batch, int horizon,
                          const nets::DropoutSpec& drop) const {
  const ad::Var emb = static_embedding(p);
  const nets::LstmState z = encode(p, batch, emb);
  return rollout(p, batch, z, initial_state(p.tape(), batch), emb, horizon, drop);
}

std::vector<ForecastRun> Model::to_runs(const Trajectory& traj, int batch_size) const {
  const int n = num_cells();
  const int nf = tess_.num_faces();
  const Scaling& s = config_.scaling;
  const double flux_factor = 1.0 / (s.density * s.length * s.length);
  auto column = [](const ad::Var& v, int offset, int count, int col, double factor) {
    std::vector<double> out(count);
    for (int i = 0; i < count; ++i) out[i] = v.value()(offset + i, col) * factor;
    return out;
  };
  std::vector<ForecastRun> runs(batch_size);
  for (int b = 0; b < batch_size; ++b) {
    ForecastRun& run = runs[b];
    run.initial_density = column(traj.initial, b * n, n, 0, 1.0 / s.density);
    for (int k = 0; k < traj.horizon(); ++k) {
      StepRecord r;
      r.density = column(traj.density[k], b * n, n, 0, 1.0 / s.density);
      r.vx = column(traj.velocity[k], b * n, n, 0, 1.0 / s.length);
      r.vy = column(traj.velocity[k], b * n, n, 1, 1.0 / s.length);
      r.delta = column(traj.delta[k], b * n, n, 0, 1.0);
      r.gamma = column(traj.gamma[k], b * n, n, 0, 1.0 / s.density);
      r.source_sink = column(traj.source[k], b * n, n, 0, 1.0 / s.density);
      r.flux = column(traj.flux[k], b * nf, nf, 0, flux_factor);
      run.steps.push_back(std::move(r));
    }
  }
  return runs;
}

ForecastRun Model::predict(const nets::ParamSet& params, const ModelInput& input, int horizon) const {
  ad::Tape tape;
  const nets::Bindings p(tape, params, false);
  const Trajectory traj = forward(p, {&input}, horizon);
  return to_runs(traj, 1).front();
}

double missing_fraction(const std::vector<SensorFrame>& frames) {
  std::size_t total = 0, missing = 0;
  for (const SensorFrame& f : frames) {
    total += f.valid.size();
    for (char v : f.valid) missing += v ? 0 : 1;
  }
  return total == 0 ? 1.0 : static_cast<double>(missing) / static_cast<double>(total);
}

Forecast forecast(const Model& model, const nets::ParamSet& params, const RadarToCellMap& r2c,
                  const CellToRadarMap& c2r, const std::vector<SensorFrame>& context, std::vector<Matrix> env,
                  int horizon, double max_missing) {
  const double miss = missing_fraction(context);
  if (miss > max_missing)
    throw DataError("context window has " + std::to_string(100.0 * miss) + "% missing radar-hours");
  const ModelInput in = prepare_input(model.tessellation(), r2c, context, std::move(env), model.config().scaling);
  Forecast out;
  out.run = model.predict(params, in, horizon);
  for (const StepRecord& s : out.run.steps) {
    CellFields cells(model.num_cells());
    cells.density = s.density;
    cells.vx = s.vx;
    cells.vy = s.vy;
    out.radar.push_back(observe(c2r, cells));
  }
  return out;
}

}  // namespace birdflux::model
