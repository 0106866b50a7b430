#include "birdflux/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "birdflux/errors.hpp"
#include "birdflux/json_util.hpp"

namespace birdflux::train {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool density_valid(const SensorFrame& f, int m) { return f.valid[m] && std::isfinite(f.density[m]); }

bool velocity_usable(const SensorFrame& f, int m, double min_density) {
  return density_valid(f, m) && std::isfinite(f.vx[m]) && std::isfinite(f.vy[m]) && f.density[m] > min_density;
}

/// Block-diagonal radar observation operator for `batch` stacked copies.
std::shared_ptr<const ad::SparseMatrix> batch_observer(const CellToRadarMap& c2r, int num_cells, int batch) {
  const int radars = static_cast<int>(c2r.radars.size());
  std::vector<Eigen::Triplet<double>> entries;
  for (int b = 0; b < batch; ++b)
    for (int m = 0; m < radars; ++m)
      for (const auto& [cell, w] : c2r.radars[m]) entries.emplace_back(b * radars + m, b * num_cells + cell, w);
  auto a = std::make_shared<ad::SparseMatrix>(batch * radars, batch * num_cells);
  a->setFromTriplets(entries.begin(), entries.end());
  return a;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train.lambda must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
  if (k_start < 1 || k_max < k_start) throw ConfigError("train requires 1 <= k_start <= k_max");
  if (k_step < 0 || k_every < 1) throw ConfigError("train.k_step must be >= 0 and k_every >= 1");
  if (context < 1) throw ConfigError("train.context must be >= 1");
  if (stride < 1 || validation_stride < 1) throw ConfigError("train strides must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0))
    throw ConfigError("train Adam constants out of range");
  if (!(max_missing >= 0.0 && max_missing <= 1.0)) throw ConfigError("train.max_missing must lie in [0, 1]");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["lambda"] = c.lambda;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["curriculum"] = c.curriculum;
  j["k_start"] = c.k_start;
  j["k_step"] = c.k_step;
  j["k_every"] = c.k_every;
  j["k_max"] = c.k_max;
  j["context"] = c.context;
  j["stride"] = c.stride;
  j["validation_stride"] = c.validation_stride;
  j["validation_season"] = c.validation_season;
  j["clip_norm"] = c.clip_norm;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["max_missing"] = c.max_missing;
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  ObjectReader r(j, "train");
  r.read("lambda", c.lambda);
  r.read("lr", c.lr);
  r.read("batch_size", c.batch_size);
  r.read("max_epochs", c.max_epochs);
  r.read("curriculum", c.curriculum);
  r.read("k_start", c.k_start);
  r.read("k_step", c.k_step);
  r.read("k_every", c.k_every);
  r.read("k_max", c.k_max);
  r.read("context", c.context);
  r.read("stride", c.stride);
  r.read("validation_stride", c.validation_stride);
  r.read("validation_season", c.validation_season);
  r.read("clip_norm", c.clip_norm);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("epsilon", c.epsilon);
  r.read("max_missing", c.max_missing);
  r.read("seed", c.seed);
  r.finish();
  return c;
}

int curriculum_horizon(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  if (!cfg.curriculum) return cfg.k_max;
  const long k = cfg.k_start + static_cast<long>(cfg.k_step) * (epoch / cfg.k_every);
  return static_cast<int>(std::min<long>(cfg.k_max, k));
}

LossValue loss(const ForecastRun& run, const std::vector<SensorFrame>& targets, const std::vector<char>& daytime,
               const CellToRadarMap& c2r, double lambda, const model::Scaling& scaling, double min_density) {
  const int K = run.horizon();
  if (static_cast<int>(targets.size()) < K || static_cast<int>(daytime.size()) < K)
    throw DataError("loss needs a target and a daytime flag for every step");
  LossValue out;
  if (K == 0) return out;
  for (int k = 0; k < K; ++k) {
    if (daytime[k]) continue;
    const StepRecord& s = run.steps[k];
    CellFields cells(static_cast<int>(s.density.size()));
    cells.density = s.density;
    cells.vx = s.vx.empty() ? std::vector<double>(s.density.size(), 0.0) : s.vx;
    cells.vy = s.vy.empty() ? std::vector<double>(s.density.size(), 0.0) : s.vy;
    const SensorFrame pred = observe(c2r, cells);
    const SensorFrame& obs = targets[k];
    double l_rho = 0.0, l_v = 0.0;
    int n_rho = 0, n_v = 0;
    for (int m = 0; m < obs.size(); ++m) {
      if (!density_valid(obs, m)) continue;
      const double e = (pred.density[m] - obs.density[m]) * scaling.density;
      l_rho += e * e;
      ++n_rho;
      if (!velocity_usable(obs, m, min_density)) continue;
      const double ex = (pred.vx[m] - obs.vx[m]) * scaling.length;
      const double ey = (pred.vy[m] - obs.vy[m]) * scaling.length;
      l_v += ex * ex + ey * ey;
      ++n_v;
    }
    if (n_rho == 0) ++out.empty_steps;
    if (n_rho) out.rho += l_rho / n_rho;
    if (n_v) out.v += l_v / n_v;
  }
  out.rho /= K;
  out.v /= K;
  out.total = out.rho + lambda * out.v;
  return out;
}

LossTerms trajectory_loss(const model::Trajectory& traj, const std::vector<const Target*>& targets,
                          const CellToRadarMap& c2r, int num_cells, double lambda, const model::Scaling& scaling,
                          double min_density) {
  const int K = traj.horizon();
  const int B = static_cast<int>(targets.size());
  const int M = static_cast<int>(c2r.radars.size());
  if (K < 1) throw ConfigError("loss needs at least one step");
  for (const Target* t : targets)
    if (static_cast<int>(t->frames.size()) < K || static_cast<int>(t->daytime.size()) < K)
      throw DataError("target shorter than the forecast horizon");
  ad::Tape& tape = traj.initial.tape();
  const auto observer = batch_observer(c2r, num_cells, B);
  LossTerms out;
  std::vector<ad::Var> terms;
  for (int k = 0; k < K; ++k) {
    Matrix obs_rho = Matrix::Zero(B * M, 1), w_rho = Matrix::Zero(B * M, 1);
    Matrix obs_v = Matrix::Zero(B * M, 2), w_v = Matrix::Zero(B * M, 2);
    bool any_rho = false, any_v = false;
    double step_rho = 0.0, step_v = 0.0;
    for (int b = 0; b < B; ++b) {
      if (targets[b]->daytime[k]) continue;
      const SensorFrame& f = targets[b]->frames[k];
      if (f.size() != M) throw DataError("target frame does not match the observation operator");
      int n_rho = 0, n_v = 0;
      for (int m = 0; m < M; ++m) {
        if (!density_valid(f, m)) continue;
        ++n_rho;
        if (velocity_usable(f, m, min_density)) ++n_v;
      }
      if (n_rho == 0) ++out.value.empty_steps;
      for (int m = 0; m < M; ++m) {
        const int r = b * M + m;
        if (!density_valid(f, m)) continue;
        obs_rho(r, 0) = f.density[m] * scaling.density;
        w_rho(r, 0) = 1.0 / (static_cast<double>(n_rho) * B * K);
        any_rho = true;
        if (!velocity_usable(f, m, min_density)) continue;
        obs_v(r, 0) = f.vx[m] * scaling.length;
        obs_v(r, 1) = f.vy[m] * scaling.length;
        w_v(r, 0) = w_v(r, 1) = 1.0 / (static_cast<double>(n_v) * B * K);
        any_v = true;
      }
    }
    if (any_rho) {
      const ad::Var pred = ad::spmm(observer, traj.density[k]);
      const ad::Var err = ad::square(ad::sub(pred, tape.constant(obs_rho)));
      const ad::Var term = ad::sum(ad::mul(err, tape.constant(w_rho)));
      step_rho = term.item();
      terms.push_back(term);
    }
    if (any_v) {
      const ad::Var pred = ad::spmm(observer, traj.velocity[k]);
      const ad::Var err = ad::square(ad::sub(pred, tape.constant(obs_v)));
      const ad::Var term = ad::sum(ad::mul(err, tape.constant(w_v)));
      step_v = term.item();
      if (lambda != 0.0) terms.push_back(ad::scale(term, lambda));
    }
    out.value.rho += step_rho;
    out.value.v += step_v;
  }
  out.value.total = out.value.rho + lambda * out.value.v;
  if (terms.empty()) {
    // Keep the graph connected so backward() still reaches the parameters with zero gradient.
    out.total = ad::scale(ad::sum(traj.density.front()), 0.0);
  } else {
    out.total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
  }
  return out;
}

bool Adam::step(nets::ParamSet& params, const std::map<std::string, Matrix>& grads, AdamState& state) const {
  for (const auto& [name, g] : grads)
    if (!g.allFinite()) return false;
  ++state.steps;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.steps));
  for (auto& [name, value] : params.all()) {
    const auto it = grads.find(name);
    const Matrix g = it == grads.end() ? Matrix::Zero(value.rows(), value.cols()) : it->second;
    if (g.rows() != value.rows() || g.cols() != value.cols()) throw ConfigError("gradient shape mismatch for " + name);
    Matrix& m = state.m[name];
    Matrix& v = state.v[name];
    if (m.size() == 0) m = Matrix::Zero(value.rows(), value.cols());
    if (v.size() == 0) v = Matrix::Zero(value.rows(), value.cols());
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon);
  }
  return true;
}

double global_norm(const std::map<std::string, Matrix>& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

double clip_global_norm(std::map<std::string, Matrix>& grads, double max_norm) {
  const double n = global_norm(grads);
  if (std::isfinite(n) && n > max_norm) {
    const double f = max_norm / n;
    for (auto& [name, g] : grads) g *= f;
  }
  return n;
}

std::vector<Sequence> make_sequences(const std::vector<const synth::Season*>& seasons, int context, int horizon,
                                     WindowMode mode, int stride, double max_missing) {
  if (context < 1 || horizon < 1 || stride < 1) throw ConfigError("window sizes and stride must be positive");
  std::vector<Sequence> out;
  for (int s = 0; s < static_cast<int>(seasons.size()); ++s) {
    const synth::Season& season = *seasons[s];
    const int length = context + horizon;
    for (int start = 0; start + length <= season.hours(); ++start) {
      if (mode == WindowMode::training && start % stride != 0) continue;
      if (mode == WindowMode::evaluation && season.hour_of_day[start] != 13) continue;
      Sequence seq;
      seq.season = s;
      seq.start = start;
      seq.context = context;
      seq.horizon = horizon;
      const std::vector<SensorFrame> window(season.frames.begin() + start, season.frames.begin() + start + length);
      seq.missing = model::missing_fraction(window);
      seq.start_time = season.times[start];
      if (seq.missing > max_missing) continue;
      out.push_back(std::move(seq));
    }
  }
  if (out.empty()) std::fprintf(stderr, "warning: no complete %d-hour windows in the data\n", context + horizon);
  return out;
}

std::vector<SensorFrame> select_radars(const std::vector<SensorFrame>& frames, const std::vector<int>& radars) {
  std::vector<SensorFrame> out;
  out.reserve(frames.size());
  for (const SensorFrame& f : frames) {
    SensorFrame g(static_cast<int>(radars.size()));
    for (std::size_t r = 0; r < radars.size(); ++r) {
      const int m = radars[r];
      if (m < 0 || m >= f.size()) throw LookupError("radar index out of range");
      g.density[r] = f.density[m];
      g.vx[r] = f.vx[m];
      g.vy[r] = f.vy[m];
      g.valid[r] = f.valid[m];
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<Example> make_examples(const model::Model& model, const SensorNetwork& net, const std::vector<int>& radars,
                                   const std::vector<const synth::Season*>& seasons,
                                   const std::vector<Sequence>& sequences, int knn) {
  const Tessellation& tess = model.tessellation();
  const RadarToCellMap r2c = build_radar_to_cell(tess, net.subset(radars), knn);
  std::vector<std::vector<Matrix>> pseudo(seasons.size());
  std::vector<std::vector<SensorFrame>> frames(seasons.size());
  auto prepare = [&](int s) {
    if (!frames[s].empty()) return;
    frames[s] = select_radars(seasons[s]->frames, radars);
    const model::ModelInput all = model::prepare_input(tess, r2c, frames[s], seasons[s]->env, model.config().scaling);
    pseudo[s] = all.pseudo;
  };
  std::vector<Example> out;
  out.reserve(sequences.size());
  for (const Sequence& seq : sequences) {
    if (seq.season < 0 || seq.season >= static_cast<int>(seasons.size())) throw LookupError("sequence season out of range");
    prepare(seq.season);
    const synth::Season& season = *seasons[seq.season];
    if (seq.start + seq.length() > season.hours()) throw DataError("sequence runs past the season");
    Example ex;
    ex.seq = seq;
    ex.input.pseudo.assign(pseudo[seq.season].begin() + seq.start, pseudo[seq.season].begin() + seq.start + seq.context);
    ex.input.initial_density = ex.input.pseudo.back().col(0);
    ex.input.env.assign(season.env.begin() + seq.start, season.env.begin() + seq.start + seq.length());
    const int t0 = seq.t0();
    ex.target.frames.assign(frames[seq.season].begin() + t0 + 1, frames[seq.season].begin() + t0 + 1 + seq.horizon);
    for (int k = 1; k <= seq.horizon; ++k) ex.target.daytime.push_back(season.day[t0 + k]);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Fold> spatial_cv_split(const std::vector<std::string>& radar_ids, int n_folds, std::uint64_t seed) {
  const int n = static_cast<int>(radar_ids.size());
  if (n_folds < 2 || n_folds > n) throw ConfigError("need 2 <= folds <= number of radars");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, "folds");
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Fold> folds(n_folds);
  int pos = 0;
  for (int f = 0; f < n_folds; ++f) {
    const int size = n / n_folds + (f < n % n_folds ? 1 : 0);
    std::vector<char> in_test(n, 0);
    for (int k = 0; k < size; ++k) in_test[order[pos + k]] = 1;
    pos += size;
    for (int m = 0; m < n; ++m) (in_test[m] ? folds[f].test : folds[f].train).push_back(m);
  }
  return folds;
}

std::string log_csv_header() { return "epoch,K,loss,loss_rho,loss_v,grad_norm,neg_cells\n"; }

std::string log_csv_row(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%.9g,%d\n", e.epoch, e.horizon, e.loss, e.loss_rho, e.loss_v,
                e.grad_norm, e.neg_cells);
  return buf;
}

LossValue evaluate_loss(const model::Model& model, const nets::ParamSet& params, const std::vector<Example>& examples,
                        const CellToRadarMap& c2r, int horizon, double lambda, int batch_size) {
  LossValue total;
  if (examples.empty()) return {kNaN, kNaN, kNaN, 0};
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    std::vector<const model::ModelInput*> inputs;
    std::vector<const Target*> targets;
    for (std::size_t i = start; i < end; ++i) {
      inputs.push_back(&examples[i].input);
      targets.push_back(&examples[i].target);
    }
    ad::Tape tape;
    const nets::Bindings p(tape, params, false);
    const model::Trajectory traj = model.forward(p, inputs, horizon);
    const LossTerms t = trajectory_loss(traj, targets, c2r, model.num_cells(), lambda, model.config().scaling);
    const double w = static_cast<double>(end - start) / static_cast<double>(examples.size());
    total.total += w * t.value.total;
    total.rho += w * t.value.rho;
    total.v += w * t.value.v;
    total.empty_steps += t.value.empty_steps;
  }
  return total;
}

FitResult fit(const model::Model& model, nets::ParamSet params, const FitData& data, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw DataError("no training sequences");
  for (const Example& ex : data.train)
    if (ex.seq.horizon < cfg.k_max) throw DataError("training sequences are shorter than k_max");
  const Adam adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon};
  AdamState state;
  FitResult result;
  result.best = params;
  result.best_validation = std::numeric_limits<double>::infinity();
  const bool has_validation = !data.validation.empty();
  const nets::DropoutSpec no_drop;
  int consecutive_bad = 0;

  for (int epoch = 0; epoch < cfg.max_epochs && !result.aborted; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.horizon = curriculum_horizon(epoch, cfg);
    std::vector<int> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_stream(cfg.seed, "order", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng dropout_rng = make_stream(cfg.seed, "dropout", static_cast<std::uint64_t>(epoch));
    const nets::DropoutSpec drop{model.config().dropout, model.config().dropout > 0.0, &dropout_rng};

    double seen = 0.0, norm_sum = 0.0;
    int applied = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const model::ModelInput*> inputs;
      std::vector<const Target*> targets;
      for (std::size_t i = start; i < end; ++i) {
        inputs.push_back(&data.train[order[i]].input);
        targets.push_back(&data.train[order[i]].target);
      }
      ad::Tape tape;
      const nets::Bindings p(tape, params);
      LossTerms terms;
      bool finite = true;
      try {
        const model::Trajectory traj = model.forward(p, inputs, log.horizon, drop.training ? drop : no_drop);
        terms = trajectory_loss(traj, targets, data.c2r, model.num_cells(), cfg.lambda, model.config().scaling);
        finite = std::isfinite(terms.value.total);
        if (finite)
          for (const ad::Var& rho : traj.density) log.neg_cells += static_cast<int>((rho.value().array() < 0.0).count());
      } catch (const NumericalError&) {
        finite = false;
      }
      if (!finite) {
        ++log.skipped_steps;
        if (++consecutive_bad >= 2) {
          result.aborted = true;
          std::fprintf(stderr, "training diverged at epoch %d; keeping the best checkpoint\n", epoch);
          break;
        }
        continue;
      }
      consecutive_bad = 0;
      tape.backward(terms.total);
      std::map<std::string, Matrix> grads = p.gradients();
      const double gn = clip_global_norm(grads, cfg.clip_norm);
      if (!adam.step(params, grads, state)) {
        ++log.skipped_steps;
        std::fprintf(stderr, "warning: skipped an update with non-finite gradients at epoch %d\n", epoch);
      } else {
        norm_sum += gn;
        ++applied;
      }
      const double w = static_cast<double>(end - start);
      log.loss += w * terms.value.total;
      log.loss_rho += w * terms.value.rho;
      log.loss_v += w * terms.value.v;
      log.empty_steps += terms.value.empty_steps;
      seen += w;
    }
    if (seen > 0.0) {
      log.loss /= seen;
      log.loss_rho /= seen;
      log.loss_v /= seen;
    }
    log.grad_norm = applied ? norm_sum / applied : 0.0;
    log.validation = kNaN;
    if (has_validation && !result.aborted) {
      try {
        log.validation = evaluate_loss(model, params, data.validation, data.c2r, cfg.k_max, cfg.lambda).total;
      } catch (const NumericalError&) {
        log.validation = kNaN;
      }
      if (std::isfinite(log.validation) && log.validation < result.best_validation) {
        result.best_validation = log.validation;
        result.best = params;
        result.best_epoch = epoch;
      }
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.last = params;
  if (!has_validation && !result.aborted) {
    result.best = params;
    result.best_epoch = cfg.max_epochs - 1;
    result.best_validation = kNaN;
  }
  return result;
}

model::Model make_model(const synth::Dataset& data, const model::ModelConfig& config) {
  return model::Model(config, data.tess, model::make_static_features(data.tess, data.land_cover, config.scaling));
}

}  // namespace birdflux::train
