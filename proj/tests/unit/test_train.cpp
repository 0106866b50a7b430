#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "birdflux/errors.hpp"
#include "birdflux/train.hpp"

using namespace birdflux;
using namespace birdflux::train;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

CellToRadarMap identity_map(int n) {
  CellToRadarMap c2r;
  c2r.num_cells = n;
  for (int i = 0; i < n; ++i) c2r.radars.push_back({{i, 1.0}});
  return c2r;
}

StepRecord step(std::vector<double> rho, std::vector<double> vx, std::vector<double> vy) {
  StepRecord s;
  s.density = std::move(rho);
  s.vx = std::move(vx);
  s.vy = std::move(vy);
  return s;
}

SensorFrame frame(std::vector<double> rho, std::vector<double> vx, std::vector<double> vy) {
  SensorFrame f(static_cast<int>(rho.size()));
  f.density = std::move(rho);
  f.vx = std::move(vx);
  f.vy = std::move(vy);
  return f;
}

synth::Season blank_season(int hours, int radars) {
  synth::Season s;
  for (int t = 0; t < hours; ++t) {
    s.times.push_back("t" + std::to_string(t));
    s.hour_of_day.push_back(t % 24);
    s.day.push_back(0);
    s.frames.emplace_back(radars);
  }
  return s;
}

const synth::Dataset& small_dataset() {
  static const synth::Dataset data = [] {
    synth::ScenarioConfig c;
    c.seasons = {2013, 2014};
    c.days = 3;
    c.seed = 5;
    return synth::generate(c);
  }();
  return data;
}

model::ModelConfig small_model_config() {
  model::ModelConfig c;
  c.hidden = 6;
  c.gat_hidden = {4, 4};
  c.mlp_hidden = 6;
  c.knn = 3;
  c.context = 6;
  c.dropout = 0.0;
  return c;
}

TrainConfig small_train_config() {
  TrainConfig t;
  t.lr = 1e-2;
  t.batch_size = 8;
  t.max_epochs = 6;
  t.curriculum = false;
  t.k_max = 6;
  t.context = 6;
  t.stride = 4;
  t.max_missing = 1.0;
  return t;
}

FitData fit_data(const model::Model& m, const synth::Dataset& data, const std::vector<int>& radars,
                 const TrainConfig& tc) {
  const auto seasons = std::vector<const synth::Season*>{&data.seasons[0]};
  const auto seqs = make_sequences(seasons, tc.context, tc.k_max, WindowMode::training, tc.stride, tc.max_missing);
  FitData fd;
  fd.train = make_examples(m, data.net, radars, seasons, seqs, m.config().knn);
  fd.c2r = build_cell_to_radar(data.tess, data.net.subset(radars));
  return fd;
}

nets::ParamSet initial_params(const model::Model& m, std::uint64_t seed) {
  nets::ParamSet p;
  Rng rng = make_stream(seed, "init");
  m.init(p, rng);
  return p;
}

bool same_params(const nets::ParamSet& a, const nets::ParamSet& b) {
  for (const auto& [name, v] : a.all())
    if (!(v.array() == b.at(name).array()).all()) return false;
  return a.all().size() == b.all().size();
}

}  // namespace

TEST_CASE("loss is zero for a perfect forecast") {
  ForecastRun run;
  run.steps = {step({10, 20}, {1, 2}, {3, 4}), step({7, 8}, {0, 0}, {1, 1})};
  const std::vector<SensorFrame> obs = {frame({10, 20}, {1, 2}, {3, 4}), frame({7, 8}, {0, 0}, {1, 1})};
  const LossValue l = loss(run, obs, {0, 0}, identity_map(2), 0.1, {});
  CHECK(l.total == 0.0);
}

TEST_CASE("loss on a hand example") {
  ForecastRun run;
  run.steps = {step({12, 8}, {1, 1}, {1, 1})};
  const std::vector<SensorFrame> obs = {frame({10, 10}, {0, 0}, {0, 0})};
  const model::Scaling unit{1.0, 1.0};
  const LossValue l = loss(run, obs, {0}, identity_map(2), 0.5, unit);
  CHECK(l.rho == doctest::Approx(4.0));
  CHECK(l.v == doctest::Approx(2.0));
  CHECK(l.total == doctest::Approx(5.0));
  CHECK(loss(run, obs, {0}, identity_map(2), 0.0, unit).total == doctest::Approx(4.0));

  // Default scaling: densities x1e-3, velocities x1e-2.
  const LossValue s = loss(run, obs, {0}, identity_map(2), 0.5, {});
  CHECK(s.rho == doctest::Approx(4e-6));
  CHECK(s.v == doctest::Approx(2e-4));
}

TEST_CASE("loss masks daytime, invalid and low-density velocities") {
  ForecastRun run;
  run.steps = {step({12, 8}, {1, 1}, {1, 1}), step({100, 100}, {9, 9}, {9, 9})};
  std::vector<SensorFrame> obs = {frame({10, 3}, {0, 0}, {0, 0}), frame({0, 0}, {0, 0}, {0, 0})};
  const model::Scaling unit{1.0, 1.0};
  LossValue l = loss(run, obs, {0, 1}, identity_map(2), 1.0, unit);
  CHECK(l.rho == doctest::Approx((4.0 + 25.0) / 2 / 2));
  CHECK(l.v == doctest::Approx(2.0 / 2));

  obs[0].valid[1] = 0;
  obs[0].vx[0] = kNaN;
  l = loss(run, obs, {0, 1}, identity_map(2), 1.0, unit);
  CHECK(l.rho == doctest::Approx(4.0 / 2));
  CHECK(l.v == 0.0);
  CHECK(l.empty_steps == 0);

  obs[0].valid[0] = 0;
  l = loss(run, obs, {0, 1}, identity_map(2), 1.0, unit);
  CHECK(l.total == 0.0);
  CHECK(l.empty_steps == 1);
}

TEST_CASE("differentiable batch loss matches the per-run loss") {
  const synth::Dataset& data = small_dataset();
  const model::Model m = make_model(data, small_model_config());
  const nets::ParamSet params = initial_params(m, 3);
  std::vector<int> all(data.net.size());
  for (int i = 0; i < data.net.size(); ++i) all[i] = i;
  TrainConfig tc = small_train_config();
  tc.stride = 7;
  const FitData fd = fit_data(m, data, all, tc);
  REQUIRE(fd.train.size() >= 3);

  std::vector<const model::ModelInput*> inputs;
  std::vector<const Target*> targets;
  double expected = 0.0;
  for (int b = 0; b < 3; ++b) {
    inputs.push_back(&fd.train[b].input);
    targets.push_back(&fd.train[b].target);
    const ForecastRun run = m.predict(params, fd.train[b].input, tc.k_max);
    expected += loss(run, fd.train[b].target.frames, fd.train[b].target.daytime, fd.c2r, 0.3, m.config().scaling).total / 3;
  }
  ad::Tape tape;
  const nets::Bindings p(tape, params, false);
  const model::Trajectory traj = m.forward(p, inputs, tc.k_max);
  const LossTerms terms = trajectory_loss(traj, targets, fd.c2r, m.num_cells(), 0.3, m.config().scaling);
  CHECK(terms.value.total == doctest::Approx(expected).epsilon(1e-10));
  CHECK(terms.total.item() == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("curriculum horizon") {
  TrainConfig c;
  CHECK(curriculum_horizon(0, c) == 2);
  CHECK(curriculum_horizon(9, c) == 2);
  CHECK(curriculum_horizon(10, c) == 4);
  int prev = 0;
  bool reached = false;
  for (int e = 0; e < 400; ++e) {
    const int k = curriculum_horizon(e, c);
    CHECK(k >= prev);
    CHECK(k <= 48);
    reached |= k == 48;
    prev = k;
  }
  CHECK(reached);
  c.curriculum = false;
  CHECK(curriculum_horizon(0, c) == 48);
  CHECK_THROWS_AS(curriculum_horizon(-1, c), ConfigError);
}

TEST_CASE("Adam updates") {
  nets::ParamSet p;
  p.add("w", Matrix::Constant(2, 1, 1.0));
  const Adam adam{0.01};
  AdamState st;
  std::map<std::string, Matrix> g{{"w", Matrix::Zero(2, 1)}};
  REQUIRE(adam.step(p, g, st));
  CHECK(p.at("w")(0, 0) == 1.0);

  nets::ParamSet q;
  q.add("w", Matrix::Constant(2, 1, 1.0));
  AdamState sq;
  Matrix gw(2, 1);
  gw << 3.0, -0.5;
  REQUIRE(adam.step(q, {{"w", gw}}, sq));
  CHECK(q.at("w")(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(q.at("w")(1, 0) == doctest::Approx(1.0 + 0.01).epsilon(1e-6));

  Matrix bad = gw;
  bad(1, 0) = kNaN;
  const Matrix before = q.at("w");
  CHECK_FALSE(adam.step(q, {{"w", bad}}, sq));
  CHECK((q.at("w").array() == before.array()).all());
  CHECK(sq.steps == 1);
}

TEST_CASE("Adam reaches the minimum of a quadratic bowl") {
  Matrix target(3, 1);
  target << 1.5, -2.0, 0.25;
  nets::ParamSet p;
  p.add("x", Matrix::Zero(3, 1));
  const Adam adam{0.01};
  AdamState st;
  int steps = 0;
  while (steps < 5000 && (p.at("x") - target).cwiseAbs().maxCoeff() > 1e-6) {
    adam.step(p, {{"x", 2.0 * (p.at("x") - target)}}, st);
    ++steps;
  }
  CHECK((p.at("x") - target).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(steps <= 5000);
}

TEST_CASE("global norm clipping") {
  std::map<std::string, Matrix> g{{"a", Matrix::Constant(1, 1, 3.0)}, {"b", Matrix::Constant(1, 1, 4.0)}};
  CHECK(clip_global_norm(g, 10.0) == doctest::Approx(5.0));
  CHECK(g["a"](0, 0) == 3.0);
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(global_norm(g) == doctest::Approx(1.0));
  CHECK(g["b"](0, 0) == doctest::Approx(0.8));
}

TEST_CASE("sliding windows") {
  const synth::Season s = blank_season(130, 3);
  const std::vector<const synth::Season*> seasons{&s};
  CHECK(make_sequences(seasons, 24, 48, WindowMode::training).size() == 130 - 72 + 1);
  CHECK(make_sequences(seasons, 24, 48, WindowMode::training, 4).size() == 15);
  const auto eval = make_sequences(seasons, 24, 48, WindowMode::evaluation);
  REQUIRE(eval.size() == 2);
  for (const Sequence& q : eval) {
    CHECK(s.hour_of_day[q.start] == 13);
    CHECK(q.t0() == q.start + 23);
  }
  CHECK(make_sequences(seasons, 24, 120, WindowMode::training).empty());
}

TEST_CASE("windows with too many missing readings are dropped") {
  synth::Season bad = blank_season(10, 10);
  for (int i = 0; i < 11; ++i) bad.frames[i % 10].valid[i / 10 + 3] = 0;
  synth::Season good = blank_season(10, 10);
  for (int i = 0; i < 9; ++i) good.frames[i].valid[4] = 0;
  CHECK(make_sequences({&bad}, 5, 5, WindowMode::training, 1, 0.1).empty());
  const auto kept = make_sequences({&good}, 5, 5, WindowMode::training, 1, 0.1);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].missing == doctest::Approx(0.09));
}

TEST_CASE("spatial folds partition the radars") {
  std::vector<std::string> ids;
  for (int i = 0; i < 23; ++i) ids.push_back("R" + std::to_string(i));
  const auto folds = spatial_cv_split(ids, 10, 4);
  REQUIRE(folds.size() == 10);
  std::multiset<int> tested;
  for (const Fold& f : folds) {
    CHECK(f.test.size() + f.train.size() == ids.size());
    CHECK((f.test.size() == 2 || f.test.size() == 3));
    for (int m : f.test) {
      tested.insert(m);
      CHECK(std::find(f.train.begin(), f.train.end(), m) == f.train.end());
    }
  }
  CHECK(tested.size() == ids.size());
  CHECK(std::set<int>(tested.begin(), tested.end()).size() == ids.size());
  const auto again = spatial_cv_split(ids, 10, 4);
  for (std::size_t f = 0; f < folds.size(); ++f) CHECK(again[f].test == folds[f].test);

  const auto singles = spatial_cv_split({"A", "B", "C"}, 3, 1);
  for (const Fold& f : singles) CHECK(f.test.size() == 1);
  CHECK_THROWS_AS(spatial_cv_split({"A"}, 2, 1), ConfigError);
}

TEST_CASE("train config json round trip") {
  TrainConfig c;
  c.lr = 3e-3;
  c.k_every = 2;
  const TrainConfig back = train_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  CHECK(back.lr == c.lr);
  CHECK(back.k_every == 2);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"learning_rate", 1}}), ConfigError);
  c.k_start = 60;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("training with zero learning rate leaves the parameters unchanged") {
  const synth::Dataset& data = small_dataset();
  const model::Model m = make_model(data, small_model_config());
  const nets::ParamSet init = initial_params(m, 2);
  TrainConfig tc = small_train_config();
  tc.lr = 0.0;
  tc.max_epochs = 2;
  const FitResult r = fit(m, init, fit_data(m, data, {0, 1, 2, 3, 4, 5, 6}, tc), tc);
  CHECK(same_params(r.last, init));
  CHECK(same_params(r.best, init));
  CHECK(r.log.size() == 2);
}

TEST_CASE("training lowers the loss and is reproducible") {
  const synth::Dataset& data = small_dataset();
  const model::Model m = make_model(data, small_model_config());
  const nets::ParamSet init = initial_params(m, 2);
  const TrainConfig tc = small_train_config();
  const FitData fd = fit_data(m, data, {0, 1, 2, 3, 4, 5, 6}, tc);
  const FitResult a = fit(m, init, fd, tc);
  const FitResult b = fit(m, init, fd, tc);
  REQUIRE(a.log.size() == 6);
  CHECK(a.log.back().loss < a.log.front().loss);
  CHECK(same_params(a.last, b.last));
  for (std::size_t e = 0; e < a.log.size(); ++e) CHECK(log_csv_row(a.log[e]) == log_csv_row(b.log[e]));
  CHECK(log_csv_header() == "epoch,K,loss,loss_rho,loss_v,grad_norm,neg_cells\n");
}

TEST_CASE("held-out radars do not influence training") {
  synth::Dataset data = small_dataset();
  const model::Model m = make_model(data, small_model_config());
  const nets::ParamSet init = initial_params(m, 2);
  TrainConfig tc = small_train_config();
  tc.max_epochs = 2;
  const std::vector<int> train_radars{0, 2, 3, 5, 6};
  const FitResult a = fit(m, init, fit_data(m, data, train_radars, tc), tc);
  for (synth::Season& s : data.seasons)
    for (SensorFrame& f : s.frames)
      for (int held : {1, 4}) {
        f.density[held] = 1e4;
        f.vx[held] = -50.0;
      }
  const FitResult b = fit(m, init, fit_data(m, data, train_radars, tc), tc);
  CHECK(same_params(a.last, b.last));
}
