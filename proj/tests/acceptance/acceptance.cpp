// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero if any fail.
// Usage: acceptance [--only 1,5,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "birdflux/cli.hpp"
#include "birdflux/eval.hpp"
#include "birdflux/fvm.hpp"
#include "birdflux/io.hpp"
#include "birdflux/synth.hpp"
#include "birdflux/train.hpp"
#include "gradient_suites.hpp"
#include "model_fixture.hpp"
#include "obsmap_properties.hpp"

using namespace birdflux;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<int> all_radars(const SensorNetwork& net) {
  std::vector<int> r(net.size());
  for (int m = 0; m < net.size(); ++m) r[m] = m;
  return r;
}

// Desk-scale training shared by criteria 5, 6 and 8 ------------------------------

model::ModelConfig desk_model(model::FluxScheme flux = model::FluxScheme::upwind) {
  model::ModelConfig c;
  c.flux = flux;
  c.hidden = 16;
  c.gat_hidden = {8, 8};
  c.mlp_hidden = 16;
  c.knn = 4;
  c.dropout = 0.0;
  return c;
}

train::TrainConfig desk_train(double lambda) {
  train::TrainConfig t;
  t.lambda = lambda;
  t.lr = 3e-3;
  t.max_epochs = 60;
  t.k_every = 2;
  t.k_step = 2;
  t.stride = 3;
  return t;
}

struct Trained {
  train::FitResult fit;
  double seconds = 0.0;
};

Trained train_on(const synth::Dataset& data, const model::Model& model, const std::vector<int>& train_labels,
                 int validation_label, const train::TrainConfig& tc, std::uint64_t init_seed) {
  const auto t0 = Clock::now();
  const auto seasons = eval::seasons_by_label(data, train_labels);
  const auto val = eval::seasons_by_label(data, {validation_label});
  const std::vector<int> radars = all_radars(data.net);
  train::FitData fd;
  fd.train = train::make_examples(
      model, data.net, radars, seasons,
      train::make_sequences(seasons, tc.context, tc.k_max, train::WindowMode::training, tc.stride, tc.max_missing),
      model.config().knn);
  fd.validation = train::make_examples(model, data.net, radars, val,
                                       train::make_sequences(val, tc.context, tc.k_max, train::WindowMode::training,
                                                             tc.validation_stride, tc.max_missing),
                                       model.config().knn);
  fd.c2r = build_cell_to_radar(data.tess, data.net);
  nets::ParamSet params;
  Rng init = make_stream(init_seed, "init");
  model.init(params, init);
  Trained out;
  out.fit = train::fit(model, params, fd, tc);
  out.seconds = seconds_since(t0);
  return out;
}

/// 19-cell scenario: 2013-2015 train, 2016 validation, 2017 held out.
const synth::Dataset& oracle_scenario() {
  static const synth::Dataset data = [] {
    synth::ScenarioConfig c;
    c.seasons = {2013, 2014, 2015, 2016, 2017};
    c.seed = 3;
    return synth::generate(c);
  }();
  return data;
}

const std::vector<int> kOracleTrain{2013, 2014, 2015};
constexpr int kOracleValidation = 2016;
constexpr int kOracleTest = 2017;

struct OracleScores {
  double r_x = 0.0, r_y = 0.0, sign = 0.0;
  long velocity_pairs = 0, sign_pairs = 0;
};

/// Cell-level comparison with the generator's ground truth over nighttime intervals
/// of the 13:00 evaluation windows in the held-out season.
OracleScores oracle_scores(const synth::Dataset& data, const model::Model& model, const nets::ParamSet& params) {
  const auto test = eval::seasons_by_label(data, {kOracleTest});
  const synth::Season& s = *test[0];
  const auto seqs = train::make_sequences(test, 24, 72, train::WindowMode::evaluation);
  const auto examples = train::make_examples(model, data.net, all_radars(data.net), test, seqs, model.config().knn);
  std::vector<double> px, tx, py, ty, ps, ts;
  for (const train::Example& ex : examples) {
    const ForecastRun run = model.predict(params, ex.input, 72);
    for (int k = 0; k < 72; ++k) {
      const int t = ex.seq.t0() + 1 + k;
      if (s.day[t] || s.day[t - 1]) continue;
      for (int i = 0; i < data.tess.num_cells(); ++i) {
        ps.push_back(run.steps[k].source_sink[i]);
        ts.push_back(s.source[t][i]);
        if (s.density[t][i] < 5.0) continue;
        px.push_back(run.steps[k].vx[i]);
        tx.push_back(s.vx[t][i]);
        py.push_back(run.steps[k].vy[i]);
        ty.push_back(s.vy[t][i]);
      }
    }
  }
  OracleScores out;
  out.velocity_pairs = static_cast<long>(px.size());
  if (px.size() > 2) {
    out.r_x = pearson(px, tx);
    out.r_y = pearson(py, ty);
  }
  std::vector<double> mags;
  for (double v : ts) mags.push_back(std::abs(v));
  std::sort(mags.begin(), mags.end());
  const double median = mags.empty() ? 0.0 : mags[mags.size() / 2];
  long agree = 0;
  for (std::size_t n = 0; n < ts.size(); ++n) {
    if (!(std::abs(ts[n]) > median)) continue;
    ++out.sign_pairs;
    agree += (ps[n] > 0.0) == (ts[n] > 0.0);
  }
  out.sign = out.sign_pairs ? static_cast<double>(agree) / out.sign_pairs : 0.0;
  return out;
}

struct LambdaRun {
  double lambda = 0.0;
  Trained trained;
  OracleScores oracle;
  eval::Metric density_rmse;
  eval::Metric speed_rmse;
};

std::vector<LambdaRun>& lambda_runs() {
  static std::vector<LambdaRun> runs;
  if (!runs.empty()) return runs;
  const synth::Dataset& data = oracle_scenario();
  const model::Model model = train::make_model(data, desk_model());
  for (double lambda : {0.0, 0.01, 0.1}) {
    LambdaRun r;
    r.lambda = lambda;
    r.trained = train_on(data, model, kOracleTrain, kOracleValidation, desk_train(lambda), 1);
    r.oracle = oracle_scores(data, model, r.trained.fit.best);
    const eval::ForecastSet fs =
        eval::forecast_windows(model, r.trained.fit.best, data, {kOracleTest}, all_radars(data.net));
    r.density_rmse = eval::rmse(fs);
    r.speed_rmse = eval::velocity_metrics(fs).speed_rmse;
    std::fprintf(stderr, "  lambda=%g: %.0f s, best epoch %d, rmse %.3f, speed rmse %.3f, r_x %.3f r_y %.3f sign %.3f\n",
                 lambda, r.trained.seconds, r.trained.fit.best_epoch, r.density_rmse.value_or(NAN),
                 r.speed_rmse.value_or(NAN), r.oracle.r_x, r.oracle.r_y, r.oracle.sign);
    runs.push_back(std::move(r));
  }
  return runs;
}

// Criteria ----------------------------------------------------------------------------

Outcome conservation() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  long faces_checked = 0, antisymmetry_failures = 0;
  double worst_telescoping = 0.0;
  int min_cells = 1 << 30, max_cells = 0, max_k = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const int rings = 2 + static_cast<int>(seed % 5);
    const Tessellation tess = build_hex_patch({0, 0}, rings, 137.5);
    const auto scheme = seed % 2 ? model::FluxScheme::upwind : model::FluxScheme::flowrate;
    const int horizon = 1 + static_cast<int>((seed * 7) % 48);
    min_cells = std::min(min_cells, tess.num_cells());
    max_cells = std::max(max_cells, tess.num_cells());
    max_k = std::max(max_k, horizon);
    auto s = testing::make_small_model(tess, scheme, 4, horizon, 1000 + seed);
    const ForecastRun run = s.model->predict(s.params, s.inputs[0], horizon);
    worst = std::max(worst, fvm::ledger_residual(fvm::mass_ledger(tess, run)));
    for (int k = 0; k < horizon; ++k) {
      const StepRecord& st = run.steps[k];
      const std::vector<double>& prev = k == 0 ? run.initial_density : run.steps[k - 1].density;
      // Sum over cells of net outflow telescopes to zero when every face flux enters
      // one cell with the opposite sign of the other.
      const std::vector<double> out = fvm::net_outflow(tess, st.flux);
      double total = 0.0, scale = 0.0;
      for (double v : out) total += v;
      for (double v : st.flux) scale += std::abs(v);
      if (scale > 0.0) worst_telescoping = std::max(worst_telescoping, std::abs(total) / scale);
      if (scheme != model::FluxScheme::upwind) continue;
      for (const Face& f : tess.faces) {
        const FaceGeometry g = face_geometry(tess, f.i, f.j);
        const Vec2 vi{st.vx[f.i], st.vy[f.i]}, vj{st.vx[f.j], st.vy[f.j]};
        const double fij = fvm::upwind_flux(prev[f.i], prev[f.j], vi, vj, g.length, g.normal);
        const double fji = fvm::upwind_flux(prev[f.j], prev[f.i], vj, vi, g.length, -g.normal);
        antisymmetry_failures += fij != -fji;
        ++faces_checked;
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst < 1e-9 && antisymmetry_failures == 0 && worst_telescoping < 1e-12 && secs < 60.0;
  o.detail = fmt("100 rollouts on %d-%d cells, K<=%d: worst ledger residual %.2e; %ld face pairs antisymmetric "
                 "with %ld exceptions; net outflow telescopes to %.1e; %.1f s",
                 min_cells, max_cells, max_k, worst, faces_checked, antisymmetry_failures, worst_telescoping, secs);
  return o;
}

Outcome gradients() {
  const auto t0 = Clock::now();
  double ops = 0.0, blocks = 0.0, full = 0.0;
  std::string worst_name;
  int count = 0;
  for (auto suite : {testing::autodiff_op_suite(), testing::fvm_kernel_suite(), testing::nets_block_suite()})
    for (const auto& r : suite) {
      ++count;
      if (r.max_rel_error > ops) worst_name = r.name;
      ops = std::max(ops, r.max_rel_error);
    }
  for (const auto& r : testing::nets_block_suite()) blocks = std::max(blocks, r.max_rel_error);
  int params = 0;
  for (auto scheme : {model::FluxScheme::upwind, model::FluxScheme::flowrate}) {
    const auto r = testing::model_two_step(scheme);
    full = std::max(full, r.max_rel_error);
    params += r.checked;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ops < 1e-4 && blocks < 1e-4 && full < 1e-3 && secs < 120.0;
  o.detail = fmt("%d ops/kernels/blocks worst %.2e (%s), full 2-step model on 7 cells worst %.2e over %d "
                 "parameters; %.1f s",
                 count, ops, worst_name.c_str(), full, params, secs);
  return o;
}

Outcome interpolation() {
  const auto t0 = Clock::now();
  double worst = 0.0, round_trip = 0.0;
  int wrong_k = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto g = testing::random_geometry(seed);
    const auto v = testing::check_obsmap_properties(g, seed);
    worst = std::max(worst, v.worst());
    round_trip = std::max(round_trip, v.round_trip);
    wrong_k += v.wrong_k;
  }
  Outcome o;
  o.pass = worst < 1e-10 && round_trip < 1e-12 && wrong_k == 0;
  o.detail = fmt("50 geometries: worst property violation %.2e, constant round trip %.2e, wrong neighbor counts %d; "
                 "%.1f s",
                 worst, round_trip, wrong_k, seconds_since(t0));
  return o;
}

Outcome discretization() {
  const auto t0 = Clock::now();
  synth::RefinementConfig periodic;
  periodic.periodic = true;
  const auto a = synth::refinement_study(periodic);
  const auto b = synth::refinement_study(synth::RefinementConfig{});
  bool ok = true;
  std::string ratios;
  for (const auto* r : {&a, &b})
    for (double q : r->ratios) {
      ok = ok && q >= 1.5 && q <= 2.5;
      ratios += fmt("%.3f ", q);
    }
  double ledger = 0.0;
  for (const auto* r : {&a, &b})
    for (double l : r->ledger_residual) ledger = std::max(ledger, l);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ok && secs < 180.0;
  o.detail = fmt("error ratios when halving h (periodic, then against the fine-grid reference): %s; ledger "
                 "residual %.1e; %.1f s",
                 ratios.c_str(), ledger, secs);
  return o;
}

Outcome oracle_recovery() {
  const LambdaRun& r = lambda_runs().back();
  Outcome o;
  o.pass = r.oracle.r_x >= 0.7 && r.oracle.r_y >= 0.7 && r.oracle.sign >= 0.7 && r.trained.seconds < 1800.0 &&
           desk_train(0.1).max_epochs <= 300;
  o.detail = fmt("lambda 0.1, %d epochs, held-out season %d: r_x %.3f, r_y %.3f over %ld cell-hours; source sign "
                 "agreement %.3f over %ld high-activity cell-hours; %.0f s",
                 desk_train(0.1).max_epochs, kOracleTest, r.oracle.r_x, r.oracle.r_y, r.oracle.velocity_pairs,
                 r.oracle.sign, r.oracle.sign_pairs, r.trained.seconds);
  return o;
}

Outcome lambda_tradeoff() {
  const auto& runs = lambda_runs();
  bool monotone = true;
  std::string speeds, densities;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!runs[i].speed_rmse || !runs[i].density_rmse) return {false, "missing held-out metrics"};
    speeds += fmt("%.3f ", *runs[i].speed_rmse);
    densities += fmt("%.3f ", *runs[i].density_rmse);
    if (i > 0) monotone = monotone && *runs[i].speed_rmse <= *runs[i - 1].speed_rmse;
  }
  const double improvement = *runs.front().speed_rmse / *runs.back().speed_rmse;
  const double d = *runs.back().density_rmse / *runs.front().density_rmse;
  const double density_change = std::max(d, 1.0 / d);
  Outcome o;
  o.pass = monotone && density_change < improvement;
  o.detail = fmt("lambda 0, 0.01, 0.1: speed rmse %s(nonincreasing: %s); density rmse %s; density change factor "
                 "%.3f vs speed improvement factor %.3f",
                 speeds.c_str(), monotone ? "yes" : "no", densities.c_str(), density_change, improvement);
  return o;
}

Outcome extrapolation() {
  const auto t0 = Clock::now();
  synth::ScenarioConfig sc;
  sc.rings = 3;
  sc.n_radars = 15;
  sc.seasons = {2013, 2014, 2015, 2016, 2017};
  sc.seed = 5;
  const synth::Dataset data = synth::generate(sc);
  eval::CvConfig cv;
  cv.folds = 5;
  cv.train_seasons = {2013, 2014, 2015, 2016};
  cv.test_seasons = {2017};
  cv.seed = 5;
  train::TrainConfig tc = desk_train(0.1);
  tc.validation_season = 2016;
  tc.max_epochs = 24;
  tc.k_every = 1;
  tc.stride = 6;
  double mean[2] = {NAN, NAN};
  double held[2] = {NAN, NAN};
  const model::FluxScheme schemes[2] = {model::FluxScheme::upwind, model::FluxScheme::none};
  for (int v = 0; v < 2; ++v) {
    const auto t1 = Clock::now();
    const eval::CvResult r = eval::cross_validate(data, desk_model(schemes[v]), tc, cv);
    mean[v] = r.mean_relative_change.value_or(NAN);
    held[v] = r.held_out.rmse.value_or(NAN);
    std::fprintf(stderr, "  %s: mean relative change %.4f, pooled held-out rmse %.3f, %.0f s\n",
                 model::to_string(schemes[v]).c_str(), mean[v], held[v], seconds_since(t1));
  }
  Outcome o;
  o.pass = std::isfinite(mean[0]) && std::isfinite(mean[1]) && mean[0] < mean[1];
  o.detail = fmt("5-fold CV on %d cells, %d radars: mean relative rmse change full %.4f vs flux-disabled %.4f "
                 "(held-out rmse %.2f vs %.2f); %.0f s",
                 data.tess.num_cells(), data.net.size(), mean[0], mean[1], held[0], held[1], seconds_since(t0));
  return o;
}

Outcome curriculum() {
  const auto t0 = Clock::now();
  train::TrainConfig defaults;
  bool contract = train::curriculum_horizon(0, defaults) == 2;
  bool reached = false;
  for (int e = 0, prev = 0; e < 1000; ++e) {
    const int k = train::curriculum_horizon(e, defaults);
    contract = contract && k >= prev && k <= 48;
    reached = reached || k == 48;
    prev = k;
  }
  contract = contract && reached;

  nlohmann::json j = nlohmann::json::parse(io::read_text(fs::path(BIRDFLUX_SOURCE_DIR) / "configs" / "smoke.json"));
  j.erase("paths");
  const cli::RunConfig smoke = cli::run_config_from_json(j);
  const synth::Dataset data = synth::generate(smoke.scenario);
  const model::Model model = train::make_model(data, smoke.model);
  std::vector<int> labels;
  for (int l : smoke.eval.train_seasons)
    if (l != smoke.train.validation_season) labels.push_back(l);
  int wins = 0;
  std::string pairs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    train::TrainConfig with = smoke.train;
    with.seed = seed;
    with.max_epochs = 24;
    with.stride = 6;
    train::TrainConfig fixed = with;
    fixed.curriculum = false;
    const double a = train_on(data, model, labels, with.validation_season, with, seed).fit.best_validation;
    const double b = train_on(data, model, labels, fixed.validation_season, fixed, seed).fit.best_validation;
    wins += a < b;
    pairs += fmt("%.3g/%.3g ", a, b);
  }
  Outcome o;
  o.pass = contract && wins >= 3;
  o.detail = fmt("horizon contract %s; 48-step validation loss curriculum/fixed per seed: %s-> curriculum lower "
                 "in %d of 5; %.0f s",
                 contract ? "holds" : "broken", pairs.c_str(), wins, seconds_since(t0));
  return o;
}

synth::Season fixture_season(int days, int radars) {
  synth::Season s;
  for (int t = 0; t < days * 24; ++t) {
    s.times.push_back(fmt("t%d", t));
    s.hour_of_day.push_back(t % 24);
    s.day.push_back(t % 24 >= 6 && t % 24 < 19);
    s.frames.emplace_back(radars);
  }
  return s;
}

Outcome protocol() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  // 8 days: evaluation windows start at hours 13, 37, 61 and 85. The 5-day seasons
  // hold one window (hours 13-108, 960 radar-hours) with exactly 96 or 97 missing.
  synth::Season full = fixture_season(8, 10);
  synth::Season at_limit = fixture_season(5, 10);
  synth::Season over = fixture_season(5, 10);
  for (int n = 0; n < 96; ++n) at_limit.frames[13 + n].valid[n % 10] = 0;
  for (int n = 0; n < 97; ++n) over.frames[13 + n % 96].valid[(n + n / 96) % 10] = 0;
  const std::vector<const synth::Season*> seasons{&full, &at_limit, &over};
  const auto windows = train::make_sequences(seasons, 24, 72, train::WindowMode::evaluation);
  int per_season[3] = {0, 0, 0};
  for (const auto& w : windows) {
    ++per_season[w.season];
    expect(seasons[w.season]->hour_of_day[w.start] == 13, "window not starting at 13:00");
    expect(w.context == 24 && w.horizon == 72 && w.length() == 96, "window shape");
  }
  expect(per_season[0] == 4, fmt("expected 4 windows in 8 days, got %d", per_season[0]));
  expect(per_season[1] == 1, "window with exactly 10% missing was dropped");
  expect(per_season[2] == 0, "window with 10.1% missing was kept");

  // Velocity metrics count only observed densities strictly above 5.
  eval::ForecastSet vs;
  SensorFrame obs(5), pred(5);
  obs.density = {3.0, 5.0, 5.5, 40.0, 100.0};
  obs.vx = {1, 1, 1, 1, std::nan("")};
  pred.vx = {2, 2, 2, 2, 2};
  vs.pred.push_back(pred);
  vs.obs.push_back(obs);
  vs.daytime.push_back(0);
  vs.lead.push_back(1);
  const auto vm = eval::velocity_metrics(vs);
  expect(vm.count == 2, fmt("velocity filter counted %ld", vm.count));
  expect(vm.speed_rmse && std::abs(*vm.speed_rmse - 1.0) < 1e-12, "velocity speed error");

  // Daytime hours carry an error of 100 and must not enter any metric or the loss.
  eval::ForecastSet ds;
  for (int h = 0; h < 24; ++h) {
    SensorFrame o(3), p(3);
    const bool day = h >= 6 && h < 19;
    for (int m = 0; m < 3; ++m) {
      o.density[m] = 200.0;
      p.density[m] = day ? 300.0 : 202.0;
    }
    ds.obs.push_back(o);
    ds.pred.push_back(p);
    ds.daytime.push_back(day);
    ds.lead.push_back(h + 1);
  }
  const auto report = eval::binned_reports(ds, {"A", "B", "C"}, 250.0);
  expect(report.count == 11 * 3, fmt("daytime mask counted %ld", report.count));
  expect(report.rmse && std::abs(*report.rmse - 2.0) < 1e-12, "daytime error leaked into rmse");
  expect(report.precision == std::nullopt, "daytime event leaked into precision");
  ForecastRun run;
  std::vector<SensorFrame> targets;
  std::vector<char> daytime;
  CellToRadarMap c2r;
  c2r.num_cells = 3;
  for (int m = 0; m < 3; ++m) c2r.radars.push_back({{m, 1.0}});
  for (int h = 0; h < 24; ++h) {
    StepRecord st;
    st.density = ds.pred[h].density;
    st.vx = st.vy = std::vector<double>(3, 0.0);
    run.steps.push_back(st);
    targets.push_back(ds.obs[h]);
    daytime.push_back(ds.daytime[h]);
  }
  const auto l = train::loss(run, targets, daytime, c2r, 0.1, model::Scaling{1.0, 1.0});
  expect(std::abs(l.rho - 4.0 * 11 / 24) < 1e-12, fmt("loss daytime mask gave %.6f", l.rho));

  Outcome o;
  o.pass = failures.empty();
  std::string joined;
  for (const auto& f : failures) joined += f + "; ";
  o.detail = o.pass ? "13:00 starts with 24+72 h windows (4 of 4), >10% missing dropped (10.1% out, 10.0% kept), "
                      "velocity filter rho>5 (2 of 5), daytime excluded from metrics and loss (33 of 72)"
                    : joined;
  return o;
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) {
    why = "file lists differ";
    return false;
  }
  for (const auto& f : fa)
    if (io::read_text(a / f) != io::read_text(b / f)) {
      why = f.generic_string() + " differs";
      return false;
    }
  return true;
}

Outcome determinism() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / "birdflux_acceptance_determinism";
  fs::remove_all(root);
  const nlohmann::json cfg = {
      {"seed", 11},
      {"scenario", {{"seasons", {2013, 2014, 2015}}, {"days", 4}}},
      {"model", {{"hidden", 6}, {"gat_hidden", {4, 4}}, {"mlp_hidden", 6}, {"knn", 3}, {"context", 8}, {"dropout", 0.1}}},
      {"train",
       {{"max_epochs", 2}, {"context", 8}, {"k_max", 8}, {"k_every", 1}, {"stride", 6}, {"lr", 0.01},
        {"validation_season", 2014}}},
      {"eval", {{"train_seasons", {2013, 2014}}, {"test_seasons", {2015}}, {"horizon", 24}, {"folds", 3}}},
      {"paths",
       {{"data", "data"},
        {"checkpoint", "train/checkpoint.json"},
        {"predictions", "forecast/predictions.csv"},
        {"truth", "forecast/truth.csv"}}}};
  const std::vector<std::string> commands{"tessellate", "simulate", "train", "forecast", "evaluate", "cv"};
  const std::vector<std::string> outs{"tess", "data", "train", "forecast", "eval", "cv"};
  const fs::path cwd = fs::current_path();
  std::string failure;
  for (const char* run : {"a", "b"}) {
    fs::create_directories(root / run);
    fs::current_path(root / run);
    io::write_text("config.json", cfg.dump(2));
    for (std::size_t c = 0; c < commands.size() && failure.empty(); ++c) {
      std::ostringstream out, err;
      if (cli::run({commands[c], "--config", "config.json", "--out", outs[c]}, out, err) != 0)
        failure = commands[c] + " failed: " + err.str();
    }
    fs::current_path(cwd);
  }
  Outcome o;
  if (!failure.empty()) return {false, failure};
  std::string why;
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a"))
    if (e.is_regular_file()) ++files;
  o.pass = same_tree(root / "a", root / "b", why);
  o.detail = o.pass ? fmt("all six commands rerun with the same config and seed: %d files byte-identical; %.1f s",
                          files, seconds_since(t0))
                    : why;
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int a = 1; a < argc; ++a) {
    if (std::string(argv[a]) == "--only" && a + 1 < argc) {
      std::stringstream ss(argv[++a]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    }
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"conservation", conservation},     {"gradients", gradients},
      {"interpolation", interpolation},   {"discretization", discretization},
      {"oracle recovery", oracle_recovery}, {"lambda trade-off", lambda_tradeoff},
      {"extrapolation", extrapolation},   {"curriculum", curriculum},
      {"protocol fidelity", protocol},    {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
