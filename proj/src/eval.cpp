#include "birdflux/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "birdflux/errors.hpp"
#include "birdflux/json_util.hpp"

namespace birdflux::eval {

namespace {

nlohmann::ordered_json metric_json(const Metric& m) { return m ? nlohmann::ordered_json(*m) : nlohmann::ordered_json(); }

Metric root_mean(double sum_sq, long n) { return n > 0 ? Metric(std::sqrt(sum_sq / n)) : std::nullopt; }

Metric mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

bool velocity_counted(const ForecastSet& s, int t, int m, double min_density) {
  const SensorFrame& o = s.obs[t];
  const SensorFrame& p = s.pred[t];
  return counted(s, t, m) && o.density[m] > min_density && std::isfinite(o.vx[m]) && std::isfinite(o.vy[m]) &&
         std::isfinite(p.vx[m]) && std::isfinite(p.vy[m]);
}

double heading_deg(double vx, double vy) { return std::atan2(vy, vx) * 180.0 / std::numbers::pi; }

}  // namespace

void ForecastSet::append(const ForecastSet& other) {
  pred.insert(pred.end(), other.pred.begin(), other.pred.end());
  obs.insert(obs.end(), other.obs.begin(), other.obs.end());
  daytime.insert(daytime.end(), other.daytime.begin(), other.daytime.end());
  lead.insert(lead.end(), other.lead.begin(), other.lead.end());
}

bool counted(const ForecastSet& s, int t, int m) {
  return !s.daytime[t] && s.obs[t].valid[m] && std::isfinite(s.obs[t].density[m]) && std::isfinite(s.pred[t].density[m]);
}

Metric rmse(const ForecastSet& s) {
  double sum = 0.0;
  long n = 0;
  for (int t = 0; t < s.size(); ++t)
    for (int m = 0; m < s.obs[t].size(); ++m) {
      if (!counted(s, t, m)) continue;
      const double e = s.pred[t].density[m] - s.obs[t].density[m];
      sum += e * e;
      ++n;
    }
  return root_mean(sum, n);
}

PrecisionRecall precision_recall(const ForecastSet& s, double threshold) {
  long tp = 0, fp = 0, fn = 0;
  for (int t = 0; t < s.size(); ++t)
    for (int m = 0; m < s.obs[t].size(); ++m) {
      if (!counted(s, t, m)) continue;
      const bool p = s.pred[t].density[m] > threshold;
      const bool o = s.obs[t].density[m] > threshold;
      tp += p && o;
      fp += p && !o;
      fn += !p && o;
    }
  PrecisionRecall r;
  if (tp + fp > 0) r.precision = static_cast<double>(tp) / (tp + fp);
  if (tp + fn > 0) r.recall = static_cast<double>(tp) / (tp + fn);
  return r;
}

double heading_difference(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

VelocityMetrics velocity_metrics(const ForecastSet& s, double min_density) {
  double sq = 0.0, dir = 0.0;
  VelocityMetrics out;
  for (int t = 0; t < s.size(); ++t)
    for (int m = 0; m < s.obs[t].size(); ++m) {
      if (!velocity_counted(s, t, m, min_density)) continue;
      const double so = std::hypot(s.obs[t].vx[m], s.obs[t].vy[m]);
      const double sp = std::hypot(s.pred[t].vx[m], s.pred[t].vy[m]);
      sq += (sp - so) * (sp - so);
      dir += heading_difference(heading_deg(s.pred[t].vx[m], s.pred[t].vy[m]), heading_deg(s.obs[t].vx[m], s.obs[t].vy[m]));
      ++out.count;
    }
  out.speed_rmse = root_mean(sq, out.count);
  if (out.count) out.direction_error = dir / out.count;
  return out;
}

HistoricalAverage::HistoricalAverage(const std::vector<const synth::Season*>& seasons, int num_radars, int window_days,
                                     double min_density)
    : num_radars_(num_radars), window_(window_days) {
  if (seasons.empty()) throw DataError("historical average needs at least one season");
  if (window_days < 0) throw ConfigError("smoothing window must be >= 0");
  for (const synth::Season* s : seasons) days_ = std::max(days_, (s->hours() + 23) / 24);
  std::vector<Accumulator> raw(static_cast<std::size_t>(days_) * 24 * num_radars);
  hour_mean_.resize(24 * num_radars);
  radar_mean_.resize(num_radars);
  auto add = [&](Accumulator& a, const SensorFrame& f, int m) {
    a.rho += f.density[m];
    ++a.n_rho;
    if (f.density[m] > min_density && std::isfinite(f.vx[m]) && std::isfinite(f.vy[m])) {
      a.vx += f.vx[m];
      a.vy += f.vy[m];
      ++a.n_v;
    }
  };
  for (const synth::Season* s : seasons) {
    for (int t = 0; t < s->hours(); ++t) {
      const SensorFrame& f = s->frames[t];
      if (f.size() != num_radars) throw DataError("season frames do not match the radar count");
      const int day = t / 24, hour = s->hour_of_day[t];
      for (int m = 0; m < num_radars; ++m) {
        if (!f.valid[m] || !std::isfinite(f.density[m])) continue;
        add(raw[(static_cast<std::size_t>(day) * 24 + hour) * num_radars + m], f, m);
        add(hour_mean_[hour * num_radars + m], f, m);
        add(radar_mean_[m], f, m);
      }
    }
  }
  cells_.resize(raw.size());
  for (int d = 0; d < days_; ++d)
    for (int h = 0; h < 24; ++h)
      for (int m = 0; m < num_radars; ++m) {
        Accumulator& out = cells_[(static_cast<std::size_t>(d) * 24 + h) * num_radars + m];
        for (int e = std::max(0, d - window_); e <= std::min(days_ - 1, d + window_); ++e) {
          const Accumulator& a = raw[(static_cast<std::size_t>(e) * 24 + h) * num_radars + m];
          out.rho += a.rho;
          out.vx += a.vx;
          out.vy += a.vy;
          out.n_rho += a.n_rho;
          out.n_v += a.n_v;
        }
      }
}

SensorFrame HistoricalAverage::predict(int day, int hour) const {
  if (hour < 0 || hour > 23) throw ConfigError("hour of day out of range");
  SensorFrame f(num_radars_);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int m = 0; m < num_radars_; ++m) {
    const Accumulator* chain[3] = {nullptr, &hour_mean_[hour * num_radars_ + m], &radar_mean_[m]};
    if (day >= 0 && day < days_) chain[0] = &cells_[(static_cast<std::size_t>(day) * 24 + hour) * num_radars_ + m];
    f.density[m] = nan;
    f.vx[m] = f.vy[m] = nan;
    for (const Accumulator* a : chain)
      if (a && a->n_rho > 0) {
        f.density[m] = a->rho / a->n_rho;
        break;
      }
    for (const Accumulator* a : chain)
      if (a && a->n_v > 0) {
        f.vx[m] = a->vx / a->n_v;
        f.vy[m] = a->vy / a->n_v;
        break;
      }
    if (!std::isfinite(f.density[m])) f.valid[m] = 0;
  }
  return f;
}

std::vector<SensorFrame> HistoricalAverage::predict_range(int start, int count) const {
  std::vector<SensorFrame> out;
  for (int t = start; t < start + count; ++t) out.push_back(predict(t / 24, t % 24));
  return out;
}

MetricReport binned_reports(const ForecastSet& s, const std::vector<std::string>& radar_ids, double threshold) {
  MetricReport r;
  r.threshold = threshold;
  r.rmse = rmse(s);
  const PrecisionRecall pr = precision_recall(s, threshold);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.velocity = velocity_metrics(s);
  r.radar_ids = radar_ids;

  std::vector<double> observed;
  for (int t = 0; t < s.size(); ++t)
    for (int m = 0; m < s.obs[t].size(); ++m)
      if (counted(s, t, m)) observed.push_back(s.obs[t].density[m]);
  r.count = static_cast<long>(observed.size());

  r.horizon_bins = {{"1-24h", 1, 24, 0, {}}, {"25-48h", 25, 48, 0, {}}, {"49-72h", 49, 72, 0, {}}};
  double q1 = 0.0, q2 = 0.0;
  if (!observed.empty()) {
    std::vector<double> sorted = observed;
    std::sort(sorted.begin(), sorted.end());
    q1 = sorted[(sorted.size() - 1) / 3];
    q2 = sorted[2 * (sorted.size() - 1) / 3];
    r.density_bins = {{"low", sorted.front(), q1, 0, {}}, {"mid", q1, q2, 0, {}}, {"high", q2, sorted.back(), 0, {}}};
  }
  std::vector<double> h_sq(3, 0.0), d_sq(3, 0.0);
  const int radars = static_cast<int>(radar_ids.size());
  std::vector<double> m_sq(radars, 0.0);
  std::vector<long> m_n(radars, 0);
  for (int t = 0; t < s.size(); ++t)
    for (int m = 0; m < s.obs[t].size(); ++m) {
      if (!counted(s, t, m)) continue;
      const double o = s.obs[t].density[m];
      const double e2 = (s.pred[t].density[m] - o) * (s.pred[t].density[m] - o);
      const int hb = std::clamp((s.lead[t] - 1) / 24, 0, 2);
      h_sq[hb] += e2;
      ++r.horizon_bins[hb].count;
      const int db = o <= q1 ? 0 : (o <= q2 ? 1 : 2);
      d_sq[db] += e2;
      ++r.density_bins[db].count;
      if (m < radars) {
        m_sq[m] += e2;
        ++m_n[m];
      }
    }
  for (int b = 0; b < 3; ++b) r.horizon_bins[b].rmse = root_mean(h_sq[b], r.horizon_bins[b].count);
  for (std::size_t b = 0; b < r.density_bins.size(); ++b) r.density_bins[b].rmse = root_mean(d_sq[b], r.density_bins[b].count);
  for (int m = 0; m < radars; ++m) r.radar_rmse.push_back(root_mean(m_sq[m], m_n[m]));
  return r;
}

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["rmse"] = metric_json(r.rmse);
  j["precision"] = metric_json(r.precision);
  j["recall"] = metric_json(r.recall);
  j["threshold"] = r.threshold;
  j["count"] = r.count;
  j["speed_rmse"] = metric_json(r.velocity.speed_rmse);
  j["direction_error_deg"] = metric_json(r.velocity.direction_error);
  j["velocity_count"] = r.velocity.count;
  auto bins = [](const std::vector<Bin>& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const Bin& b : v) {
      nlohmann::ordered_json e;
      e["label"] = b.label;
      e["lo"] = b.lo;
      e["hi"] = b.hi;
      e["count"] = b.count;
      e["rmse"] = metric_json(b.rmse);
      a.push_back(e);
    }
    return a;
  };
  j["horizon_bins"] = bins(r.horizon_bins);
  j["density_bins"] = bins(r.density_bins);
  nlohmann::ordered_json radars;
  for (std::size_t m = 0; m < r.radar_ids.size(); ++m) radars[r.radar_ids[m]] = metric_json(r.radar_rmse[m]);
  j["radar_rmse"] = radars;
  return j;
}

std::string radar_table_csv(const MetricReport& r) {
  std::string out = "radar_id,rmse\n";
  char buf[64];
  for (std::size_t m = 0; m < r.radar_ids.size(); ++m) {
    if (r.radar_rmse[m]) {
      std::snprintf(buf, sizeof buf, "%.9g", *r.radar_rmse[m]);
      out += r.radar_ids[m] + "," + buf + "\n";
    } else {
      out += r.radar_ids[m] + ",\n";
    }
  }
  return out;
}

std::vector<Metric> relative_rmse_change(const std::vector<Metric>& held_out,
                                         const std::vector<std::vector<double>>& trained_on) {
  if (held_out.size() != trained_on.size()) throw DataError("held-out and trained-on results differ in radar count");
  std::vector<Metric> out(held_out.size());
  for (std::size_t m = 0; m < held_out.size(); ++m) {
    const Metric in = mean_of(trained_on[m]);
    if (!held_out[m] || !in || *in == 0.0) continue;
    out[m] = (*held_out[m] - *in) / *in;
  }
  return out;
}

std::vector<const synth::Season*> seasons_by_label(const synth::Dataset& data, const std::vector<int>& labels) {
  std::vector<const synth::Season*> out;
  for (int l : labels) out.push_back(&data.season(l));
  return out;
}

ForecastSet forecast_windows(const model::Model& model, const nets::ParamSet& params, const synth::Dataset& data,
                             const std::vector<int>& season_labels, const std::vector<int>& input_radars, int context,
                             int horizon, double max_missing) {
  const auto seasons = seasons_by_label(data, season_labels);
  const auto seqs = train::make_sequences(seasons, context, horizon, train::WindowMode::evaluation, 1, max_missing);
  const auto examples = train::make_examples(model, data.net, input_radars, seasons, seqs, model.config().knn);
  const CellToRadarMap c2r = build_cell_to_radar(data.tess, data.net);
  ForecastSet out;
  for (const train::Example& ex : examples) {
    const ForecastRun run = model.predict(params, ex.input, horizon);
    const synth::Season& season = *seasons[ex.seq.season];
    for (int k = 0; k < horizon; ++k) {
      const int t = ex.seq.t0() + 1 + k;
      CellFields cells(model.num_cells());
      cells.density = run.steps[k].density;
      cells.vx = run.steps[k].vx;
      cells.vy = run.steps[k].vy;
      out.pred.push_back(observe(c2r, cells));
      out.obs.push_back(season.frames[t]);
      out.daytime.push_back(season.day[t]);
      out.lead.push_back(k + 1);
    }
  }
  return out;
}

ForecastSet baseline_windows(const HistoricalAverage& ha, const synth::Dataset& data,
                             const std::vector<int>& season_labels, int context, int horizon, double max_missing) {
  const auto seasons = seasons_by_label(data, season_labels);
  const auto seqs = train::make_sequences(seasons, context, horizon, train::WindowMode::evaluation, 1, max_missing);
  ForecastSet out;
  for (const train::Sequence& seq : seqs) {
    const synth::Season& season = *seasons[seq.season];
    for (int k = 0; k < horizon; ++k) {
      const int t = seq.t0() + 1 + k;
      out.pred.push_back(ha.predict(t / 24, season.hour_of_day[t]));
      out.obs.push_back(season.frames[t]);
      out.daytime.push_back(season.day[t]);
      out.lead.push_back(k + 1);
    }
  }
  return out;
}

nlohmann::ordered_json to_json(const CvConfig& c) {
  nlohmann::ordered_json j;
  j["folds"] = c.folds;
  j["train_seasons"] = c.train_seasons;
  j["test_seasons"] = c.test_seasons;
  j["seed"] = c.seed;
  return j;
}

CvConfig cv_config_from_json(const nlohmann::json& j, CvConfig c) {
  ObjectReader r(j, "cv");
  r.read("folds", c.folds);
  r.read("train_seasons", c.train_seasons);
  r.read("test_seasons", c.test_seasons);
  r.read("seed", c.seed);
  r.finish();
  return c;
}

CvResult cross_validate(const synth::Dataset& data, const model::ModelConfig& model_config,
                        const train::TrainConfig& tc, const CvConfig& cv, const FoldCallback& on_fold) {
  tc.validate();
  const int radars = data.net.size();
  const auto folds = train::spatial_cv_split(data.net.ids, cv.folds, cv.seed);
  std::vector<int> train_labels;
  for (int l : cv.train_seasons)
    if (l != tc.validation_season) train_labels.push_back(l);
  const auto train_seasons = seasons_by_label(data, train_labels);
  std::vector<const synth::Season*> val_seasons;
  for (const synth::Season& s : data.seasons)
    if (s.label == tc.validation_season) val_seasons.push_back(&s);

  CvResult result;
  std::vector<Metric> held(radars);
  std::vector<std::vector<double>> trained(radars);
  ForecastSet pooled;
  for (int f = 0; f < static_cast<int>(folds.size()); ++f) {
    const train::Fold& fold = folds[f];
    const model::Model model = train::make_model(data, model_config);
    nets::ParamSet params;
    Rng init = make_stream(tc.seed, "init", static_cast<std::uint64_t>(f));
    model.init(params, init);
    train::FitData fd;
    const auto seqs = train::make_sequences(train_seasons, tc.context, tc.k_max, train::WindowMode::training, tc.stride,
                                            tc.max_missing);
    fd.train = train::make_examples(model, data.net, fold.train, train_seasons, seqs, model_config.knn);
    if (!val_seasons.empty()) {
      const auto vseqs = train::make_sequences(val_seasons, tc.context, tc.k_max, train::WindowMode::training,
                                               tc.validation_stride, tc.max_missing);
      fd.validation = train::make_examples(model, data.net, fold.train, val_seasons, vseqs, model_config.knn);
    }
    fd.c2r = build_cell_to_radar(data.tess, data.net.subset(fold.train));
    const train::FitResult fit = train::fit(model, params, fd, tc);

    ForecastSet fs = forecast_windows(model, fit.best, data, cv.test_seasons, fold.train, tc.context, 72, tc.max_missing);
    const MetricReport report = binned_reports(fs, data.net.ids);
    FoldResult fr;
    fr.fold = fold;
    fr.radar_rmse = report.radar_rmse;
    fr.best_epoch = fit.best_epoch;
    std::vector<char> is_test(radars, 0);
    for (int m : fold.test) is_test[m] = 1;
    double in_sq = 0.0, out_sq = 0.0;
    long in_n = 0, out_n = 0;
    for (int t = 0; t < fs.size(); ++t)
      for (int m = 0; m < radars; ++m) {
        if (!counted(fs, t, m)) continue;
        const double e = fs.pred[t].density[m] - fs.obs[t].density[m];
        (is_test[m] ? out_sq : in_sq) += e * e;
        ++(is_test[m] ? out_n : in_n);
      }
    fr.held_out_rmse = root_mean(out_sq, out_n);
    fr.trained_on_rmse = root_mean(in_sq, in_n);
    for (int m = 0; m < radars; ++m) {
      if (is_test[m]) {
        held[m] = report.radar_rmse[m];
      } else if (report.radar_rmse[m]) {
        trained[m].push_back(*report.radar_rmse[m]);
      }
    }
    for (SensorFrame& frame : fs.obs)
      for (int m = 0; m < radars; ++m)
        if (!is_test[m]) frame.valid[m] = 0;
    pooled.append(fs);
    if (on_fold) on_fold(f, fr);
    result.folds.push_back(std::move(fr));
  }
  result.relative_change = relative_rmse_change(held, trained);
  std::vector<double> present;
  for (const Metric& m : result.relative_change)
    if (m) present.push_back(*m);
  result.mean_relative_change = mean_of(present);
  result.held_out = binned_reports(pooled, data.net.ids);
  return result;
}

nlohmann::ordered_json to_json(const CvResult& r, const std::vector<std::string>& radar_ids) {
  nlohmann::ordered_json j;
  j["mean_relative_change"] = metric_json(r.mean_relative_change);
  nlohmann::ordered_json rel;
  for (std::size_t m = 0; m < radar_ids.size() && m < r.relative_change.size(); ++m)
    rel[radar_ids[m]] = metric_json(r.relative_change[m]);
  j["relative_change"] = rel;
  j["folds"] = nlohmann::ordered_json::array();
  for (const FoldResult& f : r.folds) {
    nlohmann::ordered_json e;
    nlohmann::ordered_json test = nlohmann::ordered_json::array();
    for (int m : f.fold.test) test.push_back(radar_ids[m]);
    e["test_radars"] = test;
    e["held_out_rmse"] = metric_json(f.held_out_rmse);
    e["trained_on_rmse"] = metric_json(f.trained_on_rmse);
    e["best_epoch"] = f.best_epoch;
    j["folds"].push_back(e);
  }
  j["held_out"] = to_json(r.held_out);
  return j;
}

}  // namespace birdflux::eval
