#include "birdflux/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <CLI11.hpp>

#include "birdflux/errors.hpp"
#include "birdflux/io.hpp"
#include "birdflux/json_util.hpp"

namespace birdflux::cli {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kCheckpointFormat = "birdflux-checkpoint-1";

nlohmann::ordered_json without_seed(nlohmann::ordered_json j) {
  j.erase("seed");
  return j;
}

Vec2 read_point(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(where + " must be an [x, y] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

TessellationSpec tessellation_from_json(const nlohmann::json& j, TessellationSpec t) {
  ObjectReader r(j, "tessellation");
  r.read("kind", t.kind);
  r.read("cell_diameter_km", t.cell_diameter_km);
  r.read("rings", t.rings);
  if (r.has("center")) t.center = read_point(r.child("center"), "tessellation.center");
  if (r.has("domain")) {
    ObjectReader d(r.child("domain"), "tessellation.domain");
    d.read("x_min", t.domain.x_min);
    d.read("x_max", t.domain.x_max);
    d.read("y_min", t.domain.y_min);
    d.read("y_max", t.domain.y_max);
    d.finish();
  }
  if (r.has("seeds")) {
    const nlohmann::json& s = r.child("seeds");
    if (!s.is_array()) throw ConfigError("tessellation.seeds must be an array of [x, y] pairs");
    t.seeds.clear();
    for (const auto& p : s) t.seeds.push_back(read_point(p, "tessellation.seeds entry"));
  }
  r.read("buffer_km", t.buffer_km);
  r.read("n_dummy", t.n_dummy);
  r.finish();
  if (t.kind != "hex_patch" && t.kind != "hex_grid" && t.kind != "voronoi")
    throw ConfigError("tessellation.kind must be hex_patch, hex_grid or voronoi");
  if (!(t.cell_diameter_km > 0.0)) throw ConfigError("tessellation.cell_diameter_km must be positive");
  return t;
}

nlohmann::ordered_json to_json(const TessellationSpec& t) {
  nlohmann::ordered_json j;
  j["kind"] = t.kind;
  j["cell_diameter_km"] = t.cell_diameter_km;
  j["rings"] = t.rings;
  j["center"] = {t.center.x, t.center.y};
  j["domain"] = {{"x_min", t.domain.x_min}, {"x_max", t.domain.x_max}, {"y_min", t.domain.y_min}, {"y_max", t.domain.y_max}};
  nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
  for (const Vec2& p : t.seeds) seeds.push_back({p.x, p.y});
  j["seeds"] = seeds;
  j["buffer_km"] = t.buffer_km;
  j["n_dummy"] = t.n_dummy;
  return j;
}

EvalSpec eval_from_json(const nlohmann::json& j, EvalSpec e) {
  ObjectReader r(j, "eval");
  r.read("folds", e.folds);
  r.read("train_seasons", e.train_seasons);
  r.read("test_seasons", e.test_seasons);
  r.read("horizon", e.horizon);
  if (r.has("threshold")) {
    const nlohmann::json& t = r.child("threshold");
    if (t.is_null()) {
      e.threshold.reset();
    } else if (t.is_number()) {
      e.threshold = t.get<double>();
    } else {
      throw ConfigError("eval.threshold must be a number or null");
    }
  }
  r.read("ha_window", e.ha_window);
  r.read("min_velocity_density", e.min_velocity_density);
  r.finish();
  return e;
}

nlohmann::ordered_json to_json(const EvalSpec& e) {
  nlohmann::ordered_json j;
  j["folds"] = e.folds;
  j["train_seasons"] = e.train_seasons;
  j["test_seasons"] = e.test_seasons;
  j["horizon"] = e.horizon;
  j["threshold"] = e.threshold ? nlohmann::ordered_json(*e.threshold) : nlohmann::ordered_json();
  j["ha_window"] = e.ha_window;
  j["min_velocity_density"] = e.min_velocity_density;
  return j;
}

Paths paths_from_json(const nlohmann::json& j, Paths p) {
  ObjectReader r(j, "paths");
  r.read("data", p.data);
  r.read("checkpoint", p.checkpoint);
  r.read("predictions", p.predictions);
  r.read("truth", p.truth);
  r.finish();
  return p;
}

nlohmann::ordered_json to_json(const Paths& p) {
  return {{"data", p.data}, {"checkpoint", p.checkpoint}, {"predictions", p.predictions}, {"truth", p.truth}};
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

/// Adds every file as an output, writes the manifest and returns all paths.
std::vector<fs::path> finish(Manifest& m, const fs::path& out, std::vector<fs::path> files) {
  for (const fs::path& f : files) m.add_output(out, f);
  const fs::path path = out / kManifest;
  io::write_text(path, dump(m.to_json()));
  files.push_back(path);
  return files;
}

fs::path require_path(const std::string& value, const std::string& key) {
  if (value.empty()) throw ConfigError("this command needs " + key);
  if (!fs::exists(value)) throw DataError(key + " does not exist: " + value);
  return value;
}

void require_listed(const nlohmann::json& manifest, const fs::path& file) {
  const std::string name = file.filename().generic_string();
  if (!manifest.contains("outputs") || !manifest["outputs"].contains(name))
    throw DataError(file.generic_string() + " is not listed in its directory's manifest");
}

std::string link_of(const nlohmann::json& manifest, const std::string& key) {
  if (manifest.contains("links") && manifest["links"].contains(key)) return manifest["links"][key].get<std::string>();
  return {};
}

struct LoadedData {
  synth::Dataset data;
  fs::path dir;
  std::string tessellation_sha256;
};

LoadedData load_data(const RunConfig& c) {
  LoadedData out;
  out.dir = require_path(c.paths.data, "paths.data");
  const nlohmann::json manifest = verify_manifest(out.dir);
  require_listed(manifest, out.dir / "tessellation.json");
  out.data = io::read_dataset(out.dir);
  out.tessellation_sha256 = file_sha256(out.dir / "tessellation.json");
  return out;
}

struct LoadedCheckpoint {
  model::ModelConfig config;
  nets::ParamSet params;
  std::string sha256;
};

LoadedCheckpoint load_checkpoint(const RunConfig& c, const LoadedData& data) {
  const fs::path path = require_path(c.paths.checkpoint, "paths.checkpoint");
  const nlohmann::json manifest = verify_manifest(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  require_listed(manifest, path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint is not valid JSON: " + std::string(e.what()));
  }
  if (j.value("format", "") != kCheckpointFormat) throw DataError("unrecognized checkpoint format");
  const std::string tess = j.value("tessellation_sha256", "");
  if (tess != data.tessellation_sha256)
    throw DataError("checkpoint was trained on a different tessellation (" + tess + " vs " + data.tessellation_sha256 + ")");
  LoadedCheckpoint out;
  out.config = model::model_config_from_json(j.at("model"));
  out.params = nets::params_from_json(j.at("params"));
  out.sha256 = file_sha256(path);
  return out;
}

std::vector<int> all_radars(const SensorNetwork& net) {
  std::vector<int> r(net.size());
  for (int m = 0; m < net.size(); ++m) r[m] = m;
  return r;
}

std::string rows_header() { return "window,season,hour,time,lead,daytime,radar_id,density,vx,vy,valid\n"; }

void append_rows(std::string& out, int window, int season, int hour, const std::string& time, int lead, bool daytime,
                 const SensorNetwork& net, const SensorFrame& f) {
  const std::string prefix = std::to_string(window) + "," + std::to_string(season) + "," + std::to_string(hour) + "," +
                             time + "," + std::to_string(lead) + "," + (daytime ? "1" : "0") + ",";
  for (int m = 0; m < f.size(); ++m) {
    out += prefix + net.ids[m] + "," + io::format_number(f.density[m]) + "," + io::format_number(f.vx[m]) + "," +
           io::format_number(f.vy[m]) + "," + (f.valid[m] ? "1" : "0") + "\n";
  }
}

double nighttime_quantile(const eval::ForecastSet& s, double q) {
  std::vector<double> v;
  for (int t = 0; t < s.size(); ++t)
    for (int m = 0; m < s.obs[t].size(); ++m)
      if (!s.daytime[t] && s.obs[t].valid[m] && std::isfinite(s.obs[t].density[m])) v.push_back(s.obs[t].density[m]);
  if (v.empty()) return 150.0;
  std::sort(v.begin(), v.end());
  return v[static_cast<std::size_t>(std::ceil(q * v.size())) - 1];
}

std::string pairs_csv(const eval::ForecastSet& s, const RadarRows& rows, double min_density) {
  std::string out = "window,lead,radar_id,obs_density,pred_density,obs_speed,pred_speed,obs_heading_deg,pred_heading_deg\n";
  auto heading = [](double vx, double vy) { return std::atan2(vy, vx) * 180.0 / M_PI; };
  for (int t = 0; t < s.size(); ++t)
    for (int m = 0; m < s.obs[t].size(); ++m) {
      if (!eval::counted(s, t, m)) continue;
      const SensorFrame& o = s.obs[t];
      const SensorFrame& p = s.pred[t];
      const bool vel = o.density[m] > min_density && std::isfinite(o.vx[m]) && std::isfinite(o.vy[m]) &&
                       std::isfinite(p.vx[m]) && std::isfinite(p.vy[m]);
      const double nan = std::nan("");
      out += std::to_string(rows.window[t]) + "," + std::to_string(rows.lead[t]) + "," + rows.radar_ids[m] + "," +
             io::format_number(o.density[m]) + "," + io::format_number(p.density[m]) + "," +
             io::format_number(vel ? std::hypot(o.vx[m], o.vy[m]) : nan) + "," +
             io::format_number(vel ? std::hypot(p.vx[m], p.vy[m]) : nan) + "," +
             io::format_number(vel ? heading(o.vx[m], o.vy[m]) : nan) + "," +
             io::format_number(vel ? heading(p.vx[m], p.vy[m]) : nan) + "\n";
    }
  return out;
}

struct VerifiedRows {
  RadarRows rows;
  std::string tessellation_sha256;
};

VerifiedRows load_rows(const std::string& value, const std::string& key, bool as_prediction) {
  const fs::path path = require_path(value, key);
  const fs::path dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  VerifiedRows out;
  if (fs::exists(dir / kManifest)) {
    const nlohmann::json manifest = verify_manifest(dir);
    require_listed(manifest, path);
    out.tessellation_sha256 = link_of(manifest, "tessellation_sha256");
  }
  out.rows = parse_radar_rows(io::read_text(path), as_prediction);
  return out;
}

}  // namespace

Tessellation TessellationSpec::build() const {
  if (kind == "hex_patch") return build_hex_patch(center, rings, cell_diameter_km);
  if (kind == "hex_grid") return build_hex_tessellation(domain, cell_diameter_km);
  if (kind == "voronoi") return build_voronoi_tessellation(seeds, buffer_km, n_dummy);
  throw ConfigError("unknown tessellation kind '" + kind + "'");
}

void RunConfig::validate() const {
  scenario.validate();
  model.validate();
  train.validate();
  if (train.context != model.context) throw ConfigError("train.context must equal model.context");
  if (eval.horizon < 1) throw ConfigError("eval.horizon must be >= 1");
  if (eval.folds < 2) throw ConfigError("eval.folds must be >= 2");
  if (eval.ha_window < 0) throw ConfigError("eval.ha_window must be >= 0");
  if (eval.train_seasons.empty() || eval.test_seasons.empty())
    throw ConfigError("eval needs training and test seasons");
}

eval::CvConfig RunConfig::cv() const {
  eval::CvConfig c;
  c.folds = eval.folds;
  c.train_seasons = eval.train_seasons;
  c.test_seasons = eval.test_seasons;
  c.seed = seed;
  return c;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  ObjectReader r(j, "config");
  RunConfig c;
  r.read("seed", c.seed);
  auto section = [&](const std::string& name) -> const nlohmann::json* {
    if (!r.has(name)) return nullptr;
    const nlohmann::json& s = r.child(name);
    if (s.is_object() && s.contains("seed")) throw ConfigError(name + ".seed is not allowed; set the top-level seed");
    return &s;
  };
  if (const auto* s = section("scenario")) c.scenario = synth::scenario_from_json(*s, c.scenario);
  if (const auto* s = section("tessellation")) c.tessellation = tessellation_from_json(*s, c.tessellation);
  if (const auto* s = section("model")) c.model = model::model_config_from_json(*s, c.model);
  if (const auto* s = section("train")) c.train = train::train_config_from_json(*s, c.train);
  if (const auto* s = section("eval")) c.eval = eval_from_json(*s, c.eval);
  if (const auto* s = section("paths")) c.paths = paths_from_json(*s, c.paths);
  r.finish();
  c.scenario.seed = c.seed;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["scenario"] = without_seed(synth::to_json(c.scenario));
  j["tessellation"] = to_json(c.tessellation);
  j["model"] = model::to_json(c.model);
  j["train"] = without_seed(train::to_json(c.train));
  j["eval"] = to_json(c.eval);
  j["paths"] = to_json(c.paths);
  return j;
}

void apply_override(nlohmann::json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("--set expects section.key=value");
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  std::vector<std::string> keys;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    keys.push_back(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (const auto& k : keys)
    if (k.empty()) throw ConfigError("malformed --set key '" + path + "'");
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  if (!j.is_object()) j = nlohmann::json::object();
  nlohmann::json* node = &j;
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    nlohmann::json& next = (*node)[keys[i]];
    if (next.is_null()) next = nlohmann::json::object();
    if (!next.is_object()) throw ConfigError("--set " + path + ": " + keys[i] + " is not a section");
    node = &next;
  }
  (*node)[keys.back()] = value;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    out += buf;
  }
  return out;
}

std::string file_sha256(const fs::path& path) { return sha256_hex(io::read_text(path)); }

void Manifest::add_input(const std::string& label, const fs::path& path) {
  inputs[label] = {{"path", path.generic_string()}, {"sha256", file_sha256(path)}};
}

void Manifest::add_output(const fs::path& dir, const fs::path& path) {
  outputs[path.lexically_relative(dir).generic_string()] = file_sha256(path);
}

nlohmann::ordered_json Manifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config"] = config;
  j["inputs"] = inputs;
  j["links"] = links;
  j["outputs"] = outputs;
  return j;
}

nlohmann::json verify_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifest;
  if (!fs::exists(path)) throw DataError("no manifest in " + dir.generic_string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unreadable manifest " + path.generic_string() + ": " + e.what());
  }
  if (!j.contains("outputs") || !j["outputs"].is_object()) throw DataError("manifest without outputs: " + path.generic_string());
  for (auto it = j["outputs"].begin(); it != j["outputs"].end(); ++it) {
    const fs::path file = dir / it.key();
    if (!fs::exists(file)) throw DataError("missing file listed in manifest: " + file.generic_string());
    if (file_sha256(file) != it.value().get<std::string>())
      throw DataError(file.generic_string() + " does not match the hash in its manifest");
  }
  return j;
}

RadarRows parse_radar_rows(std::string_view text, bool as_prediction) {
  const io::CsvTable t = io::parse_csv(text);
  const int c_window = t.column("window"), c_season = t.column("season"), c_hour = t.column("hour");
  const int c_time = t.column("time"), c_lead = t.column("lead"), c_day = t.column("daytime");
  const int c_id = t.column("radar_id"), c_rho = t.column("density"), c_vx = t.column("vx"), c_vy = t.column("vy");
  const int c_valid = t.column("valid");
  RadarRows out;
  std::size_t i = 0;
  while (i < t.rows.size()) {
    const auto& first = t.rows[i];
    const std::string key = first[c_window] + "/" + first[c_lead];
    std::vector<std::string> ids;
    SensorFrame f;
    for (; i < t.rows.size() && t.rows[i][c_window] + "/" + t.rows[i][c_lead] == key; ++i) {
      const auto& row = t.rows[i];
      ids.push_back(row[c_id]);
      f.density.push_back(io::parse_number(row[c_rho]));
      f.vx.push_back(io::parse_number(row[c_vx]));
      f.vy.push_back(io::parse_number(row[c_vy]));
      f.valid.push_back(row[c_valid] == "1");
    }
    if (out.radar_ids.empty()) out.radar_ids = ids;
    if (ids != out.radar_ids) throw DataError("radar rows are not in a consistent order at window/lead " + key);
    try {
      out.window.push_back(std::stoi(first[c_window]));
      out.season.push_back(std::stoi(first[c_season]));
      out.hour.push_back(std::stoi(first[c_hour]));
      out.lead.push_back(std::stoi(first[c_lead]));
    } catch (const std::exception&) {
      throw DataError("malformed integer field at window/lead " + key);
    }
    out.time.push_back(first[c_time]);
    out.set.daytime.push_back(first[c_day] == "1");
    out.set.lead.push_back(out.lead.back());
    (as_prediction ? out.set.pred : out.set.obs).push_back(std::move(f));
  }
  return out;
}

std::vector<fs::path> cmd_tessellate(const RunConfig& c, const fs::path& out) {
  const Tessellation tess = c.tessellation.build();
  const fs::path path = out / "tessellation.json";
  io::write_text(path, dump(to_json(tess)));
  Manifest m{"tessellate", to_json(c)};
  m.links["tessellation_sha256"] = file_sha256(path);
  return finish(m, out, {path});
}

std::vector<fs::path> cmd_simulate(const RunConfig& c, const fs::path& out) {
  const synth::Dataset data = synth::generate(c.scenario);
  std::vector<fs::path> files = io::write_dataset(data, out);
  Manifest m{"simulate", to_json(c)};
  m.links["tessellation_sha256"] = file_sha256(out / "tessellation.json");
  return finish(m, out, std::move(files));
}

std::vector<fs::path> cmd_train(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const LoadedData ld = load_data(c);
  const synth::Dataset& data = ld.data;
  const model::Model model = train::make_model(data, c.model);
  nets::ParamSet params;
  Rng init = make_stream(c.seed, "init");
  model.init(params, init);

  std::vector<int> labels;
  for (int l : c.eval.train_seasons)
    if (l != c.train.validation_season) labels.push_back(l);
  if (labels.empty()) throw ConfigError("no training seasons besides the validation season");
  const auto seasons = eval::seasons_by_label(data, labels);
  const std::vector<int> radars = all_radars(data.net);
  train::FitData fd;
  const auto seqs = train::make_sequences(seasons, c.train.context, c.train.k_max, train::WindowMode::training,
                                          c.train.stride, c.train.max_missing);
  fd.train = train::make_examples(model, data.net, radars, seasons, seqs, c.model.knn);
  for (const synth::Season& s : data.seasons)
    if (s.label == c.train.validation_season) {
      const std::vector<const synth::Season*> val{&s};
      const auto vseqs = train::make_sequences(val, c.train.context, c.train.k_max, train::WindowMode::training,
                                               c.train.validation_stride, c.train.max_missing);
      fd.validation = train::make_examples(model, data.net, radars, val, vseqs, c.model.knn);
    }
  if (fd.validation.empty()) log << "warning: no validation windows; keeping the last epoch\n";
  fd.c2r = build_cell_to_radar(data.tess, data.net);

  const train::FitResult fit = train::fit(model, params, fd, c.train, [&](const train::EpochLog& e) {
    log << "epoch " << e.epoch << " K=" << e.horizon << " loss=" << e.loss << " val=" << e.validation << "\n";
  });

  nlohmann::ordered_json ckpt;
  ckpt["format"] = kCheckpointFormat;
  ckpt["model"] = model::to_json(c.model);
  ckpt["decoder_input_order"] = model::Model::decoder_input_order();
  ckpt["config"] = to_json(c);
  ckpt["best_epoch"] = fit.best_epoch;
  ckpt["best_validation"] = std::isfinite(fit.best_validation) ? nlohmann::ordered_json(fit.best_validation)
                                                                 : nlohmann::ordered_json();
  ckpt["aborted"] = fit.aborted;
  ckpt["tessellation_sha256"] = ld.tessellation_sha256;
  ckpt["params"] = nets::params_to_json(fit.best);
  const fs::path ckpt_path = out / "checkpoint.json";
  io::write_text(ckpt_path, ckpt.dump() + "\n");

  std::string csv = train::log_csv_header();
  for (const train::EpochLog& e : fit.log) csv += train::log_csv_row(e);
  const fs::path log_path = out / "training_log.csv";
  io::write_text(log_path, csv);

  Manifest m{"train", to_json(c)};
  m.add_input("data_manifest", ld.dir / kManifest);
  m.links["tessellation_sha256"] = ld.tessellation_sha256;
  return finish(m, out, {ckpt_path, log_path});
}

std::vector<fs::path> cmd_forecast(const RunConfig& c, const fs::path& out) {
  const LoadedData ld = load_data(c);
  const synth::Dataset& data = ld.data;
  const LoadedCheckpoint ck = load_checkpoint(c, ld);
  const model::Model model = train::make_model(data, ck.config);
  const auto seasons = eval::seasons_by_label(data, c.eval.test_seasons);
  const auto seqs = train::make_sequences(seasons, ck.config.context, c.eval.horizon, train::WindowMode::evaluation, 1,
                                          c.train.max_missing);
  const auto examples = train::make_examples(model, data.net, all_radars(data.net), seasons, seqs, ck.config.knn);
  const CellToRadarMap c2r = build_cell_to_radar(data.tess, data.net);

  std::vector<fs::path> files;
  std::string pred = rows_header(), truth = rows_header();
  for (int w = 0; w < static_cast<int>(examples.size()); ++w) {
    const train::Example& ex = examples[w];
    const synth::Season& season = *seasons[ex.seq.season];
    const int t0 = ex.seq.t0();
    const ForecastRun run = model.predict(ck.params, ex.input, c.eval.horizon);
    const std::vector<std::string> times(season.times.begin() + t0, season.times.begin() + t0 + c.eval.horizon + 1);
    char name[64];
    std::snprintf(name, sizeof name, "runs/%d_%04d.jsonl", season.label, t0);
    files.push_back(out / name);
    io::write_text(files.back(), io::run_jsonl(run, times));
    for (int k = 0; k < c.eval.horizon; ++k) {
      const int t = t0 + 1 + k;
      CellFields cells(model.num_cells());
      cells.density = run.steps[k].density;
      cells.vx = run.steps[k].vx;
      cells.vy = run.steps[k].vy;
      append_rows(pred, w, season.label, t, season.times[t], k + 1, season.day[t], data.net, observe(c2r, cells));
      append_rows(truth, w, season.label, t, season.times[t], k + 1, season.day[t], data.net, season.frames[t]);
    }
  }
  files.push_back(out / "predictions.csv");
  io::write_text(files.back(), pred);
  files.push_back(out / "truth.csv");
  io::write_text(files.back(), truth);

  Manifest m{"forecast", to_json(c)};
  m.add_input("data_manifest", ld.dir / kManifest);
  m.add_input("checkpoint", c.paths.checkpoint);
  m.links["tessellation_sha256"] = ld.tessellation_sha256;
  m.links["checkpoint_sha256"] = ck.sha256;
  return finish(m, out, std::move(files));
}

std::vector<fs::path> cmd_evaluate(const RunConfig& c, const fs::path& out) {
  const VerifiedRows pred = load_rows(c.paths.predictions, "paths.predictions", true);
  const VerifiedRows truth = load_rows(c.paths.truth, "paths.truth", false);
  if (!pred.tessellation_sha256.empty() && !truth.tessellation_sha256.empty() &&
      pred.tessellation_sha256 != truth.tessellation_sha256)
    throw DataError("predictions and truth were produced on different tessellations");
  const RadarRows& p = pred.rows;
  const RadarRows& o = truth.rows;
  if (p.radar_ids != o.radar_ids || p.window != o.window || p.lead != o.lead || p.season != o.season || p.hour != o.hour)
    throw DataError("predictions and truth rows do not align");

  eval::ForecastSet s = o.set;
  s.pred = p.set.pred;
  const double threshold = c.eval.threshold ? *c.eval.threshold : nighttime_quantile(s, 0.95);
  eval::MetricReport report = eval::binned_reports(s, o.radar_ids, threshold);
  report.velocity = eval::velocity_metrics(s, c.eval.min_velocity_density);

  std::vector<fs::path> files{out / "report.json", out / "radar_rmse.csv", out / "pairs.csv"};
  nlohmann::ordered_json rj = eval::to_json(report);
  rj["threshold_source"] = c.eval.threshold ? "config" : "truth nighttime 95% quantile";
  io::write_text(files[0], dump(rj));
  io::write_text(files[1], eval::radar_table_csv(report));
  io::write_text(files[2], pairs_csv(s, o, c.eval.min_velocity_density));

  Manifest m{"evaluate", to_json(c)};
  m.add_input("predictions", c.paths.predictions);
  m.add_input("truth", c.paths.truth);
  if (!truth.tessellation_sha256.empty()) m.links["tessellation_sha256"] = truth.tessellation_sha256;

  if (!c.paths.data.empty()) {
    const LoadedData ld = load_data(c);
    if (!truth.tessellation_sha256.empty() && truth.tessellation_sha256 != ld.tessellation_sha256)
      throw DataError("truth rows were not produced from paths.data");
    const eval::HistoricalAverage ha(eval::seasons_by_label(ld.data, c.eval.train_seasons), ld.data.net.size(),
                                     c.eval.ha_window, c.eval.min_velocity_density);
    if (o.radar_ids != ld.data.net.ids) throw DataError("truth radars differ from the dataset network");
    eval::ForecastSet b = o.set;
    for (int t = 0; t < b.size(); ++t) {
      const synth::Season& season = ld.data.season(o.season[t]);
      if (o.hour[t] < 0 || o.hour[t] >= season.hours()) throw DataError("truth hour outside its season");
      b.pred.push_back(ha.predict(o.hour[t] / 24, season.hour_of_day[o.hour[t]]));
    }
    eval::MetricReport base = eval::binned_reports(b, o.radar_ids, threshold);
    base.velocity = eval::velocity_metrics(b, c.eval.min_velocity_density);
    files.push_back(out / "baseline_report.json");
    io::write_text(files.back(), dump(eval::to_json(base)));
    m.add_input("data_manifest", ld.dir / kManifest);
  }
  return finish(m, out, std::move(files));
}

std::vector<fs::path> cmd_cv(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const LoadedData ld = load_data(c);
  const eval::CvResult r = eval::cross_validate(ld.data, c.model, c.train, c.cv(), [&](int f, const eval::FoldResult& fr) {
    log << "fold " << f << " held-out rmse=" << (fr.held_out_rmse ? *fr.held_out_rmse : std::nan("")) << "\n";
  });
  std::vector<fs::path> files{out / "cv_report.json", out / "relative_change.csv"};
  io::write_text(files[0], dump(eval::to_json(r, ld.data.net.ids)));
  std::string csv = "radar_id,relative_change\n";
  for (int m = 0; m < ld.data.net.size(); ++m)
    csv += ld.data.net.ids[m] + "," + (r.relative_change[m] ? io::format_number(*r.relative_change[m]) : "") + "\n";
  io::write_text(files[1], csv);
  Manifest m{"cv", to_json(c)};
  m.add_input("data_manifest", ld.dir / kManifest);
  m.links["tessellation_sha256"] = ld.tessellation_sha256;
  return finish(m, out, std::move(files));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bird migration flux forecaster"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"tessellate", "write a tessellation"},
      {"simulate", "generate a synthetic dataset"},
      {"train", "fit a model on a dataset"},
      {"forecast", "forecast the test seasons with a checkpoint"},
      {"evaluate", "score predictions against truth"},
      {"cv", "spatial cross-validation"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "top-level seed");
    sub->add_option("--set", overrides, "override section.key=value")->take_all();
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
      try {
        j = nlohmann::json::parse(io::read_text(config_path));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse " + config_path + ": " + e.what());
      }
    }
    if (app.get_subcommands().front()->get_option("--seed")->count()) j["seed"] = seed;
    for (const auto& s : overrides) apply_override(j, s);
    const RunConfig c = run_config_from_json(j);
    const fs::path dir = out_dir;
    std::vector<fs::path> files;
    if (command == "tessellate") files = cmd_tessellate(c, dir);
    if (command == "simulate") files = cmd_simulate(c, dir);
    if (command == "train") files = cmd_train(c, dir, err);
    if (command == "forecast") files = cmd_forecast(c, dir);
    if (command == "evaluate") files = cmd_evaluate(c, dir);
    if (command == "cv") files = cmd_cv(c, dir, err);
    out << command << ": wrote " << files.size() << " files to " << dir.generic_string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace birdflux::cli
