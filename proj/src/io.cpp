#include "birdflux/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "birdflux/errors.hpp"

namespace birdflux::io {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

int parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("not an integer: '" + std::string(s) + "'");
  return v;
}

json number_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
  return a;
}

std::vector<double> read_array(const json& j, const char* key) {
  std::vector<double> out;
  if (!j.contains(key)) return out;
  for (const json& x : j.at(key)) out.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN() : x.get<double>());
  return out;
}

void expect_header(const CsvTable& t, const std::vector<std::string>& prefix, const char* what) {
  if (t.header.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), t.header.begin()))
    throw DataError(std::string(what) + ": unexpected header");
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw DataError("cannot format number");
  return std::string(buf, ptr);
}

double parse_number(std::string_view s) {
  if (s == "nan" || s == "NaN" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("not a number: '" + std::string(s) + "'");
  return v;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

int CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw DataError("missing CSV column " + std::string(name));
}

CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  bool first = true;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (std::string_view c : split(line, ',')) cells.emplace_back(c);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw DataError("CSV row has " + std::to_string(cells.size()) +
                                                           " fields, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw DataError("empty CSV");
  return t;
}

std::string network_csv(const SensorNetwork& net) {
  std::string out = "radar_id,x_km,y_km,radius_km\n";
  for (int m = 0; m < net.size(); ++m) {
    out += net.ids[m] + "," + format_number(net.locations[m].x) + "," + format_number(net.locations[m].y) + "," +
           format_number(net.radius_km[m]) + "\n";
  }
  return out;
}

SensorNetwork parse_network_csv(std::string_view text) {
  const CsvTable t = parse_csv(text);
  expect_header(t, {"radar_id", "x_km", "y_km", "radius_km"}, "network.csv");
  SensorNetwork net;
  for (const auto& row : t.rows) {
    net.ids.push_back(row[0]);
    net.locations.push_back({parse_number(row[1]), parse_number(row[2])});
    net.radius_km.push_back(parse_number(row[3]));
  }
  return net;
}

std::string sensors_csv(const std::vector<std::string>& times, const SensorNetwork& net,
                        const std::vector<SensorFrame>& frames) {
  if (times.size() != frames.size()) throw DataError("sensors_csv: times and frames differ in length");
  std::string out = "time,radar_id,density,vx,vy,valid\n";
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const SensorFrame& f = frames[t];
    if (f.size() != net.size()) throw DataError("sensors_csv: frame size does not match the network");
    for (int m = 0; m < f.size(); ++m) {
      out += times[t] + "," + net.ids[m] + "," + format_number(f.density[m]) + "," + format_number(f.vx[m]) + "," +
             format_number(f.vy[m]) + "," + (f.valid[m] ? "1" : "0") + "\n";
    }
  }
  return out;
}

std::vector<SensorFrame> parse_sensors_csv(std::string_view text, const SensorNetwork& net,
                                           std::vector<std::string>* times) {
  const CsvTable t = parse_csv(text);
  expect_header(t, {"time", "radar_id", "density", "vx", "vy", "valid"}, "sensors csv");
  std::map<std::string, int> radar;
  for (int m = 0; m < net.size(); ++m) radar[net.ids[m]] = m;
  std::vector<SensorFrame> frames;
  std::vector<std::string> order;
  std::map<std::string, int> frame_of;
  std::vector<std::vector<char>> seen;
  for (const auto& row : t.rows) {
    auto it = frame_of.find(row[0]);
    if (it == frame_of.end()) {
      it = frame_of.emplace(row[0], static_cast<int>(frames.size())).first;
      order.push_back(row[0]);
      SensorFrame f(net.size());
      std::fill(f.valid.begin(), f.valid.end(), 0);
      frames.push_back(std::move(f));
      seen.emplace_back(net.size(), 0);
    }
    const auto r = radar.find(row[1]);
    if (r == radar.end()) throw DataError("sensors csv: unknown radar " + row[1]);
    SensorFrame& f = frames[it->second];
    const int m = r->second;
    if (seen[it->second][m]) throw DataError("sensors csv: duplicate reading for " + row[1] + " at " + row[0]);
    seen[it->second][m] = 1;
    f.density[m] = parse_number(row[2]);
    f.vx[m] = parse_number(row[3]);
    f.vy[m] = parse_number(row[4]);
    f.valid[m] = parse_int(row[5]) != 0;
  }
  if (times) *times = order;
  return frames;
}

std::string env_csv(const std::vector<std::string>& times, const std::vector<synth::Matrix>& env) {
  if (times.size() != env.size()) throw DataError("env_csv: times and frames differ in length");
  std::string out = "time,cell_id";
  const int features = env.empty() ? 0 : static_cast<int>(env.front().cols());
  for (int k = 0; k < features; ++k) out += ",f" + std::to_string(k);
  out += "\n";
  for (std::size_t t = 0; t < env.size(); ++t)
    for (int i = 0; i < env[t].rows(); ++i) {
      out += times[t] + "," + std::to_string(i);
      for (int k = 0; k < features; ++k) out += "," + format_number(env[t](i, k));
      out += "\n";
    }
  return out;
}

std::vector<synth::Matrix> parse_env_csv(std::string_view text, int num_cells, std::vector<std::string>* times) {
  const CsvTable t = parse_csv(text);
  expect_header(t, {"time", "cell_id"}, "env csv");
  const int features = static_cast<int>(t.header.size()) - 2;
  std::vector<synth::Matrix> env;
  std::vector<std::string> order;
  std::map<std::string, int> frame_of;
  for (const auto& row : t.rows) {
    auto it = frame_of.find(row[0]);
    if (it == frame_of.end()) {
      it = frame_of.emplace(row[0], static_cast<int>(env.size())).first;
      order.push_back(row[0]);
      env.push_back(synth::Matrix::Constant(num_cells, features, std::numeric_limits<double>::quiet_NaN()));
    }
    const int cell = parse_int(row[1]);
    if (cell < 0 || cell >= num_cells) throw DataError("env csv: cell id out of range");
    for (int k = 0; k < features; ++k) env[it->second](cell, k) = parse_number(row[2 + k]);
  }
  for (const auto& m : env)
    if (!m.allFinite()) throw DataError("env csv: missing or non-finite feature values");
  if (times) *times = order;
  return env;
}

std::string static_csv(const Tessellation& tess, const synth::Matrix& land_cover) {
  std::string out = "cell_id,x_km,y_km";
  for (int k = 0; k < land_cover.cols(); ++k) out += ",lc" + std::to_string(k);
  out += "\n";
  for (int i = 0; i < tess.num_cells(); ++i) {
    out += std::to_string(i) + "," + format_number(tess.centers[i].x) + "," + format_number(tess.centers[i].y);
    for (int k = 0; k < land_cover.cols(); ++k) out += "," + format_number(land_cover(i, k));
    out += "\n";
  }
  return out;
}

synth::Matrix parse_static_csv(std::string_view text, int num_cells) {
  const CsvTable t = parse_csv(text);
  expect_header(t, {"cell_id", "x_km", "y_km"}, "static csv");
  const int classes = static_cast<int>(t.header.size()) - 3;
  if (static_cast<int>(t.rows.size()) != num_cells) throw DataError("static csv: wrong number of cells");
  synth::Matrix lc(num_cells, classes);
  for (const auto& row : t.rows) {
    const int cell = parse_int(row[0]);
    if (cell < 0 || cell >= num_cells) throw DataError("static csv: cell id out of range");
    for (int k = 0; k < classes; ++k) lc(cell, k) = parse_number(row[3 + k]);
  }
  return lc;
}

std::string run_jsonl(const ForecastRun& run, const std::vector<std::string>& times) {
  if (!times.empty() && static_cast<int>(times.size()) != run.horizon() + 1)
    throw DataError("run_jsonl: expected one time per line");
  std::string out;
  auto line = [&](int k, ordered_json j) {
    ordered_json head;
    head["step"] = k;
    if (!times.empty()) head["time"] = times[k];
    for (auto& [key, value] : j.items()) head[key] = value;
    out += head.dump() + "\n";
  };
  ordered_json first;
  first["density"] = number_array(run.initial_density);
  line(0, first);
  for (int k = 0; k < run.horizon(); ++k) {
    const StepRecord& s = run.steps[k];
    ordered_json j;
    j["density"] = number_array(s.density);
    j["vx"] = number_array(s.vx);
    j["vy"] = number_array(s.vy);
    j["delta"] = number_array(s.delta);
    j["gamma"] = number_array(s.gamma);
    j["source_sink"] = number_array(s.source_sink);
    j["flux"] = number_array(s.flux);
    line(k + 1, j);
  }
  return out;
}

ForecastRun parse_run_jsonl(std::string_view text, std::vector<std::string>* times) {
  ForecastRun run;
  std::vector<std::string> stamps;
  std::size_t start = 0;
  int expected = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("run jsonl: ") + e.what());
    }
    if (j.value("step", -1) != expected) throw DataError("run jsonl: steps out of order");
    if (j.contains("time")) stamps.push_back(j.at("time").get<std::string>());
    if (expected == 0) {
      run.initial_density = read_array(j, "density");
    } else {
      StepRecord s;
      s.density = read_array(j, "density");
      s.vx = read_array(j, "vx");
      s.vy = read_array(j, "vy");
      s.delta = read_array(j, "delta");
      s.gamma = read_array(j, "gamma");
      s.source_sink = read_array(j, "source_sink");
      s.flux = read_array(j, "flux");
      run.steps.push_back(std::move(s));
    }
    ++expected;
  }
  if (expected == 0) throw DataError("run jsonl: empty");
  if (times) *times = stamps;
  return run;
}

ForecastRun season_truth(const synth::Season& season, int num_cells) {
  ForecastRun run;
  run.initial_density = season.density.at(0);
  for (int t = 1; t < season.hours(); ++t) {
    StepRecord s;
    s.density = season.density[t];
    s.vx = season.vx[t];
    s.vy = season.vy[t];
    s.delta.assign(num_cells, season.delta[t]);
    s.gamma = season.gamma[t];
    s.source_sink = season.source[t];
    run.steps.push_back(std::move(s));
  }
  return run;
}

std::vector<fs::path> write_dataset(const synth::Dataset& data, const fs::path& dir) {
  std::vector<fs::path> written;
  auto put = [&](const std::string& name, std::string_view content) {
    write_text(dir / name, content);
    written.push_back(dir / name);
  };
  ordered_json meta;
  meta["scenario"] = synth::to_json(data.config);
  meta["seasons"] = ordered_json::array();
  for (const synth::Season& s : data.seasons) {
    ordered_json e;
    e["label"] = s.label;
    e["hours"] = s.hours();
    e["ledger_residual"] = s.ledger_residual;
    meta["seasons"].push_back(e);
  }
  put("dataset.json", meta.dump(2) + "\n");
  put("tessellation.json", to_json(data.tess).dump() + "\n");
  put("network.csv", network_csv(data.net));
  put("static.csv", static_csv(data.tess, data.land_cover));
  for (const synth::Season& s : data.seasons) {
    const std::string label = std::to_string(s.label);
    put("sensors_" + label + ".csv", sensors_csv(s.times, data.net, s.frames));
    put("env_" + label + ".csv", env_csv(s.times, s.env));
    put("truth_" + label + ".jsonl", run_jsonl(season_truth(s, data.tess.num_cells()), s.times));
  }
  return written;
}

synth::Dataset read_dataset(const fs::path& dir) {
  synth::Dataset data;
  json meta;
  try {
    meta = json::parse(read_text(dir / "dataset.json"));
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset.json: ") + e.what());
  }
  data.config = synth::scenario_from_json(meta.at("scenario"));
  try {
    data.tess = tessellation_from_json(json::parse(read_text(dir / "tessellation.json")));
  } catch (const json::exception& e) {
    throw DataError(std::string("tessellation.json: ") + e.what());
  }
  const int n = data.tess.num_cells();
  data.net = parse_network_csv(read_text(dir / "network.csv"));
  data.land_cover = parse_static_csv(read_text(dir / "static.csv"), n);
  for (const json& e : meta.at("seasons")) {
    synth::Season s;
    s.label = e.at("label").get<int>();
    s.ledger_residual = e.value("ledger_residual", 0.0);
    const std::string label = std::to_string(s.label);
    s.frames = parse_sensors_csv(read_text(dir / ("sensors_" + label + ".csv")), data.net, &s.times);
    std::vector<std::string> env_times;
    s.env = parse_env_csv(read_text(dir / ("env_" + label + ".csv")), n, &env_times);
    if (env_times != s.times) throw DataError("season " + label + ": sensor and env times differ");
    std::vector<std::string> truth_times;
    const ForecastRun truth = parse_run_jsonl(read_text(dir / ("truth_" + label + ".jsonl")), &truth_times);
    if (truth_times != s.times) throw DataError("season " + label + ": truth times differ");
    for (std::size_t t = 0; t < s.times.size(); ++t) {
      const std::string& iso = s.times[t];
      if (iso.size() < 13) throw DataError("malformed time " + iso);
      const int hod = parse_int(std::string_view(iso).substr(11, 2));
      s.hour_of_day.push_back(hod);
      s.day.push_back(synth::is_day(data.config.schedule, hod) ? 1 : 0);
    }
    const std::vector<double> zero(n, 0.0);
    s.density.push_back(truth.initial_density);
    s.vx.push_back(zero);
    s.vy.push_back(zero);
    s.source.push_back(zero);
    s.gamma.push_back(zero);
    s.delta.push_back(0.0);
    for (const StepRecord& r : truth.steps) {
      s.density.push_back(r.density);
      s.vx.push_back(r.vx);
      s.vy.push_back(r.vy);
      s.source.push_back(r.source_sink);
      s.gamma.push_back(r.gamma);
      s.delta.push_back(r.delta.empty() ? 0.0 : r.delta.front());
    }
    data.seasons.push_back(std::move(s));
  }
  return data;
}

}  // namespace birdflux::io
