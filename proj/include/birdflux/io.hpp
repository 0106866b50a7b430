#pragma once

// Plain-text artifact formats: CSV tables, JSON-lines runs, and the synthetic
// dataset directory layout. Numbers are written in shortest round-trip form so
// rereading reproduces every bit.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "birdflux/obsmap.hpp"
#include "birdflux/run.hpp"
#include "birdflux/synth.hpp"

namespace birdflux::io {

namespace fs = std::filesystem;

std::string format_number(double v);
double parse_number(std::string_view s);

std::string read_text(const fs::path& path);
/// Writes atomically enough for our purposes: creates parent directories first.
void write_text(const fs::path& path, std::string_view content);

/// Header plus rows of a comma-separated table without quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(std::string_view name) const;  // throws DataError if absent
};
CsvTable parse_csv(std::string_view text);

// network.csv: radar_id,x_km,y_km,radius_km
std::string network_csv(const SensorNetwork& net);
SensorNetwork parse_network_csv(std::string_view text);

// sensors_<label>.csv: time,radar_id,density,vx,vy,valid
std::string sensors_csv(const std::vector<std::string>& times, const SensorNetwork& net,
                        const std::vector<SensorFrame>& frames);
/// Frames ordered as the times appear; radars ordered as in `net`.
std::vector<SensorFrame> parse_sensors_csv(std::string_view text, const SensorNetwork& net,
                                           std::vector<std::string>* times = nullptr);

// env_<label>.csv: time,cell_id,f0..fN
std::string env_csv(const std::vector<std::string>& times, const std::vector<synth::Matrix>& env);
std::vector<synth::Matrix> parse_env_csv(std::string_view text, int num_cells, std::vector<std::string>* times = nullptr);

// static.csv: cell_id,x_km,y_km,lc0..lcC
std::string static_csv(const Tessellation& tess, const synth::Matrix& land_cover);
synth::Matrix parse_static_csv(std::string_view text, int num_cells);

/// One JSON object per line: the initial state first (step 0, density only), then
/// one line per step with the StepRecord fields. Optional times label the lines.
std::string run_jsonl(const ForecastRun& run, const std::vector<std::string>& times = {});
ForecastRun parse_run_jsonl(std::string_view text, std::vector<std::string>* times = nullptr);

/// Ground truth of a season as a run starting at hour 0 (flux left empty).
ForecastRun season_truth(const synth::Season& season, int num_cells);

/// Writes network.csv, static.csv, tessellation.json, dataset.json and per-season
/// sensors/env/truth files. Returns the written paths in a fixed order.
std::vector<fs::path> write_dataset(const synth::Dataset& data, const fs::path& dir);
synth::Dataset read_dataset(const fs::path& dir);

}  // namespace birdflux::io
