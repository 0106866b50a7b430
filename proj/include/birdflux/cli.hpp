#pragma once

// Declarative run configuration, content-hashed manifests and the six pipeline
// commands behind the command-line tool.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "birdflux/eval.hpp"
#include "birdflux/model.hpp"
#include "birdflux/synth.hpp"
#include "birdflux/tessellation.hpp"
#include "birdflux/train.hpp"

namespace birdflux::cli {

namespace fs = std::filesystem;

/// Standalone tessellation for `tessellate`: hex_patch, hex_grid or voronoi.
struct TessellationSpec {
  std::string kind = "hex_patch";
  double cell_diameter_km = 137.5;
  int rings = 2;                 // hex_patch
  Vec2 center;                   // hex_patch
  Domain domain{0.0, 1000.0, 0.0, 1000.0};  // hex_grid
  std::vector<Vec2> seeds;       // voronoi
  double buffer_km = 100.0;      // voronoi
  int n_dummy = 24;              // voronoi

  Tessellation build() const;
};

struct EvalSpec {
  int folds = 10;
  std::vector<int> train_seasons{2013, 2014, 2015, 2016, 2017, 2018};
  std::vector<int> test_seasons{2020, 2021};
  int horizon = 72;
  std::optional<double> threshold;  // absent: 95% quantile of the observed nighttime densities
  int ha_window = 7;
  double min_velocity_density = 5.0;
};

struct Paths {
  std::string data;
  std::string checkpoint;
  std::string predictions;
  std::string truth;
};

struct RunConfig {
  std::uint64_t seed = 1;
  synth::ScenarioConfig scenario;
  TessellationSpec tessellation;
  model::ModelConfig model;
  train::TrainConfig train;
  EvalSpec eval;
  Paths paths;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
  eval::CvConfig cv() const;
};

/// Parses a full config. Unknown keys, and seeds inside sections, are rejected.
/// The top-level seed is copied into every section that draws random numbers.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Normalized echo with every default filled in.
nlohmann::ordered_json to_json(const RunConfig& c);

/// Applies "section.key=value" (nested keys allowed). The value is read as JSON when
/// it parses, otherwise as a string.
void apply_override(nlohmann::json& j, std::string_view assignment);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const fs::path& path);

/// manifest.json next to every command's outputs: config echo plus content hashes.
struct Manifest {
  std::string command;
  nlohmann::ordered_json config;
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();   // label -> {path, sha256}
  nlohmann::ordered_json outputs = nlohmann::ordered_json::object();  // relative path -> sha256
  nlohmann::ordered_json links = nlohmann::ordered_json::object();    // pairing hashes

  void add_input(const std::string& label, const fs::path& path);
  void add_output(const fs::path& dir, const fs::path& path);
  nlohmann::ordered_json to_json() const;
};

/// Reads `dir`/manifest.json and verifies every listed output against its hash.
nlohmann::json verify_manifest(const fs::path& dir);

// Rows of predictions.csv / truth.csv:
// window,season,hour,time,lead,daytime,radar_id,density,vx,vy,valid
struct RadarRows {
  std::vector<std::string> radar_ids;
  std::vector<int> window, season, hour, lead;
  std::vector<std::string> time;
  eval::ForecastSet set;  // frames in pred for predictions files, in obs for truth files
};

RadarRows parse_radar_rows(std::string_view text, bool as_prediction);

std::vector<fs::path> cmd_tessellate(const RunConfig& c, const fs::path& out);
std::vector<fs::path> cmd_simulate(const RunConfig& c, const fs::path& out);
std::vector<fs::path> cmd_train(const RunConfig& c, const fs::path& out, std::ostream& log);
std::vector<fs::path> cmd_forecast(const RunConfig& c, const fs::path& out);
std::vector<fs::path> cmd_evaluate(const RunConfig& c, const fs::path& out);
std::vector<fs::path> cmd_cv(const RunConfig& c, const fs::path& out, std::ostream& log);

/// Full command line (without the program name). Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace birdflux::cli
