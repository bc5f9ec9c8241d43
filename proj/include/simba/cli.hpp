#pragma once

// Run configuration files, checkpoints and the `simba` command surface.
//
// Exit codes: 0 success, 2 usage or configuration problem (bad flags, bad
// JSON, schema violation, missing or malformed input file), 3 numeric failure
// (training abort, failed gradient check). 1 is reserved for internal errors.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "simba/container.hpp"
#include "simba/data.hpp"
#include "simba/model.hpp"
#include "simba/train.hpp"

namespace simba {

enum class Task { vision, forecast };
enum class Precision { f32, f64 };

const char* task_name(Task task);

struct DataSource {
  enum class Kind { synthetic, csv, dataset };
  Kind kind = Kind::synthetic;
  SyntheticSeriesSpec series;
  SyntheticImageSpec images;
  bool has_seed = false;     // generator seed; defaults to the run seed
  std::uint64_t seed = 0;
  std::filesystem::path path;  // csv file or persisted dataset directory
  bool date_column = true;
  SplitFractions fractions;    // series
  double val_fraction = 0.1;   // images
};

struct RunConfig {
  Task task = Task::vision;
  std::uint64_t seed = 0;
  std::filesystem::path out;
  Precision precision = Precision::f32;
  VisionConfig vision;
  ForecastConfig forecast;
  bool forecast_channels_set = false;  // otherwise taken from the data
  OptimConfig optim;  // grad_clip_norm defaults to 1 for forecast configs
  DataSource data;

  std::uint64_t data_seed() const { return data.has_seed ? data.seed : seed; }
};

// ConfigError with a JSON pointer path ("/optim/base_lr") for schema
// violations; malformed JSON reports the byte offset. Relative data paths
// resolve against base_dir and must exist.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const VisionConfig& config);
nlohmann::json to_json(const ForecastConfig& config);
VisionConfig vision_config_from_json(const nlohmann::json& j);
ForecastConfig forecast_config_from_json(const nlohmann::json& j);

// Everything about a checkpoint except the parameter payload.
struct CheckpointInfo {
  Task task = Task::vision;
  Precision precision = Precision::f32;
  std::size_t step = 0;
  std::string rng_state;
  nlohmann::json model;                 // to_json of the model configuration
  std::vector<double> mean, stddev;     // forecast standardization
  std::vector<std::string> channel_names;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamList<T>& params,
                     const CheckpointInfo& info);

CheckpointInfo read_checkpoint_info(const Container& container);

// Copies stored parameters into params; FormatError unless names, shapes and
// element types match exactly.
template <typename T>
void load_parameters(const Container& container, const ParamList<T>& params);

// argv-style arguments without the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace simba
