#pragma once

// Experiment configuration: line-oriented UTF-8 `key = value`, `#` starts a
// comment. Unknown keys and bad values are errors that name the line.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "csmr/dataio.hpp"
#include "csmr/error.hpp"
#include "csmr/model.hpp"
#include "csmr/pipeline.hpp"
#include "csmr/sensing.hpp"

namespace csmr {

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::mnist;
  MatrixKind matrix = MatrixKind::pc;
  std::uint64_t matrix_seed = 1;
  std::string schedule = "10pt";
  std::uint64_t train_seed = 1;
  std::uint32_t batch_size = 128;
  std::uint32_t epochs = 100;
  double initial_lr = 5e-5;
  double lr_drop_factor = 0.9;
  std::uint32_t lr_drop_period = 4;
  MeasurementScale measurement_scale = MeasurementScale::per_pixel;
  GrayscaleMode grayscale = GrayscaleMode::luma601;
  InputNorm input_norm = InputNorm::zscore;
  std::filesystem::path data_dir = default_data_dir();
  std::filesystem::path work_dir = "work";
  std::filesystem::path out_dir = "reports";
  std::uint32_t train_limit = 0;  // 0 = whole split
  std::uint32_t test_limit = 0;

  static std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("CSMR_DATA_DIR"); env && *env) return env;
    return "data";
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.initial_lr = initial_lr;
    t.lr_drop_factor = lr_drop_factor;
    t.lr_drop_period_epochs = lr_drop_period;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.seed = train_seed;
    t.input_norm = input_norm;
    return t;
  }

  /// Sets one key from its textual value. Throws InvalidArgument on bad values
  /// and ConfigError on unknown keys.
  void set(const std::string& key, const std::string& value) {
    if (key == "dataset") dataset = parse_dataset_kind(value);
    else if (key == "matrix") matrix = parse_matrix_kind(value);
    else if (key == "matrix_seed") matrix_seed = to_u64(key, value);
    else if (key == "schedule") { parse_schedule_text(value); schedule = value; }
    else if (key == "train_seed") train_seed = to_u64(key, value);
    else if (key == "batch_size") batch_size = to_u32_positive(key, value);
    else if (key == "epochs") epochs = to_u32_positive(key, value);
    else if (key == "initial_lr") initial_lr = to_double(key, value);
    else if (key == "lr_drop_factor") lr_drop_factor = to_double(key, value);
    else if (key == "lr_drop_period") lr_drop_period = to_u32_positive(key, value);
    else if (key == "measurement_scale") measurement_scale = parse_measurement_scale(value);
    else if (key == "grayscale") grayscale = parse_grayscale_mode(value);
    else if (key == "input_norm") input_norm = parse_input_norm(value);
    else if (key == "data_dir") data_dir = value;
    else if (key == "work_dir") work_dir = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "train_limit") train_limit = static_cast<std::uint32_t>(to_u64(key, value));
    else if (key == "test_limit") test_limit = static_cast<std::uint32_t>(to_u64(key, value));
    else throw ConfigError("unknown key '" + key + "'");
    train_config().validate();
  }

  /// "4pt" | "6pt" | "10pt" | "50pt" | "m=LIST" | "single-m<M>".
  static RateSchedule parse_schedule_text(const std::string& text) {
    if (text.rfind("single-m", 0) == 0) return RateSchedule::single(to_u32_positive("schedule", text.substr(8)));
    return parse_schedule(text);
  }

  static ExperimentConfig parse(std::istream& in, const std::string& name = "config") {
    ExperimentConfig cfg;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto text = trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      const std::string where = name + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw ConfigError(where + ": expected `key = value`, got '" + text + "'");
      const auto key = trim(text.substr(0, eq));
      const auto value = trim(text.substr(eq + 1));
      try {
        cfg.set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
      } catch (const InvalidArgument& e) {
        throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
      }
    }
    return cfg;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    return parse(in, path.string());
  }

  /// Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const {
    std::ostringstream os;
    os << "dataset = " << to_string(dataset) << "\n"
       << "matrix = " << to_string(matrix) << "\n"
       << "matrix_seed = " << matrix_seed << "\n"
       << "schedule = " << schedule << "\n"
       << "train_seed = " << train_seed << "\n"
       << "batch_size = " << batch_size << "\n"
       << "epochs = " << epochs << "\n"
       << "initial_lr = " << initial_lr << "\n"
       << "lr_drop_factor = " << lr_drop_factor << "\n"
       << "lr_drop_period = " << lr_drop_period << "\n"
       << "measurement_scale = " << to_string(measurement_scale) << "\n"
       << "grayscale = " << to_string(grayscale) << "\n"
       << "input_norm = " << to_string(input_norm) << "\n"
       << "data_dir = " << data_dir.string() << "\n"
       << "work_dir = " << work_dir.string() << "\n"
       << "out_dir = " << out_dir.string() << "\n"
       << "train_limit = " << train_limit << "\n"
       << "test_limit = " << test_limit << "\n";
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    std::uint64_t out = 0;
    try {
      if (!v.empty() && v[0] != '-') out = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw InvalidArgument(key + " expects an unsigned integer, got '" + v + "'");
    return out;
  }

  static std::uint32_t to_u32_positive(const std::string& key, const std::string& v) {
    const auto x = to_u64(key, v);
    if (x == 0 || x > 0xffffffffull) throw InvalidArgument(key + " must be a positive 32-bit integer");
    return static_cast<std::uint32_t>(x);
  }

  static double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw InvalidArgument(key + " expects a number, got '" + v + "'");
    return out;
  }
};

}  // namespace csmr
