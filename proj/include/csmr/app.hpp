#pragma once

// Command-line orchestration: artifact naming, stage fingerprints and the
// gen-matrix / prepare / cache / train / sweep / table / repro-all subcommands.
//
// Exit codes: 0 success, 1 usage or config error, 2 data/format error or
// missing prerequisite, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csmr/binary_io.hpp"
#include "csmr/config.hpp"
#include "csmr/dataio.hpp"
#include "csmr/error.hpp"
#include "csmr/experiment.hpp"
#include "csmr/model.hpp"
#include "csmr/pipeline.hpp"
#include "csmr/sensing.hpp"

namespace csmr::app {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

// ---------------------------------------------------------------------------
// Artifact names

inline std::string matrix_stem(MatrixKind kind, std::uint64_t seed) {
  return kind == MatrixKind::pc ? "pc" : "pwh_s" + std::to_string(seed);
}

inline fs::path matrix_file(const fs::path& dir, MatrixKind kind, std::uint64_t seed) {
  return dir / ("matrix_" + matrix_stem(kind, seed) + ".csmx");
}

inline fs::path prepared_file(const fs::path& dir, DatasetKind d, SplitName s) {
  return dir / (std::string(to_string(d)) + "_" + to_string(s) + ".csmd");
}

inline std::string split_stem(const ExperimentConfig& cfg, SplitName s) {
  const std::uint32_t limit = s == SplitName::train ? cfg.train_limit : cfg.test_limit;
  return std::string(to_string(cfg.dataset)) + (limit ? "_n" + std::to_string(limit) : "") + "_" + to_string(s);
}

inline fs::path cache_file(const fs::path& dir, const ExperimentConfig& cfg, SplitName s, MatrixKind kind,
                           std::uint64_t seed) {
  return dir / (split_stem(cfg, s) + "_" + matrix_stem(kind, seed) + ".csmc");
}

inline fs::path model_file(const fs::path& dir, const ExperimentConfig& cfg, MatrixKind kind, std::uint64_t seed,
                           const std::string& schedule_tag) {
  std::string name = std::string(to_string(cfg.dataset)) + (cfg.train_limit ? "_n" + std::to_string(cfg.train_limit) : "") +
                     "_" + matrix_stem(kind, seed) + "_" + schedule_tag + "_t" + std::to_string(cfg.train_seed);
  if (cfg.epochs != 100) name += "_e" + std::to_string(cfg.epochs);
  return dir / (name + ".csmm");
}

// ---------------------------------------------------------------------------
// Stage fingerprints: an artifact is up to date when its `.stamp` sidecar holds
// the hash of the inputs and config subset that produced it.

class Fingerprint {
 public:
  explicit Fingerprint(std::string_view stage) { add(stage); }
  Fingerprint& add(std::string_view s) {
    h_ = fnv1a64(s, h_);
    h_ = fnv1a64(std::string_view("\x1f", 1), h_);
    return *this;
  }
  Fingerprint& add(std::uint64_t v) { return add(std::to_string(v)); }
  Fingerprint& add_double(double v) { return add(format_double(v)); }
  Fingerprint& add_file(const fs::path& p) { return add(file_fingerprint(p)); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = kFnvOffset;
};

inline fs::path stamp_path(const fs::path& artifact) { return fs::path(artifact.string() + ".stamp"); }

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline bool up_to_date(const fs::path& artifact, std::uint64_t fp) {
  if (!fs::exists(artifact) || !fs::exists(stamp_path(artifact))) return false;
  std::ifstream in(stamp_path(artifact));
  std::string text;
  in >> text;
  return text == hex(fp);
}

inline void mark_done(const fs::path& artifact, std::uint64_t fp) {
  std::ofstream out(stamp_path(artifact), std::ios::trunc);
  out << hex(fp) << "\n";
  if (!out) throw IoError("cannot write " + stamp_path(artifact).string());
}

// ---------------------------------------------------------------------------
// Stages

/// Context shared by all stages of one invocation.
struct Runner {
  ExperimentConfig cfg;
  std::ostream& out;
  std::ostream& err;

  void note(const std::string& s) const { out << s << "\n"; }

  fs::path raw_dataset_dir() const {
    const fs::path nested = cfg.data_dir / to_string(cfg.dataset);
    return fs::is_directory(nested) ? nested : cfg.data_dir;
  }

  SensingMatrix ensure_matrix(MatrixKind kind, std::uint64_t seed, const fs::path& path) const {
    Fingerprint fp("gen-matrix");
    fp.add(to_string(kind)).add(kind == MatrixKind::pwh ? seed : 0).add(kMatrixFormatVersion);
    if (up_to_date(path, fp.value())) {
      note("up to date: " + path.string());
      return load_matrix(path);
    }
    SensingMatrix m = build_matrix(kind, seed);
    save_matrix(m, path);
    mark_done(path, fp.value());
    note("wrote " + path.string());
    return m;
  }

  void ensure_prepared(const fs::path& raw_dir) const {
    std::vector<fs::path> sources;
    for (SplitName s : {SplitName::train, SplitName::test})
      for (const auto& f : dataset_source_files(cfg.dataset, raw_dir, s)) {
        if (!fs::is_regular_file(f))
          throw DependencyError("missing dataset file " + f.string() + "; place the " + to_string(cfg.dataset) +
                                " files under " + raw_dir.string() + " (or set CSMR_DATA_DIR)");
        sources.push_back(f);
      }
    for (SplitName s : {SplitName::train, SplitName::test}) {
      const fs::path dst = prepared_file(cfg.work_dir, cfg.dataset, s);
      Fingerprint fp("prepare");
      fp.add(to_string(cfg.dataset)).add(to_string(s)).add(to_string(cfg.grayscale)).add(kSplitFormatVersion);
      for (const auto& f : dataset_source_files(cfg.dataset, raw_dir, s)) fp.add_file(f);
      if (up_to_date(dst, fp.value())) {
        note("up to date: " + dst.string());
        continue;
      }
      const DatasetSplit split = prepare_split(cfg.dataset, raw_dir, s, cfg.grayscale);
      save_split(split, dst);
      mark_done(dst, fp.value());
      note("wrote " + dst.string() + " (" + std::to_string(split.size()) + " records)");
    }
  }

  DatasetSplit load_prepared(SplitName s) const {
    const fs::path p = prepared_file(cfg.work_dir, cfg.dataset, s);
    if (!fs::exists(p))
      throw DependencyError("missing prepared split " + p.string() + "; run `csmr prepare --dataset " +
                            to_string(cfg.dataset) + "`");
    DatasetSplit split = load_split(p);
    const std::uint32_t limit = s == SplitName::train ? cfg.train_limit : cfg.test_limit;
    if (limit && limit < split.records.size()) split.records.resize(limit);
    return split;
  }

  std::vector<FullMeasurement> ensure_cache(SplitName s, const SensingMatrix& m, const fs::path& matrix_path,
                                            const fs::path& dst) const {
    const fs::path src = prepared_file(cfg.work_dir, cfg.dataset, s);
    if (!fs::exists(src))
      throw DependencyError("missing prepared split " + src.string() + "; run `csmr prepare --dataset " +
                            to_string(cfg.dataset) + "`");
    Fingerprint fp("cache");
    fp.add_file(src).add_file(matrix_path).add(to_string(cfg.measurement_scale)).add(split_stem(cfg, s));
    const std::uint64_t mfp = matrix_fingerprint(m);
    if (up_to_date(dst, fp.value())) {
      note("up to date: " + dst.string());
      return read_cache(dst, mfp);
    }
    auto ms = cache_measurements(load_prepared(s), m, dst, cfg.measurement_scale);
    mark_done(dst, fp.value());
    note("wrote " + dst.string());
    return ms;
  }

  /// Trains (or reuses) a model and returns it as stored on disk (f32-rounded).
  MlpParams ensure_model(const RateSchedule& schedule, const fs::path& train_cache,
                         std::shared_ptr<const std::vector<FullMeasurement>> train_ms, const fs::path& dst) const {
    const TrainConfig tc = cfg.train_config();
    Fingerprint fp("train");
    fp.add_file(train_cache).add(schedule.to_list()).add(schedule.is_single() ? 1 : 0);
    fp.add_double(tc.initial_lr).add_double(tc.lr_drop_factor).add(tc.lr_drop_period_epochs).add(tc.epochs);
    fp.add(tc.batch_size).add(tc.seed).add(tc.hidden).add(to_string(tc.input_norm)).add(kModelFormatVersion);
    if (up_to_date(dst, fp.value())) {
      note("up to date: " + dst.string());
      return load_model(dst);
    }
    const std::uint32_t dim = schedule.is_single() ? schedule.points().front() : kMaxMeasurements;
    const MultiRateSet set(std::move(train_ms), schedule, mix_seed(tc.seed, 0xD47A), dim);
    note("training " + dst.filename().string() + ": " + std::to_string(set.size()) + " examples, D=" +
         std::to_string(dim) + ", " + std::to_string(tc.epochs) + " epochs");
    std::string history = "epoch,lr,loss,accuracy\n";
    const TrainResult r = train(set, tc, [&](const EpochStats& e) {
      history += std::to_string(e.epoch) + "," + format_double(e.lr) + "," + format_double(e.mean_loss) + "," +
                 format_double(e.accuracy) + "\n";
      err << "  epoch " << e.epoch + 1 << "/" << tc.epochs << " lr=" << e.lr << " loss=" << e.mean_loss
          << " acc=" << e.accuracy << std::endl;
    });
    save_model(r.params, dst);
    const fs::path hist = fs::path(dst.string() + ".history.csv");
    write_file(hist, std::span(reinterpret_cast<const std::uint8_t*>(history.data()), history.size()));
    mark_done(dst, fp.value());
    note("wrote " + dst.string());
    return load_model(dst);
  }

  AccuracyCurve run_sweep(const MlpParams& params, std::span<const FullMeasurement> test, MatrixKind kind,
                          const std::string& schedule_tag, const fs::path& model_path) const {
    AccuracyCurve meta;
    meta.dataset = to_string(cfg.dataset);
    meta.matrix_kind = kind;
    meta.schedule = schedule_tag;
    meta.model_fingerprint = file_fingerprint(model_path);
    return sweep(params, test, meta);
  }
};

struct MatrixArtifacts {
  SensingMatrix matrix;
  fs::path path;
};

/// Full pipeline for cfg.dataset: matrices, prepared splits, caches, the
/// multi-rate and single-rate models for both matrices, both sweeps, the
/// comparison table and the report.
inline void repro_dataset(const Runner& r) {
  const auto& cfg = r.cfg;
  r.note("== " + std::string(to_string(cfg.dataset)));
  r.ensure_prepared(r.raw_dataset_dir());
  const RateSchedule multi = ExperimentConfig::parse_schedule_text(cfg.schedule);

  std::vector<AccuracyCurve> curves;
  std::vector<std::vector<FullMeasurement>> tests;
  std::vector<std::pair<MatrixKind, std::vector<std::pair<std::string, fs::path>>>> models;
  for (MatrixKind kind : {MatrixKind::pc, MatrixKind::pwh}) {
    const fs::path mpath = matrix_file(cfg.work_dir, kind, cfg.matrix_seed);
    const SensingMatrix m = r.ensure_matrix(kind, cfg.matrix_seed, mpath);
    const std::uint64_t seed = m.seed();
    const fs::path train_cache = cache_file(cfg.work_dir, cfg, SplitName::train, kind, seed);
    auto train_ms = std::make_shared<const std::vector<FullMeasurement>>(r.ensure_cache(SplitName::train, m, mpath, train_cache));
    tests.push_back(r.ensure_cache(SplitName::test, m, mpath, cache_file(cfg.work_dir, cfg, SplitName::test, kind, seed)));

    const fs::path multi_path = model_file(cfg.work_dir, cfg, kind, seed, multi.tag());
    const MlpParams multi_params = r.ensure_model(multi, train_cache, train_ms, multi_path);
    for (std::uint32_t p : single_rate_points()) {
      const RateSchedule single = RateSchedule::single(p);
      r.ensure_model(single, train_cache, train_ms, model_file(cfg.work_dir, cfg, kind, seed, single.tag()));
    }
    curves.push_back(r.run_sweep(multi_params, tests.back(), kind, multi.tag(), multi_path));
  }

  const ModelLookup lookup = [&](MatrixKind kind, const std::string& tag) -> std::optional<MlpParams> {
    const fs::path p = model_file(cfg.work_dir, cfg, kind, kind == MatrixKind::pc ? 0 : cfg.matrix_seed, tag);
    if (!fs::exists(p)) return std::nullopt;
    return load_model(p);
  };
  const ComparisonTable table = reproduce_table(to_string(cfg.dataset), lookup, tests[0], tests[1], multi.tag());
  for (const auto& p : emit_report(curves, std::span(&table, 1), cfg.out_dir / to_string(cfg.dataset)))
    r.note("wrote " + p.string());
}

// ---------------------------------------------------------------------------
// Entry point

namespace detail {

/// Flags that mirror config keys. Values given on the command line are applied
/// on top of the config file.
class Overrides {
 public:
  void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    slots_.push_back({key, std::make_unique<std::string>()});
    app->add_option(flag, *slots_.back().value, help);
  }

  void apply(ExperimentConfig& cfg) const {
    for (const auto& s : slots_) {
      if (s.value->empty()) continue;
      try {
        cfg.set(s.key, *s.value);
      } catch (const InvalidArgument& e) {
        throw ConfigError("bad value for " + s.key + ": " + e.what());
      }
    }
  }

 private:
  struct Slot {
    std::string key;
    std::unique_ptr<std::string> value;
  };
  std::vector<Slot> slots_;
};

}  // namespace detail

/// Runs one CLI invocation. args excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Compressed-domain classification with a multi-rate network"};
  app.require_subcommand(1);
  std::string config_path;
  detail::Overrides ov;
  app.add_option("--config", config_path, "config file (key = value lines)");
  ov.bind(&app, "--work", "work_dir", "directory for intermediate artifacts");
  ov.bind(&app, "--data-dir", "data_dir", "dataset root (default $CSMR_DATA_DIR or ./data)");

  auto* gen = app.add_subcommand("gen-matrix", "build a PWH or PC sensing matrix file");
  ov.bind(gen, "--kind", "matrix", "pwh or pc");
  ov.bind(gen, "--seed", "matrix_seed", "PWH permutation seed");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output path");

  auto* prep = app.add_subcommand("prepare", "convert MNIST / CIFAR-10 files into 32x32 grayscale splits");
  ov.bind(prep, "--dataset", "dataset", "mnist or cifar10");
  ov.bind(prep, "--grayscale", "grayscale", "luma601 or mean");
  std::string prep_dir;
  prep->add_option("--dir", prep_dir, "directory with the raw dataset files");

  auto* cache = app.add_subcommand("cache", "measure a split and write a measurement cache");
  ov.bind(cache, "--dataset", "dataset", "mnist or cifar10");
  std::string cache_matrix, cache_out, cache_split = "train";
  cache->add_option("--matrix", cache_matrix, "matrix file")->required();
  cache->add_option("--out", cache_out, "output path");
  cache->add_option("--split", cache_split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* tr = app.add_subcommand("train", "train a multi-rate or single-rate network");
  ov.bind(tr, "--dataset", "dataset", "mnist or cifar10");
  ov.bind(tr, "--schedule", "schedule", "4pt|6pt|10pt|50pt|m=LIST|single-m<M>");
  ov.bind(tr, "--seed", "train_seed", "training seed");
  ov.bind(tr, "--epochs", "epochs", "epochs (default 100)");
  ov.bind(tr, "--batch-size", "batch_size", "mini-batch size (default 128)");
  std::string tr_matrix, tr_out;
  tr->add_option("--matrix", tr_matrix, "matrix file")->required();
  tr->add_option("--out", tr_out, "model output path");

  auto* sw = app.add_subcommand("sweep", "evaluate a model at every m in [10, 256]");
  ov.bind(sw, "--dataset", "dataset", "mnist or cifar10");
  std::string sw_model, sw_matrix, sw_out;
  sw->add_option("--model", sw_model, "model file")->required();
  sw->add_option("--matrix", sw_matrix, "matrix file")->required();
  sw->add_option("--out", sw_out, "report directory")->required();

  auto* tab = app.add_subcommand("table", "multi-rate vs single-rate comparison table");
  ov.bind(tab, "--dataset", "dataset", "mnist or cifar10");
  std::string tab_models, tab_out;
  tab->add_option("--models", tab_models, "directory with matrices and models")->required();
  tab->add_option("--out", tab_out, "report directory")->required();

  auto* all = app.add_subcommand("repro-all", "run every stage for MNIST and CIFAR-10");
  std::string all_dataset;
  all->add_option("--dataset", all_dataset, "restrict to one dataset")->check(CLI::IsMember({"mnist", "cifar10"}));
  ov.bind(all, "--out", "out_dir", "report directory");

  std::vector<std::string> argv_store{"csmr"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    ov.apply(cfg);
    Runner r{cfg, out, err};

    if (*gen) {
      const fs::path path = gen_out.empty() ? matrix_file(cfg.work_dir, cfg.matrix, cfg.matrix_seed) : fs::path(gen_out);
      r.ensure_matrix(cfg.matrix, cfg.matrix_seed, path);
    } else if (*prep) {
      r.ensure_prepared(prep_dir.empty() ? r.raw_dataset_dir() : fs::path(prep_dir));
    } else if (*cache) {
      const SensingMatrix m = load_matrix(cache_matrix);
      const SplitName s = cache_split == "train" ? SplitName::train : SplitName::test;
      const fs::path dst = cache_out.empty() ? cache_file(cfg.work_dir, cfg, s, m.kind(), m.seed()) : fs::path(cache_out);
      const auto ms = r.ensure_cache(s, m, cache_matrix, dst);
      r.note(std::to_string(ms.size()) + " measurement vectors");
    } else if (*tr) {
      const SensingMatrix m = load_matrix(tr_matrix);
      const RateSchedule schedule = ExperimentConfig::parse_schedule_text(cfg.schedule);
      const fs::path cache_path = cache_file(cfg.work_dir, cfg, SplitName::train, m.kind(), m.seed());
      auto ms = std::make_shared<const std::vector<FullMeasurement>>(r.ensure_cache(SplitName::train, m, tr_matrix, cache_path));
      const fs::path dst = tr_out.empty() ? model_file(cfg.work_dir, cfg, m.kind(), m.seed(), schedule.tag()) : fs::path(tr_out);
      r.ensure_model(schedule, cache_path, std::move(ms), dst);
    } else if (*sw) {
      const SensingMatrix m = load_matrix(sw_matrix);
      const auto test = r.ensure_cache(SplitName::test, m, sw_matrix, cache_file(cfg.work_dir, cfg, SplitName::test, m.kind(), m.seed()));
      const MlpParams params = load_model(sw_model);
      AccuracyCurve c = r.run_sweep(params, test, m.kind(), fs::path(sw_model).stem().string(), sw_model);
      c.name = fs::path(sw_model).stem().string();
      for (const auto& p : emit_report(std::span(&c, 1), {}, sw_out)) r.note("wrote " + p.string());
    } else if (*tab) {
      const fs::path dir = tab_models;
      std::vector<std::vector<FullMeasurement>> tests;
      for (MatrixKind kind : {MatrixKind::pc, MatrixKind::pwh}) {
        const fs::path mpath = matrix_file(dir, kind, cfg.matrix_seed);
        if (!fs::exists(mpath))
          throw DependencyError("missing matrix " + mpath.string() + "; run `csmr gen-matrix --kind " + to_string(kind) +
                                " --seed " + std::to_string(cfg.matrix_seed) + " --out " + mpath.string() + "`");
        const SensingMatrix m = load_matrix(mpath);
        tests.push_back(r.ensure_cache(SplitName::test, m, mpath, cache_file(cfg.work_dir, cfg, SplitName::test, kind, m.seed())));
      }
      const RateSchedule multi = ExperimentConfig::parse_schedule_text(cfg.schedule);
      const ModelLookup lookup = [&](MatrixKind kind, const std::string& tag) -> std::optional<MlpParams> {
        const fs::path p = model_file(dir, cfg, kind, kind == MatrixKind::pc ? 0 : cfg.matrix_seed, tag);
        if (!fs::exists(p)) return std::nullopt;
        return load_model(p);
      };
      const ComparisonTable t = reproduce_table(to_string(cfg.dataset), lookup, tests[0], tests[1], multi.tag());
      for (const auto& p : emit_report({}, std::span(&t, 1), tab_out)) r.note("wrote " + p.string());
    } else if (*all) {
      std::vector<DatasetKind> datasets = {DatasetKind::mnist, DatasetKind::cifar10};
      if (!all_dataset.empty()) datasets = {parse_dataset_kind(all_dataset)};
      for (DatasetKind d : datasets) {
        Runner rd = r;
        rd.cfg.dataset = d;
        repro_dataset(rd);
      }
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kDataError;
  } catch (const DependencyError& e) {
    err << "missing prerequisite: " << e.what() << "\n";
    return kDataError;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace csmr::app
