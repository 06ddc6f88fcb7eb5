// Acceptance runner. Prints one PASS / FAIL / SKIP line per criterion.
//
//   csmr_acceptance properties [--scratch DIR]
//   csmr_acceptance full --work DIR [--data-dir DIR]
//
// `properties` needs no dataset and runs in seconds. `full` trains the MNIST
// (and, if present, CIFAR-10) models through the CLI pipeline; artifacts under
// --work are reused on later runs.
//
// Exit status: 1 if the run aborted, or with --strict if any criterion failed;
// 77 when every criterion was skipped; 0 otherwise. FAIL lines are always
// printed.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "csmr/app.hpp"
#include "test_util.hpp"

using namespace csmr;
namespace fs = std::filesystem;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

struct Tally {
  int pass = 0, fail = 0, skip = 0;

  void report(const std::string& id, const Outcome& o) {
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
    (o.verdict == Verdict::pass ? pass : o.verdict == Verdict::fail ? fail : skip)++;
    std::cout << tag << "  " << id << ": " << o.detail << std::endl;
  }

  int exit_code(bool strict) const {
    if (fail) return strict ? 1 : 0;
    if (pass == 0 && skip > 0) return 77;
    return 0;
  }
};

std::string pct(double acc) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * acc);
  return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

bool within(double acc, double target_pct, double tol_pct) { return std::abs(100.0 * acc - target_pct) <= tol_pct; }

// ---------------------------------------------------------------------------
// Criterion 6: invariants that need no training data

struct PropertyCheck {
  std::string name;
  std::function<std::string()> run;  // empty string on success, else the failure
};

std::string check_fwht() {
  std::mt19937_64 gen(1);
  for (unsigned p = 0; p <= 10; ++p) {
    const std::uint32_t n = 1u << p;
    std::vector<std::int64_t> v(n);
    for (auto& x : v) x = static_cast<std::int64_t>(gen() % 2001) - 1000;
    const auto fast = fwht(v);
    for (std::uint32_t i = 0; i < n; ++i) {
      std::int64_t s = 0;
      for (std::uint32_t j = 0; j < n; ++j) s += sylvester_sign(i, j) * v[j];
      if (s != fast[i]) return "n=" + std::to_string(n) + " row " + std::to_string(i);
    }
  }
  return {};
}

std::string check_sequency() {
  for (std::uint32_t k = 0; k < 32; ++k) {
    const auto row = sequency_walsh_row(k, 5);
    std::uint32_t changes = 0;
    for (std::size_t j = 1; j < row.size(); ++j) changes += row[j] != row[j - 1];
    if (changes != k) return "k=" + std::to_string(k) + " has " + std::to_string(changes) + " sign changes";
  }
  return {};
}

std::string check_pc() {
  const SensingMatrix a = build_pc(), b = build_pc();
  if (!(a == b)) return "two builds differ";
  for (std::uint32_t i = 0; i < 64; ++i) {
    const auto pat = pattern(a, i);
    for (std::uint32_t y = 0; y < 32; ++y)
      for (std::uint32_t x = 0; x < 32; ++x)
        if (pat[y][x] != pat[y / 4 * 4][x / 4 * 4]) return "row " + std::to_string(i) + " not 4x4 constant";
  }
  for (std::uint32_t i = 0; i < a.num_rows(); ++i)
    for (std::uint32_t j = i + 1; j < a.num_rows(); ++j)
      if (a.signed_dot(i, j) != 0) return "rows " + std::to_string(i) + "," + std::to_string(j) + " not orthogonal";
  std::multiset<std::vector<int>> got, want;
  for (std::uint32_t i = 0; i < a.num_rows(); ++i) got.insert(a.signed_row(i));
  for (std::uint32_t kx = 0; kx < 32; ++kx)
    for (std::uint32_t ky = 0; ky < 32; ++ky) {
      const auto wx = sequency_walsh_row(kx, 5), wy = sequency_walsh_row(ky, 5);
      std::vector<int> r(kPixels);
      for (std::uint32_t y = 0; y < 32; ++y)
        for (std::uint32_t x = 0; x < 32; ++x) r[y * 32 + x] = wx[x] * wy[y];
      want.insert(r);
    }
  if (got != want) return "signed rows differ from the 2D Walsh basis";
  return {};
}

std::string check_nesting() {
  std::mt19937_64 gen(3);
  const SensingMatrix pc = build_pc(), pwh = build_pwh(kPixels, 4);
  for (const SensingMatrix* m : {&pc, &pwh})
    for (int t = 0; t < 5; ++t) {
      const auto y = measure_full(*m, csmr::testing::random_record(gen));
      for (std::uint32_t k = 1; k <= kMaxMeasurements; ++k) {
        const auto v = truncate_pad(y, k);
        for (std::uint32_t i = 0; i < kMaxMeasurements; ++i)
          if (v[i] != (i < k ? y.y[i] : 0.0f)) return "m=" + std::to_string(k) + " index " + std::to_string(i);
      }
    }
  return {};
}

std::string check_gradients() {
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> normal(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint32_t d = 1 + gen() % 6, h = 1 + gen() % 5, c = 2 + gen() % 4, bs = 1 + gen() % 4;
    auto p = MlpParams::zeros(d, h, c);
    std::vector<double*> vals;
    for (Eigen::MatrixXd* m : {&p.w1, &p.w2})
      for (Eigen::Index i = 0; i < m->size(); ++i) vals.push_back(m->data() + i);
    for (Eigen::VectorXd* v : {&p.b1, &p.b2})
      for (Eigen::Index i = 0; i < v->size(); ++i) vals.push_back(v->data() + i);
    for (double* v : vals) *v = 0.8 * normal(gen);
    Eigen::MatrixXd x(d, bs);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(gen);
    std::vector<std::uint8_t> labels(bs);
    for (auto& l : labels) l = static_cast<std::uint8_t>(gen() % c);

    auto mean_loss = [&] {
      const auto a = forward_batch(p, x);
      double s = 0;
      for (Eigen::Index b = 0; b < x.cols(); ++b) s -= std::log(a.probs(labels[b], b));
      return s / static_cast<double>(x.cols());
    };
    auto g = backward(p, x, labels).grads;
    std::vector<double> analytic;
    for (Eigen::MatrixXd* m : {&g.w1, &g.w2}) analytic.insert(analytic.end(), m->data(), m->data() + m->size());
    for (Eigen::VectorXd* v : {&g.b1, &g.b2}) analytic.insert(analytic.end(), v->data(), v->data() + v->size());
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double orig = *vals[k];
      *vals[k] = orig + 1e-5;
      const double up = mean_loss();
      *vals[k] = orig - 1e-5;
      const double down = mean_loss();
      *vals[k] = orig;
      const double numeric = (up - down) / 2e-5;
      const double err = std::abs(analytic[k] - numeric) / std::max({std::abs(analytic[k]), std::abs(numeric), 1e-6});
      if (err >= 1e-4) return "trial " + std::to_string(trial) + " relative error " + std::to_string(err);
    }
  }
  return {};
}

std::string check_softmax_and_uniform_loss() {
  std::mt19937_64 gen(5);
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    auto p = MlpParams::glorot(256, 40, 10, rng);
    p.b2 *= 0;
    std::vector<double> in(256);
    for (auto& v : in) v = std::uniform_real_distribution<double>(-3, 3)(gen);
    if (std::abs(forward(p, in).probs.sum() - 1.0) > 1e-12) return "probabilities do not sum to 1";
  }
  std::vector<double> in(256, 0.5);
  const auto probs = forward(MlpParams::zeros(256), in).probs;
  const double l = loss(std::span<const double>(probs.data(), probs.size()), 4);
  if (std::abs(l - std::log(10.0)) > 1e-12) return "uniform loss " + std::to_string(l);
  return {};
}

std::string check_overfit() {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<float> u(0, 0.2f);
  auto ms = std::make_shared<std::vector<FullMeasurement>>(100);
  for (auto& m : *ms) {
    for (auto& y : m.y) y = u(gen);
    m.label = static_cast<std::uint8_t>(gen() % 10);
  }
  const MultiRateSet set(ms, RateSchedule::single(256), 4, 256);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 10;
  cfg.initial_lr = 1e-3;
  cfg.seed = 7;
  const auto r = train(set, cfg);
  std::size_t hits = 0;
  std::vector<double> in(256);
  for (std::size_t i = 0; i < set.size(); ++i) {
    set.materialize(i, std::span<double>(in));
    hits += argmax(forward(r.params, in).probs.col(0)) == set.label(i);
  }
  if (hits != 100) return std::to_string(hits) + "/100 after 200 epochs";
  return {};
}

Outcome property_suite() {
  const std::vector<PropertyCheck> checks = {
      {"fwht", check_fwht},         {"sequency", check_sequency}, {"pc", check_pc},
      {"nesting", check_nesting},   {"gradients", check_gradients},
      {"softmax", check_softmax_and_uniform_loss}, {"overfit", check_overfit},
  };
  std::string failed;
  for (const auto& c : checks) {
    const std::string why = c.run();
    std::cerr << "  property " << c.name << ": " << (why.empty() ? "ok" : why) << "\n";
    if (!why.empty()) failed += (failed.empty() ? "" : "; ") + c.name + " (" + why + ")";
  }
  return verdict(failed.empty(), failed.empty() ? std::to_string(checks.size()) + " property groups hold" : failed);
}

// ---------------------------------------------------------------------------
// Criterion 7: two identical end-to-end runs

std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = csmr::testing::slurp(e.path());
  return out;
}

Outcome determinism(const fs::path& scratch) {
  fs::remove_all(scratch);
  const fs::path data = scratch / "data" / "mnist";
  csmr::testing::write_fake_mnist(data, SplitName::train, 60, 11);
  csmr::testing::write_fake_mnist(data, SplitName::test, 20, 12);
  std::vector<std::map<std::string, std::vector<std::uint8_t>>> runs;
  for (const char* name : {"a", "b"}) {
    const fs::path root = scratch / name;
    fs::create_directories(root);
    std::ofstream(root / "run.cfg") << "data_dir = " << (scratch / "data").string() << "\n"
                                    << "work_dir = " << (root / "out" / "work").string() << "\n"
                                    << "out_dir = " << (root / "out" / "reports").string() << "\n"
                                    << "epochs = 2\nbatch_size = 16\n";
    std::ostringstream log;
    const int code = app::run({"--config", (root / "run.cfg").string(), "repro-all", "--dataset", "mnist"}, log, log);
    if (code != 0) return verdict(false, "run " + std::string(name) + " exited " + std::to_string(code) + ": " + log.str());
    runs.push_back(tree_bytes(root / "out"));
  }
  std::size_t models = 0, csvs = 0;
  for (const auto& [rel, bytes] : runs[0]) {
    models += rel.ends_with(".csmm");
    csvs += rel.ends_with(".csv");
  }
  if (runs[0].size() != runs[1].size()) return verdict(false, "runs produced different file sets");
  for (const auto& [rel, bytes] : runs[0]) {
    const auto it = runs[1].find(rel);
    if (it == runs[1].end()) return verdict(false, rel + " missing from second run");
    if (it->second != bytes) return verdict(false, rel + " differs between runs");
  }
  fs::remove_all(scratch);
  return verdict(true, std::to_string(runs[0].size()) + " files byte-identical (" + std::to_string(models) +
                           " models, " + std::to_string(csvs) + " CSVs, report.md)");
}

// ---------------------------------------------------------------------------
// Criteria 1-5: full training runs

struct FullRun {
  fs::path work;
  fs::path data;

  ExperimentConfig config(DatasetKind d, std::uint32_t epochs = 100) const {
    ExperimentConfig c;
    c.dataset = d;
    c.data_dir = data;
    c.work_dir = work / "work";
    c.out_dir = work / "reports";
    c.epochs = epochs;
    return c;
  }

  fs::path write_config(const ExperimentConfig& c, const std::string& name) const {
    fs::create_directories(work);
    const fs::path p = work / name;
    std::ofstream(p) << c.to_text();
    return p;
  }

  /// Runs one CLI invocation; progress goes to stderr.
  void cli(const fs::path& cfg, std::vector<std::string> args) const {
    args.insert(args.begin(), {"--config", cfg.string()});
    const int code = app::run(args, std::cerr, std::cerr);
    if (code != 0) throw std::runtime_error("csmr exited with " + std::to_string(code));
  }

  std::vector<FullMeasurement> test_set(const ExperimentConfig& c, MatrixKind kind) const {
    const SensingMatrix m = load_matrix(app::matrix_file(c.work_dir, kind, c.matrix_seed));
    return read_cache(app::cache_file(c.work_dir, c, SplitName::test, kind, m.seed()), matrix_fingerprint(m));
  }

  MlpParams model(const ExperimentConfig& c, MatrixKind kind, const std::string& tag) const {
    return load_model(app::model_file(c.work_dir, c, kind, kind == MatrixKind::pc ? 0 : c.matrix_seed, tag));
  }
};

bool available(const fs::path& data, DatasetKind d) {
  return dataset_available(d, data / to_string(d)) || dataset_available(d, data);
}

void full_suite(const FullRun& run, Tally& tally) {
  const std::string no_mnist = "MNIST files not found under " + run.data.string();
  if (!available(run.data, DatasetKind::mnist)) {
    for (const char* id : {"1 mnist-pc-10pt", "2 mnist-pwh-10pt"}) tally.report(id, {Verdict::skip, no_mnist});
  } else {
    const ExperimentConfig cfg = run.config(DatasetKind::mnist);
    run.cli(run.write_config(cfg, "mnist.cfg"), {"repro-all", "--dataset", "mnist"});
    const ExperimentConfig quick = run.config(DatasetKind::mnist, 20);
    run.cli(run.write_config(quick, "mnist_quick.cfg"),
            {"train", "--matrix", app::matrix_file(quick.work_dir, MatrixKind::pc, 1).string(), "--schedule", "10pt"});

    const auto test_pc = run.test_set(cfg, MatrixKind::pc);
    const auto test_pwh = run.test_set(cfg, MatrixKind::pwh);
    const MlpParams pc = run.model(cfg, MatrixKind::pc, "10pt");
    const MlpParams pwh = run.model(cfg, MatrixKind::pwh, "10pt");
    const MlpParams pc_quick = run.model(quick, MatrixKind::pc, "10pt");

    const double pc256 = evaluate(pc, test_pc, 256), pc10 = evaluate(pc, test_pc, 10);
    const double quick256 = evaluate(pc_quick, test_pc, 256);
    tally.report("1 mnist-pc-10pt",
                 verdict(within(pc256, 98.05, 1.0) && within(pc10, 78.61, 3.0) && 100 * quick256 >= 96.5,
                         "m=256 " + pct(pc256) + " (98.05 +/- 1.0), m=10 " + pct(pc10) +
                             " (78.61 +/- 3.0), 20-epoch m=256 " + pct(quick256) + " (>= 96.5)"));

    const double pwh256 = evaluate(pwh, test_pwh, 256), pwh10 = evaluate(pwh, test_pwh, 10);
    const double gap = 100 * (pc10 - pwh10);
    tally.report("2 mnist-pwh-10pt",
                 verdict(within(pwh256, 98.08, 1.0) && within(pwh10, 66.43, 4.0) && gap >= 8.0,
                         "m=256 " + pct(pwh256) + " (98.08 +/- 1.0), m=10 " + pct(pwh10) +
                             " (66.43 +/- 4.0), PC-PWH gap at m=10 " + std::to_string(gap).substr(0, 5) + " (>= 8)"));
  }

  if (!available(run.data, DatasetKind::cifar10)) {
    tally.report("3 cifar10-pc-10pt", {Verdict::skip, "CIFAR-10 binary batches not found under " + run.data.string()});
  } else {
    const ExperimentConfig cfg = run.config(DatasetKind::cifar10);
    run.cli(run.write_config(cfg, "cifar10.cfg"), {"repro-all", "--dataset", "cifar10"});
    const auto test_pc = run.test_set(cfg, MatrixKind::pc);
    const auto test_pwh = run.test_set(cfg, MatrixKind::pwh);
    const MlpParams pc = run.model(cfg, MatrixKind::pc, "10pt");
    const MlpParams pwh = run.model(cfg, MatrixKind::pwh, "10pt");
    const double pc256 = evaluate(pc, test_pc, 256), pc10 = evaluate(pc, test_pc, 10);
    const double gap = 100 * (pc10 - evaluate(pwh, test_pwh, 10));
    tally.report("3 cifar10-pc-10pt",
                 verdict(within(pc256, 45.08, 2.5) && within(pc10, 31.10, 3.0) && gap >= 3.0,
                         "m=256 " + pct(pc256) + " (45.08 +/- 2.5), m=10 " + pct(pc10) + " (31.10 +/- 3.0), PC-PWH gap " +
                             std::to_string(gap).substr(0, 5) + " (>= 3)"));
  }

  if (!available(run.data, DatasetKind::mnist)) {
    for (const char* id : {"4 single-vs-multi", "5 sweep-coverage"}) tally.report(id, {Verdict::skip, no_mnist});
    return;
  }
  const ExperimentConfig cfg = run.config(DatasetKind::mnist);
  const auto test_pc = run.test_set(cfg, MatrixKind::pc);
  const auto test_pwh = run.test_set(cfg, MatrixKind::pwh);

  const double multi154 = evaluate(run.model(cfg, MatrixKind::pwh, "10pt"), test_pwh, 154);
  const double single154 = evaluate(run.model(cfg, MatrixKind::pwh, "single-m256"), test_pwh, 154);
  const double drop = 100 * (multi154 - single154);
  tally.report("4 single-vs-multi",
               verdict(drop >= 8.0, "PWH m=154: multi-rate " + pct(multi154) + ", single-rate m=256 net " +
                                        pct(single154) + ", drop " + std::to_string(drop).substr(0, 5) + " (>= 8)"));

  const auto curve_path = cfg.out_dir / "mnist" / "curve_mnist_pc_10pt.csv";
  std::ifstream csv(curve_path);
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) rows += !line.empty();
  const AccuracyCurve curve = sweep(run.model(cfg, MatrixKind::pc, "10pt"), test_pc);
  auto at = [&](std::uint32_t m) { return curve.points.at(m - kMinMeasurements).accuracy; };
  const double d82 = 100 * std::abs(at(82) - at(75)), d154 = 100 * std::abs(at(154) - at(180));
  tally.report("5 sweep-coverage",
               verdict(rows == 248 && curve.points.size() == 247 && d82 <= 1.5 && d154 <= 1.5,
                       std::to_string(rows ? rows - 1 : 0) + " CSV points; PC m=82 " + pct(at(82)) + " vs m=75 " +
                           pct(at(75)) + ", m=154 " + pct(at(154)) + " vs m=180 " + pct(at(180)) + " (within 1.5)"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  app.require_subcommand(1);
  auto* props = app.add_subcommand("properties", "criteria 6 and 7 (no dataset needed)");
  std::string scratch = (fs::temp_directory_path() / "csmr_acceptance").string();
  props->add_option("--scratch", scratch, "scratch directory for the determinism runs");
  auto* full = app.add_subcommand("full", "criteria 1-5 (trains on MNIST / CIFAR-10)");
  std::string work, data = ExperimentConfig::default_data_dir().string();
  full->add_option("--work", work, "persistent artifact directory")->required();
  full->add_option("--data-dir", data, "dataset root");
  bool strict = false;
  app.add_flag("--strict", strict, "exit 1 when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  Tally tally;
  try {
    if (*props) {
      tally.report("6 property-suite", property_suite());
      tally.report("7 determinism", determinism(scratch));
    } else {
      full_suite(FullRun{work, data}, tally);
    }
  } catch (const std::exception& e) {
    std::cout << "FAIL  aborted: " << e.what() << std::endl;
    return 1;
  }
  return tally.exit_code(strict);
}
