#pragma once

// Accuracy evaluation at any measurement count, full sweeps over m = 10..256,
// multi-rate vs single-rate comparison tables, and CSV/markdown reports.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "csmr/binary_io.hpp"
#include "csmr/dataio.hpp"
#include "csmr/error.hpp"
#include "csmr/model.hpp"
#include "csmr/pipeline.hpp"
#include "csmr/sensing.hpp"

namespace csmr {

/// Fraction of examples whose argmax class matches the label when the camera
/// took m measurements. Inputs follow fill_input: a model with D < m sees the
/// first D measurements, a model with D > m sees m measurements then zeros.
inline double evaluate(const MlpParams& params, std::span<const FullMeasurement> test, std::uint32_t m) {
  if (m < kMinMeasurements || m > kMaxMeasurements)
    throw InvalidArgument("evaluate: m=" + std::to_string(m) + " outside [10, 256]");
  if (test.empty()) throw InvalidArgument("evaluate: empty test set");
  const std::uint32_t dim = params.input_dim();
  constexpr std::size_t kChunk = 1000;
  Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(std::min(kChunk, test.size())));
  Activations act;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.size(); start += kChunk) {
    const std::size_t bs = std::min(kChunk, test.size() - start);
    if (static_cast<std::size_t>(x.cols()) != bs) x.resize(dim, static_cast<Eigen::Index>(bs));
    for (std::size_t b = 0; b < bs; ++b)
      fill_input(test[start + b], m, std::span<double>(x.col(static_cast<Eigen::Index>(b)).data(), dim));
    forward_batch_into(params, x, act);
    for (std::size_t b = 0; b < bs; ++b)
      if (argmax(act.probs.col(static_cast<Eigen::Index>(b))) == test[start + b].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

inline double evaluate(const MlpParams& params, const SensingMatrix& matrix, const DatasetSplit& test,
                       std::uint32_t m, MeasurementScale scale = MeasurementScale::per_pixel) {
  const auto ms = measure_split(matrix, test, scale);
  return evaluate(params, ms, m);
}

/// Accuracy of params on its own training set (each example at its own m).
inline double training_accuracy(const MlpParams& params, const MultiRateSet& set) {
  std::vector<double> in(set.input_dim());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    set.materialize(i, std::span<double>(in));
    if (argmax(forward(params, in).probs.col(0)) == set.label(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

// ---------------------------------------------------------------------------
// Sweep

struct CurvePoint {
  std::uint32_t m = 0;
  double measurement_rate = 0.0;  // m / 1024
  double accuracy = 0.0;
};

struct AccuracyCurve {
  std::string name;  // overrides the derived label when set
  std::string dataset;
  MatrixKind matrix_kind = MatrixKind::pc;
  std::string schedule;
  std::uint64_t model_fingerprint = 0;
  std::vector<CurvePoint> points;

  std::string label() const {
    return name.empty() ? dataset + "_" + to_string(matrix_kind) + "_" + schedule : name;
  }

  std::optional<double> at(std::uint32_t m) const {
    for (const auto& p : points)
      if (p.m == m) return p.accuracy;
    return std::nullopt;
  }
};

inline double measurement_rate(std::uint32_t m) { return static_cast<double>(m) / kPixels; }

/// Evaluates every m in [10, 256] (247 points), in m order.
inline AccuracyCurve sweep(const MlpParams& params, std::span<const FullMeasurement> test, AccuracyCurve meta = {}) {
  meta.points.clear();
  meta.points.reserve(kMaxMeasurements - kMinMeasurements + 1);
  for (std::uint32_t m = kMinMeasurements; m <= kMaxMeasurements; ++m)
    meta.points.push_back({m, measurement_rate(m), evaluate(params, test, m)});
  return meta;
}

// ---------------------------------------------------------------------------
// Comparison tables

enum class TableColumn { multi_pc, multi_pwh, single_pc, single_pwh };

struct ComparisonCell {
  TableColumn column = TableColumn::multi_pc;
  double measurement_rate = 0.0;
  std::uint32_t m = 0;
  double accuracy = 0.0;
  std::string evaluator;                     // model descriptor, e.g. "pwh/single-m256"
  std::optional<std::uint32_t> trained_at_m;  // set for single-rate cells
  bool cross = false;                         // single-rate net evaluated off its trained m
};

struct ComparisonTable {
  std::string dataset;
  std::vector<ComparisonCell> cells;

  std::vector<const ComparisonCell*> find(TableColumn col, std::uint32_t m) const {
    std::vector<const ComparisonCell*> out;
    for (const auto& c : cells)
      if (c.column == col && c.m == m) out.push_back(&c);
    return out;
  }
};

/// Rows of the comparison tables: (measurement rate, m).
inline const std::vector<std::pair<double, std::uint32_t>>& table_rows() {
  static const std::vector<std::pair<double, std::uint32_t>> rows = {
      {0.25, 256}, {0.15, 154}, {0.10, 102}, {0.08, 82}, {0.05, 51}, {0.01, 10}};
  return rows;
}

/// Measurement counts with a dedicated single-rate network.
inline const std::vector<std::uint32_t>& single_rate_points() {
  static const std::vector<std::uint32_t> pts = {10, 51, 102, 256};
  return pts;
}

/// Single-rate networks that score an untrained row: first the one trained on
/// the next lower rate, then the one trained on the next higher rate.
inline std::vector<std::uint32_t> single_rate_evaluators(std::uint32_t m) {
  const auto& pts = single_rate_points();
  for (std::uint32_t p : pts)
    if (p == m) return {m};
  std::optional<std::uint32_t> below, above;
  for (std::uint32_t p : pts) {
    if (p < m) below = p;
    if (p > m && !above) above = p;
  }
  std::vector<std::uint32_t> out;
  if (below) out.push_back(*below);
  if (above) out.push_back(*above);
  return out;
}

/// Looks up a trained model by matrix kind and schedule tag ("10pt",
/// "single-m102", ...). Returns nullopt if absent.
using ModelLookup = std::function<std::optional<MlpParams>(MatrixKind, const std::string&)>;

/// Fills the multi-rate and single-rate columns. test_pc / test_pwh are the
/// test-split measurements under each matrix.
inline ComparisonTable reproduce_table(const std::string& dataset, const ModelLookup& lookup,
                                       std::span<const FullMeasurement> test_pc,
                                       std::span<const FullMeasurement> test_pwh,
                                       const std::string& multi_tag = "10pt") {
  auto require = [&](MatrixKind k, const std::string& tag) {
    auto p = lookup(k, tag);
    if (!p)
      throw DependencyError("missing model " + dataset + "/" + to_string(k) + "/" + tag + "; produce it with `train`");
    return std::move(*p);
  };

  ComparisonTable t{dataset, {}};
  for (MatrixKind kind : {MatrixKind::pc, MatrixKind::pwh}) {
    const auto test = kind == MatrixKind::pc ? test_pc : test_pwh;
    const MlpParams multi = require(kind, multi_tag);
    const TableColumn multi_col = kind == MatrixKind::pc ? TableColumn::multi_pc : TableColumn::multi_pwh;
    const TableColumn single_col = kind == MatrixKind::pc ? TableColumn::single_pc : TableColumn::single_pwh;

    std::vector<std::pair<std::uint32_t, MlpParams>> singles;
    for (std::uint32_t p : single_rate_points()) singles.emplace_back(p, require(kind, "single-m" + std::to_string(p)));

    for (const auto& [rate, m] : table_rows()) {
      t.cells.push_back({multi_col, rate, m, evaluate(multi, test, m),
                         std::string(to_string(kind)) + "/" + multi_tag, std::nullopt, false});
      for (std::uint32_t trained : single_rate_evaluators(m)) {
        const auto it = std::find_if(singles.begin(), singles.end(), [&](const auto& s) { return s.first == trained; });
        t.cells.push_back({single_col, rate, m, evaluate(it->second, test, m),
                           std::string(to_string(kind)) + "/single-m" + std::to_string(trained), trained,
                           trained != m});
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Reports

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed4(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 4);
  return std::string(buf, res.ptr);
}

inline std::string curve_csv(const AccuracyCurve& c) {
  std::string s = "m,measurement_rate,accuracy\n";
  for (const auto& p : c.points)
    s += std::to_string(p.m) + "," + format_double(p.measurement_rate) + "," + format_double(p.accuracy) + "\n";
  return s;
}

inline std::string table_markdown(const ComparisonTable& t) {
  std::ostringstream os;
  os << "## Comparison table: " << t.dataset << "\n\n"
     << "| Measurement rate | m | Multi-rate PC (10pt) | Multi-rate PWH (10pt) | Single-rate PC | Single-rate PWH |\n"
     << "|---|---|---|---|---|---|\n";
  for (const auto& [rate, m] : table_rows()) {
    os << "| " << format_double(rate) << " | " << m;
    for (TableColumn col : {TableColumn::multi_pc, TableColumn::multi_pwh, TableColumn::single_pc, TableColumn::single_pwh}) {
      const auto cells = t.find(col, m);
      os << " | ";
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? " / " : "") << format_fixed4(cells[i]->accuracy);
      if (cells.empty()) os << "-";
    }
    os << " |\n";
  }
  os << "\nCells with two values: the first comes from the single-rate network trained at the next lower rate, "
        "the second from the one trained at the next higher rate.\n";
  return os.str();
}

inline std::string report_markdown(std::span<const AccuracyCurve> curves, std::span<const ComparisonTable> tables) {
  std::ostringstream os;
  os << "# Compressed-domain classification report\n";
  if (!curves.empty()) {
    os << "\n## Accuracy curves\n\n| Curve | m=10 | m=51 | m=82 | m=102 | m=154 | m=256 |\n|---|---|---|---|---|---|---|\n";
    for (const auto& c : curves) {
      os << "| " << c.label();
      for (std::uint32_t m : {10u, 51u, 82u, 102u, 154u, 256u}) {
        const auto a = c.at(m);
        os << " | " << (a ? format_fixed4(*a) : std::string("-"));
      }
      os << " |\n";
    }
  }
  for (const auto& t : tables) os << "\n" << table_markdown(t);
  return os.str();
}

/// Writes curve_<label>.csv per curve and report.md. Returns the paths written.
inline std::vector<std::filesystem::path> emit_report(std::span<const AccuracyCurve> curves,
                                                      std::span<const ComparisonTable> tables,
                                                      const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::filesystem::path& p, const std::string& text) {
    write_file(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    written.push_back(p);
  };
  for (const auto& c : curves) put(out_dir / ("curve_" + c.label() + ".csv"), curve_csv(c));
  put(out_dir / "report.md", report_markdown(curves, tables));
  return written;
}

}  // namespace csmr
