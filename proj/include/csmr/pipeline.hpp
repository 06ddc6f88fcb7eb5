#pragma once

// Single-pixel-camera acquisition (y = Phi x, noise-free) and multi-rate
// training-set assembly by truncation and zero-padding.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "csmr/binary_io.hpp"
#include "csmr/dataio.hpp"
#include "csmr/error.hpp"
#include "csmr/rng.hpp"
#include "csmr/sensing.hpp"

namespace csmr {

/// Longest measurement vector used anywhere (measurement rate 0.25).
inline constexpr std::uint32_t kMaxMeasurements = 256;
inline constexpr std::uint32_t kMinMeasurements = 10;

/// How raw photodetector sums are scaled. `per_pixel` divides by n = 1024 so
/// entries land in [0, 1]; `raw` keeps the plain sum.
enum class MeasurementScale { per_pixel, raw };

inline MeasurementScale parse_measurement_scale(const std::string& s) {
  if (s == "n" || s == "per_pixel") return MeasurementScale::per_pixel;
  if (s == "raw") return MeasurementScale::raw;
  throw InvalidArgument("unknown measurement_scale '" + s + "' (expected n or raw)");
}

inline const char* to_string(MeasurementScale s) { return s == MeasurementScale::per_pixel ? "n" : "raw"; }

struct FullMeasurement {
  std::array<float, kMaxMeasurements> y{};
  std::uint8_t label = 0;
};

/// Binary row i dotted with the pixels, summed in increasing pixel order.
inline double row_dot(const SensingMatrix& m, std::uint32_t i, std::span<const float> pixels) {
  const auto words = m.row_words(i);
  double sum = 0.0;
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::uint64_t bits = words[w];
    const float* base = pixels.data() + w * 64;
    while (bits) {
      sum += base[std::countr_zero(bits)];
      bits &= bits - 1;
    }
  }
  return sum;
}

/// y[i] = (row_i . x) / 1024 for the first 256 rows.
inline FullMeasurement measure_full(const SensingMatrix& m, const ImageRecord& image,
                                    MeasurementScale scale = MeasurementScale::per_pixel) {
  if (m.n() != kPixels) throw InvalidArgument("measure_full: matrix n must be 1024");
  if (m.num_rows() < kMaxMeasurements)
    throw InvalidArgument("measure_full: matrix has fewer than 256 rows");
  FullMeasurement out;
  out.label = image.label;
  const double div = scale == MeasurementScale::per_pixel ? static_cast<double>(m.n()) : 1.0;
  for (std::uint32_t i = 0; i < kMaxMeasurements; ++i)
    out.y[i] = static_cast<float>(row_dot(m, i, image.pixels) / div);
  return out;
}

inline std::vector<FullMeasurement> measure_split(const SensingMatrix& m, const DatasetSplit& split,
                                                  MeasurementScale scale = MeasurementScale::per_pixel) {
  std::vector<FullMeasurement> out;
  out.reserve(split.records.size());
  for (const auto& rec : split.records) out.push_back(measure_full(m, rec, scale));
  return out;
}

/// First m entries of y followed by zeros, length 256.
inline std::array<float, kMaxMeasurements> truncate_pad(const FullMeasurement& y, std::uint32_t m) {
  if (m < 1 || m > kMaxMeasurements)
    throw InvalidArgument("truncate_pad: m=" + std::to_string(m) + " outside [1, 256]");
  std::array<float, kMaxMeasurements> out{};
  std::copy_n(y.y.begin(), m, out.begin());
  return out;
}

/// Network input of length out.size() (the model's input dimension D) seen by
/// a camera that took m measurements: the first min(m, D) entries of y, then
/// zeros. Covers both zero-padding (m < D) and truncation (m > D).
template <typename T>
void fill_input(const FullMeasurement& y, std::uint32_t m, std::span<T> out) {
  if (m < 1 || m > kMaxMeasurements)
    throw InvalidArgument("fill_input: m=" + std::to_string(m) + " outside [1, 256]");
  if (out.size() > kMaxMeasurements) throw InvalidArgument("fill_input: input dimension above 256");
  const std::size_t keep = std::min<std::size_t>(m, out.size());
  for (std::size_t i = 0; i < keep; ++i) out[i] = static_cast<T>(y.y[i]);
  std::fill(out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(), T{0});
}

// ---------------------------------------------------------------------------
// Rate schedules

class RateSchedule {
 public:
  /// Multi-rate schedule: strictly increasing, within [10, 256], starting at 10
  /// and ending at 256.
  RateSchedule(std::vector<std::uint32_t> points, std::string name = "custom")
      : points_(std::move(points)), name_(std::move(name)) {
    if (points_.size() < 2) throw InvalidArgument("RateSchedule: need at least two points");
    if (points_.front() != kMinMeasurements || points_.back() != kMaxMeasurements)
      throw InvalidArgument("RateSchedule: must start at 10 and end at 256");
    for (std::size_t i = 1; i < points_.size(); ++i)
      if (points_[i] <= points_[i - 1]) throw InvalidArgument("RateSchedule: points must strictly increase");
  }

  /// Degenerate one-point schedule of a single-rate training set.
  static RateSchedule single(std::uint32_t m) {
    if (m < 1 || m > kMaxMeasurements) throw InvalidArgument("RateSchedule::single: m outside [1, 256]");
    RateSchedule s;
    s.points_ = {m};
    s.name_ = "single-m" + std::to_string(m);
    return s;
  }

  const std::vector<std::uint32_t>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  const std::string& name() const { return name_; }
  bool is_single() const { return points_.size() == 1; }

  /// Short tag for artifact names: the preset name, single-m<M>, or custom-<hash>.
  std::string tag() const {
    if (name_ != "custom") return name_;
    std::ostringstream os;
    os << "custom-" << std::hex << (fnv1a64(to_list()) & 0xffffffffu);
    return os.str();
  }

  std::string to_list() const {
    std::string s;
    for (std::size_t i = 0; i < points_.size(); ++i) s += (i ? "," : "") + std::to_string(points_[i]);
    return s;
  }

  friend bool operator==(const RateSchedule&, const RateSchedule&) = default;

 private:
  RateSchedule() = default;
  std::vector<std::uint32_t> points_;
  std::string name_;
};

inline RateSchedule preset_schedule(const std::string& name) {
  if (name == "4pt") return RateSchedule({10, 51, 102, 256}, name);
  if (name == "6pt") return RateSchedule({10, 20, 51, 102, 150, 256}, name);
  if (name == "10pt") return RateSchedule({10, 18, 26, 34, 42, 51, 75, 102, 180, 256}, name);
  if (name == "50pt") {
    std::vector<std::uint32_t> pts;
    for (std::uint32_t m = 10; m <= 250; m += 5) pts.push_back(m);
    pts.push_back(256);
    return RateSchedule(std::move(pts), name);
  }
  throw InvalidArgument("unknown schedule preset '" + name + "' (expected 4pt, 6pt, 10pt or 50pt)");
}

/// "4pt" | "6pt" | "10pt" | "50pt" | "m=10,51,256".
inline RateSchedule parse_schedule(const std::string& text) {
  if (text.rfind("m=", 0) != 0) return preset_schedule(text);
  std::vector<std::uint32_t> pts;
  std::stringstream ss(text.substr(2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw InvalidArgument("bad measurement count '" + item + "'");
    pts.push_back(static_cast<std::uint32_t>(v));
  }
  return RateSchedule(std::move(pts));
}

// ---------------------------------------------------------------------------
// Multi-rate training set

struct MultiRateEntry {
  std::uint32_t image = 0;  // index into the measurement cache
  std::uint32_t m = 0;      // originating measurement count
};

/// Globally shuffled (image, m) pairs over a cache of 256-length measurements.
/// Inputs are materialized on demand.
class MultiRateSet {
 public:
  MultiRateSet(std::shared_ptr<const std::vector<FullMeasurement>> measurements, RateSchedule schedule,
               std::uint64_t shuffle_seed, std::uint32_t input_dim = kMaxMeasurements)
      : measurements_(std::move(measurements)),
        schedule_(std::move(schedule)),
        shuffle_seed_(shuffle_seed),
        input_dim_(input_dim) {
    if (!measurements_) throw InvalidArgument("MultiRateSet: null measurement cache");
    if (input_dim_ < 1 || input_dim_ > kMaxMeasurements)
      throw InvalidArgument("MultiRateSet: input dimension outside [1, 256]");
    const auto& pts = schedule_.points();
    entries_.reserve(measurements_->size() * pts.size());
    for (std::uint32_t i = 0; i < measurements_->size(); ++i)
      for (std::uint32_t m : pts) entries_.push_back({i, m});
    Rng rng(shuffle_seed_);
    rng.shuffle(std::span<MultiRateEntry>(entries_));
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint32_t input_dim() const { return input_dim_; }
  const RateSchedule& schedule() const { return schedule_; }
  std::uint64_t shuffle_seed() const { return shuffle_seed_; }
  std::span<const MultiRateEntry> entries() const { return entries_; }
  const std::vector<FullMeasurement>& measurements() const { return *measurements_; }

  std::uint8_t label(std::size_t i) const { return (*measurements_)[entries_.at(i).image].label; }

  template <typename T>
  void materialize(std::size_t i, std::span<T> out) const {
    if (out.size() != input_dim_) throw InvalidArgument("MultiRateSet: output span has wrong length");
    const auto& e = entries_.at(i);
    fill_input((*measurements_)[e.image], e.m, out);
  }

  std::vector<float> input(std::size_t i) const {
    std::vector<float> v(input_dim_);
    materialize(i, std::span<float>(v));
    return v;
  }

 private:
  std::shared_ptr<const std::vector<FullMeasurement>> measurements_;
  RateSchedule schedule_;
  std::uint64_t shuffle_seed_;
  std::uint32_t input_dim_;
  std::vector<MultiRateEntry> entries_;
};

/// Measures every image once and wraps the cache in a shuffled multi-rate set.
/// One-point schedules produce a single-rate set whose input dimension is that m.
inline MultiRateSet build_multirate(const DatasetSplit& split, const SensingMatrix& matrix,
                                    const RateSchedule& schedule, std::uint64_t shuffle_seed,
                                    MeasurementScale scale = MeasurementScale::per_pixel) {
  auto cache = std::make_shared<const std::vector<FullMeasurement>>(measure_split(matrix, split, scale));
  const std::uint32_t dim = schedule.is_single() ? schedule.points().front() : kMaxMeasurements;
  return MultiRateSet(std::move(cache), schedule, shuffle_seed, dim);
}

// ---------------------------------------------------------------------------
// Measurement cache file
//
//   "CSMC" | u32 version | u64 matrix fingerprint | u32 count |
//   count * (u8 label | 256 f32)

inline constexpr std::uint32_t kCacheFormatVersion = 1;
inline constexpr std::size_t kCacheHeaderBytes = 4 + 4 + 8 + 4;
inline constexpr std::size_t kCacheRecordBytes = 1 + kMaxMeasurements * 4;

inline void write_cache(const std::filesystem::path& path, std::span<const FullMeasurement> ms,
                        std::uint64_t matrix_fp) {
  ByteWriter w;
  w.bytes("CSMC");
  w.u32(kCacheFormatVersion);
  w.u64(matrix_fp);
  w.u32(static_cast<std::uint32_t>(ms.size()));
  for (const auto& m : ms) {
    w.u8(m.label);
    for (float v : m.y) w.f32(v);
  }
  write_file(path, w.data());
}

/// Reads a cache; throws DependencyError if it was built against another matrix.
inline std::vector<FullMeasurement> read_cache(const std::filesystem::path& path,
                                               std::uint64_t expected_matrix_fp) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path.string());
  r.expect_magic("CSMC");
  if (const auto v = r.u32(); v != kCacheFormatVersion)
    r.fail("unsupported cache format version " + std::to_string(v));
  const auto fp = r.u64();
  if (fp != expected_matrix_fp) {
    std::ostringstream os;
    os << path.string() << ": measurement cache was built for matrix " << std::hex << fp
       << ", not " << expected_matrix_fp << "; rebuild it with `cache`";
    throw DependencyError(os.str());
  }
  const auto count = r.u32();
  std::vector<FullMeasurement> out(count);
  for (auto& m : out) {
    m.label = r.u8();
    for (float& v : m.y) v = r.f32();
  }
  r.expect_end();
  return out;
}

inline std::vector<FullMeasurement> cache_measurements(const DatasetSplit& split, const SensingMatrix& matrix,
                                                       const std::filesystem::path& path,
                                                       MeasurementScale scale = MeasurementScale::per_pixel) {
  auto ms = measure_split(matrix, split, scale);
  write_cache(path, ms, matrix_fingerprint(matrix));
  return ms;
}

}  // namespace csmr
