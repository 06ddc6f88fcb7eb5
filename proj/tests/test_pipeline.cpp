#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "csmr/pipeline.hpp"
#include "test_util.hpp"

using namespace csmr;
using namespace csmr::testing;

namespace {

const SensingMatrix& pc() {
  static const SensingMatrix m = build_pc();
  return m;
}

const SensingMatrix& pwh() {
  static const SensingMatrix m = build_pwh(1024, 2);
  return m;
}

// Same accumulation order as the library: increasing pixel index.
float naive_measurement(const SensingMatrix& m, std::uint32_t i, const ImageRecord& r) {
  const auto row = m.row(i);
  double s = 0;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (row[j]) s += r.pixels[j];
  return static_cast<float>(s / 1024.0);
}

}  // namespace

TEST(Measure, ZeroImageAndAllOnes) {
  ImageRecord zero;
  const auto y0 = measure_full(pc(), zero);
  EXPECT_TRUE(std::all_of(y0.y.begin(), y0.y.end(), [](float v) { return v == 0.0f; }));
  ImageRecord ones;
  ones.pixels.fill(1.0f);
  EXPECT_EQ(measure_full(pc(), ones).y[0], 1.0f);
}

TEST(Measure, MatchesNaiveDotExactly) {
  std::mt19937_64 gen(12);
  for (const SensingMatrix* m : {&pc(), &pwh()})
    for (int t = 0; t < 3; ++t) {
      const auto r = random_record(gen);
      const auto y = measure_full(*m, r);
      EXPECT_EQ(y.label, r.label);
      for (std::uint32_t i = 0; i < 256; ++i) ASSERT_EQ(y.y[i], naive_measurement(*m, i, r)) << i;
    }
}

TEST(Measure, RangeAndPcMeanIntensity) {
  std::mt19937_64 gen(2);
  for (int t = 0; t < 5; ++t) {
    const auto r = random_record(gen);
    const auto y = measure_full(pc(), r);
    for (float v : y.y) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    double mean = 0;
    for (float p : r.pixels) mean += p;
    EXPECT_NEAR(y.y[0], mean / 1024.0, 1e-6);
  }
}

TEST(Measure, RawScaleSkipsDivision) {
  ImageRecord ones;
  ones.pixels.fill(1.0f);
  EXPECT_EQ(measure_full(pc(), ones, MeasurementScale::raw).y[0], 1024.0f);
  EXPECT_EQ(parse_measurement_scale("n"), MeasurementScale::per_pixel);
  EXPECT_THROW(parse_measurement_scale("zscore"), InvalidArgument);
}

TEST(Measure, RejectsShortMatrix) {
  const auto small = pc().leading_rows(100);
  EXPECT_THROW(measure_full(small, ImageRecord{}), InvalidArgument);
}

TEST(TruncatePad, IdentityAndTail) {
  std::mt19937_64 gen(5);
  const auto y = measure_full(pwh(), random_record(gen));
  const auto full = truncate_pad(y, 256);
  EXPECT_TRUE(std::equal(full.begin(), full.end(), y.y.begin()));
  const auto t10 = truncate_pad(y, 10);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(t10[i], y.y[i]);
  for (int i = 10; i < 256; ++i) EXPECT_EQ(t10[i], 0.0f);
  EXPECT_THROW(truncate_pad(y, 0), InvalidArgument);
  EXPECT_THROW(truncate_pad(y, 257), InvalidArgument);
}

TEST(TruncatePad, NestingForAllM) {
  std::mt19937_64 gen(6);
  for (int t = 0; t < 4; ++t) {
    const auto y = measure_full(pc(), random_record(gen));
    for (std::uint32_t m1 = 1; m1 <= 256; m1 += 7)
      for (std::uint32_t m2 = m1; m2 <= 256; m2 += 13) {
        const auto a = truncate_pad(y, m1), b = truncate_pad(y, m2);
        ASSERT_TRUE(std::equal(a.begin(), a.begin() + m1, b.begin()));
      }
  }
}

TEST(TruncatePad, EqualsRemeasuringWithLeadingRows) {
  std::mt19937_64 gen(7);
  const auto r = random_record(gen);
  const auto y = measure_full(pwh(), r);
  for (std::uint32_t m : {10u, 51u, 200u}) {
    const auto sub = pwh().leading_rows(m);
    const auto padded = truncate_pad(y, m);
    for (std::uint32_t i = 0; i < m; ++i) ASSERT_EQ(padded[i], static_cast<float>(row_dot(sub, i, r.pixels) / 1024.0));
  }
}

TEST(FillInput, PadsAndTruncatesToModelDimension) {
  std::mt19937_64 gen(8);
  const auto y = measure_full(pc(), random_record(gen));
  std::vector<double> d51(51);
  fill_input(y, 102, std::span<double>(d51));  // camera has more than the model takes
  for (int i = 0; i < 51; ++i) EXPECT_EQ(d51[i], y.y[i]);
  std::vector<double> d102(102);
  fill_input(y, 51, std::span<double>(d102));  // camera has fewer: zero-pad
  for (int i = 0; i < 51; ++i) EXPECT_EQ(d102[i], y.y[i]);
  for (int i = 51; i < 102; ++i) EXPECT_EQ(d102[i], 0.0);
}

TEST(Schedules, Presets) {
  EXPECT_EQ(preset_schedule("4pt").points(), (std::vector<std::uint32_t>{10, 51, 102, 256}));
  EXPECT_EQ(preset_schedule("6pt").points(), (std::vector<std::uint32_t>{10, 20, 51, 102, 150, 256}));
  EXPECT_EQ(preset_schedule("10pt").points(),
            (std::vector<std::uint32_t>{10, 18, 26, 34, 42, 51, 75, 102, 180, 256}));
  const auto p50 = preset_schedule("50pt").points();
  EXPECT_EQ(p50.size(), 50u);
  EXPECT_EQ(p50[0], 10u);
  EXPECT_EQ(p50[1], 15u);
  EXPECT_EQ(p50[48], 250u);
  EXPECT_EQ(p50[49], 256u);
  EXPECT_THROW(preset_schedule("3pt"), InvalidArgument);
}

TEST(Schedules, Validation) {
  EXPECT_NO_THROW(RateSchedule({10, 256}));
  EXPECT_THROW(RateSchedule({11, 256}), InvalidArgument);
  EXPECT_THROW(RateSchedule({10, 255}), InvalidArgument);
  EXPECT_THROW(RateSchedule({10, 50, 50, 256}), InvalidArgument);
  EXPECT_THROW(RateSchedule({10, 60, 50, 256}), InvalidArgument);
  EXPECT_EQ(parse_schedule("m=10,100,256").points(), (std::vector<std::uint32_t>{10, 100, 256}));
  EXPECT_EQ(parse_schedule("10pt"), preset_schedule("10pt"));
  EXPECT_THROW(parse_schedule("m=10,x,256"), InvalidArgument);
  const auto s = RateSchedule::single(102);
  EXPECT_TRUE(s.is_single());
  EXPECT_EQ(s.tag(), "single-m102");
  EXPECT_EQ(RateSchedule({10, 100, 256}).tag().rfind("custom-", 0), 0u);
}

TEST(MultiRate, CardinalityZerosAndLabels) {
  const auto split = random_split(40, 3);
  const auto schedule = preset_schedule("10pt");
  const auto set = build_multirate(split, pc(), schedule, 11);
  ASSERT_EQ(set.size(), 40u * 10);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto e = set.entries()[i];
    const auto in = set.input(i);
    for (std::size_t k = e.m; k < 256; ++k) ASSERT_EQ(in[k], 0.0f);
    EXPECT_EQ(set.label(i), split.records[e.image].label);
  }
}

TEST(MultiRate, ShuffleIsPermutationOfEnumeration) {
  const auto split = random_split(50, 4);
  const auto schedule = preset_schedule("4pt");
  const auto set = build_multirate(split, pwh(), schedule, 5);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> got, want;
  for (const auto& e : set.entries()) got.emplace_back(e.image, e.m);
  for (std::uint32_t i = 0; i < 50; ++i)
    for (std::uint32_t m : schedule.points()) want.emplace_back(i, m);
  EXPECT_NE(got, want);
  std::sort(got.begin(), got.end());
  EXPECT_EQ(got, want);
}

TEST(MultiRate, RatesAreInterleaved) {
  const auto split = random_split(200, 5);
  const auto schedule = preset_schedule("10pt");
  const auto set = build_multirate(split, pc(), schedule, 6);
  const std::size_t window = 10 * schedule.size();
  for (std::size_t start = 0; start + window <= set.size(); start += window) {
    std::set<std::uint32_t> ms;
    for (std::size_t i = start; i < start + window; ++i) ms.insert(set.entries()[i].m);
    ASSERT_GE(ms.size(), 2u);
  }
}

TEST(MultiRate, SeedDeterminismAndSingleRate) {
  const auto split = random_split(30, 6);
  const auto a = build_multirate(split, pc(), preset_schedule("6pt"), 9);
  const auto b = build_multirate(split, pc(), preset_schedule("6pt"), 9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a.entries()[i].image, b.entries()[i].image);
    ASSERT_EQ(a.entries()[i].m, b.entries()[i].m);
  }
  const auto single = build_multirate(split, pc(), RateSchedule::single(51), 1);
  EXPECT_EQ(single.size(), 30u);
  EXPECT_EQ(single.input_dim(), 51u);
}

TEST(Cache, RoundTripSizeAndFingerprint) {
  ScratchDir dir("cache");
  const auto split = random_split(7, 9);
  const auto ms = cache_measurements(split, pwh(), dir / "c.csmc");
  EXPECT_EQ(fs::file_size(dir / "c.csmc"), 20u + 7 * (256 * 4 + 1));
  EXPECT_EQ(fs::file_size(dir / "c.csmc"), kCacheHeaderBytes + 7 * kCacheRecordBytes);
  const auto back = read_cache(dir / "c.csmc", matrix_fingerprint(pwh()));
  ASSERT_EQ(back.size(), ms.size());
  for (std::size_t i = 0; i < ms.size(); ++i) {
    EXPECT_EQ(back[i].y, ms[i].y);
    EXPECT_EQ(back[i].label, ms[i].label);
  }
  EXPECT_THROW(read_cache(dir / "c.csmc", matrix_fingerprint(pc())), DependencyError);
  auto bytes = slurp(dir / "c.csmc");
  bytes[1] = '?';
  write_bytes(dir / "d.csmc", bytes);
  EXPECT_THROW(read_cache(dir / "d.csmc", matrix_fingerprint(pwh())), FormatError);
}

TEST(Cache, FingerprintIsHashOfMatrixFile) {
  ScratchDir dir("cache");
  save_matrix(pwh(), dir / "m.csmx");
  EXPECT_EQ(file_fingerprint(dir / "m.csmx"), matrix_fingerprint(pwh()));
}
