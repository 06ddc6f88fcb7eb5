#pragma once

// MNIST (IDX) and CIFAR-10 (binary batch) ingestion, normalized to 32x32
// grayscale records with intensities in [0, 1].

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "csmr/binary_io.hpp"
#include "csmr/error.hpp"
#include "csmr/sensing.hpp"

namespace csmr {

/// Channel-planar, row-major float image.
struct Image {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 1;
  std::vector<float> data;

  Image() = default;
  Image(std::uint32_t h, std::uint32_t w, std::uint32_t c = 1)
      : height(h), width(w), channels(c), data(std::size_t{h} * w * c, 0.0f) {}

  float& at(std::uint32_t c, std::uint32_t y, std::uint32_t x) {
    return data[(std::size_t{c} * height + y) * width + x];
  }
  float at(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
    return data[(std::size_t{c} * height + y) * width + x];
  }
};

enum class SplitName { train, test };

inline const char* to_string(SplitName s) { return s == SplitName::train ? "train" : "test"; }

/// Images as parsed from the source files, before normalization to 32x32 gray.
struct RawSplit {
  SplitName name = SplitName::train;
  std::vector<Image> images;
  std::vector<std::uint8_t> labels;
};

struct ImageRecord {
  std::array<float, kPixels> pixels{};  // row-major 32x32, in [0, 1]
  std::uint8_t label = 0;               // 0..9
};

struct DatasetSplit {
  SplitName name = SplitName::train;
  std::vector<ImageRecord> records;

  std::size_t size() const { return records.size(); }
};

enum class DatasetKind { mnist, cifar10 };

inline const char* to_string(DatasetKind d) { return d == DatasetKind::mnist ? "mnist" : "cifar10"; }

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "mnist") return DatasetKind::mnist;
  if (s == "cifar10") return DatasetKind::cifar10;
  throw InvalidArgument("unknown dataset '" + s + "' (expected mnist or cifar10)");
}

enum class GrayscaleMode { luma601, mean };

inline GrayscaleMode parse_grayscale_mode(const std::string& s) {
  if (s == "luma601") return GrayscaleMode::luma601;
  if (s == "mean") return GrayscaleMode::mean;
  throw InvalidArgument("unknown grayscale mode '" + s + "' (expected luma601 or mean)");
}

inline const char* to_string(GrayscaleMode g) { return g == GrayscaleMode::luma601 ? "luma601" : "mean"; }

// ---------------------------------------------------------------------------
// MNIST

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace detail

/// Parses an IDX image file and its label file. Pixels are scaled by 1/255.
inline RawSplit load_mnist(const std::filesystem::path& images_path,
                           const std::filesystem::path& labels_path,
                           SplitName name = SplitName::train) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  const std::string in = images_path.string();
  const std::string ln = labels_path.string();

  if (img.size() < 16) throw FormatError(in, img.size(), "truncated IDX image header");
  if (detail::read_be32(img, 0) != detail::kIdxImagesMagic)
    throw FormatError(in, 0, "not an IDX image file (magic != 0x00000803)");
  const std::uint32_t count = detail::read_be32(img, 4);
  const std::uint32_t rows = detail::read_be32(img, 8);
  const std::uint32_t cols = detail::read_be32(img, 12);
  const std::size_t per = std::size_t{rows} * cols;
  if (img.size() < 16 + per * count)
    throw FormatError(in, img.size(), "truncated: header promises " + std::to_string(count) +
                                          " images of " + std::to_string(rows) + "x" +
                                          std::to_string(cols));

  if (lab.size() < 8) throw FormatError(ln, lab.size(), "truncated IDX label header");
  if (detail::read_be32(lab, 0) != detail::kIdxLabelsMagic)
    throw FormatError(ln, 0, "not an IDX label file (magic != 0x00000801)");
  const std::uint32_t label_count = detail::read_be32(lab, 4);
  if (label_count != count)
    throw FormatError(ln, 4, "label count " + std::to_string(label_count) +
                                 " does not match image count " + std::to_string(count));
  if (lab.size() < 8 + std::size_t{count}) throw FormatError(ln, lab.size(), "truncated label data");

  RawSplit out;
  out.name = name;
  out.images.reserve(count);
  out.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Image im(rows, cols, 1);
    const std::size_t off = 16 + per * i;
    for (std::size_t p = 0; p < per; ++p) im.data[p] = static_cast<float>(img[off + p]) / 255.0f;
    const std::uint8_t label = lab[8 + i];
    if (label > 9) throw FormatError(ln, 8 + i, "label " + std::to_string(label) + " > 9");
    out.images.push_back(std::move(im));
    out.labels.push_back(label);
  }
  return out;
}

/// Centers a 28x28 image in a 32x32 zero canvas (2 pixels of zeros per side).
inline Image pad_to_32(const Image& in) {
  if (in.height != 28 || in.width != 28 || in.channels != 1)
    throw InvalidArgument("pad_to_32: expected a 28x28 single-channel image, got " +
                          std::to_string(in.height) + "x" + std::to_string(in.width) + "x" +
                          std::to_string(in.channels));
  Image out(kImageSide, kImageSide, 1);
  for (std::uint32_t y = 0; y < 28; ++y)
    for (std::uint32_t x = 0; x < 28; ++x) out.at(0, y + 2, x + 2) = in.at(0, y, x);
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kPixels;

/// Parses CIFAR-10 binary batches (label byte + planar R, G, B), in file order.
inline RawSplit load_cifar10(std::span<const std::filesystem::path> batch_paths,
                             SplitName name = SplitName::train) {
  RawSplit out;
  out.name = name;
  for (const auto& path : batch_paths) {
    const auto bytes = read_file(path);
    if (bytes.size() % kCifarRecordBytes != 0)
      throw FormatError(path.string(), bytes.size(),
                        "length " + std::to_string(bytes.size()) + " is not a multiple of 3073");
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t off = r * kCifarRecordBytes;
      if (bytes[off] > 9)
        throw FormatError(path.string(), off, "label byte " + std::to_string(bytes[off]) + " > 9");
      Image im(kImageSide, kImageSide, 3);
      for (std::size_t p = 0; p < 3 * kPixels; ++p)
        im.data[p] = static_cast<float>(bytes[off + 1 + p]) / 255.0f;
      out.labels.push_back(bytes[off]);
      out.images.push_back(std::move(im));
    }
  }
  return out;
}

/// Reduces a 3-channel image to its intensity channel.
/// luma601: 0.299 R + 0.587 G + 0.114 B; mean: (R + G + B) / 3.
inline Image to_grayscale(const Image& rgb, GrayscaleMode mode = GrayscaleMode::luma601) {
  if (rgb.channels != 3) throw InvalidArgument("to_grayscale: expected 3 channels");
  Image out(rgb.height, rgb.width, 1);
  const std::size_t plane = std::size_t{rgb.height} * rgb.width;
  for (std::size_t p = 0; p < plane; ++p) {
    const double r = rgb.data[p], g = rgb.data[plane + p], b = rgb.data[2 * plane + p];
    const double y = mode == GrayscaleMode::luma601 ? 0.299 * r + 0.587 * g + 0.114 * b
                                                    : (r + g + b) / 3.0;
    out.data[p] = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return out;
}

inline ImageRecord make_record(const Image& gray32, std::uint8_t label) {
  if (gray32.height != kImageSide || gray32.width != kImageSide || gray32.channels != 1)
    throw InvalidArgument("make_record: expected a 32x32 single-channel image");
  if (label > 9) throw InvalidArgument("make_record: label out of range");
  ImageRecord rec;
  for (std::size_t p = 0; p < kPixels; ++p) {
    const float v = gray32.data[p];
    if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("make_record: pixel outside [0,1]");
    rec.pixels[p] = v;
  }
  rec.label = label;
  return rec;
}

// ---------------------------------------------------------------------------
// Standard file layouts

inline std::filesystem::path mnist_images_file(const std::filesystem::path& dir, SplitName s) {
  return dir / (s == SplitName::train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte");
}

inline std::filesystem::path mnist_labels_file(const std::filesystem::path& dir, SplitName s) {
  return dir / (s == SplitName::train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte");
}

/// data_batch_1..5.bin for train, test_batch.bin for test. Also looks inside
/// a cifar-10-batches-bin/ subdirectory.
inline std::vector<std::filesystem::path> cifar10_batch_files(const std::filesystem::path& dir,
                                                              SplitName s) {
  std::filesystem::path root = dir;
  if (!std::filesystem::exists(root / "test_batch.bin") &&
      std::filesystem::exists(dir / "cifar-10-batches-bin"))
    root = dir / "cifar-10-batches-bin";
  std::vector<std::filesystem::path> files;
  if (s == SplitName::train) {
    for (int i = 1; i <= 5; ++i) files.push_back(root / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(root / "test_batch.bin");
  }
  return files;
}

inline std::vector<std::filesystem::path> dataset_source_files(DatasetKind d,
                                                               const std::filesystem::path& dir,
                                                               SplitName s) {
  if (d == DatasetKind::mnist) return {mnist_images_file(dir, s), mnist_labels_file(dir, s)};
  return cifar10_batch_files(dir, s);
}

inline bool dataset_available(DatasetKind d, const std::filesystem::path& dir) {
  for (SplitName s : {SplitName::train, SplitName::test})
    for (const auto& f : dataset_source_files(d, dir, s))
      if (!std::filesystem::is_regular_file(f)) return false;
  return true;
}

/// Loads one split and normalizes it: MNIST is zero-padded to 32x32, CIFAR-10
/// is reduced to grayscale.
inline DatasetSplit prepare_split(DatasetKind d, const std::filesystem::path& dir, SplitName s,
                                  GrayscaleMode mode = GrayscaleMode::luma601) {
  DatasetSplit out;
  out.name = s;
  if (d == DatasetKind::mnist) {
    const RawSplit raw = load_mnist(mnist_images_file(dir, s), mnist_labels_file(dir, s), s);
    out.records.reserve(raw.images.size());
    for (std::size_t i = 0; i < raw.images.size(); ++i)
      out.records.push_back(make_record(pad_to_32(raw.images[i]), raw.labels[i]));
  } else {
    const auto files = cifar10_batch_files(dir, s);
    const RawSplit raw = load_cifar10(files, s);
    out.records.reserve(raw.images.size());
    for (std::size_t i = 0; i < raw.images.size(); ++i)
      out.records.push_back(make_record(to_grayscale(raw.images[i], mode), raw.labels[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prepared split file
//
//   "CSMD" | u32 version | u8 split (0 = train, 1 = test) | u32 count |
//   count * (u8 label | 1024 f32 pixels)

inline constexpr std::uint32_t kSplitFormatVersion = 1;

inline void save_split(const DatasetSplit& split, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes("CSMD");
  w.u32(kSplitFormatVersion);
  w.u8(split.name == SplitName::train ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(split.records.size()));
  for (const auto& r : split.records) {
    w.u8(r.label);
    for (float v : r.pixels) w.f32(v);
  }
  write_file(path, w.data());
}

inline DatasetSplit load_split(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path.string());
  r.expect_magic("CSMD");
  if (const auto v = r.u32(); v != kSplitFormatVersion)
    r.fail("unsupported split format version " + std::to_string(v));
  DatasetSplit out;
  out.name = r.u8() == 0 ? SplitName::train : SplitName::test;
  const auto count = r.u32();
  out.records.resize(count);
  for (auto& rec : out.records) {
    rec.label = r.u8();
    if (rec.label > 9) r.fail("label out of range");
    for (float& v : rec.pixels) v = r.f32();
  }
  r.expect_end();
  return out;
}

}  // namespace csmr
