#pragma once

// Binary sensing matrices for a 32x32 single-pixel camera and the Walsh-Hadamard
// kernels behind them.
//
// Row storage: row-major, 64 entries per uint64_t word, least-significant bit
// first. Entry (r, j) lives in word r * words_per_row + j / 64, bit j % 64.
// Pixel index j of a 32x32 pattern is y * 32 + x (row-major).

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "csmr/binary_io.hpp"
#include "csmr/error.hpp"
#include "csmr/rng.hpp"

namespace csmr {

inline constexpr std::uint32_t kImageSide = 32;
inline constexpr std::uint32_t kPixels = kImageSide * kImageSide;

// ---------------------------------------------------------------------------
// Walsh-Hadamard kernels

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place unnormalized fast Walsh-Hadamard transform in Sylvester (natural)
/// order: v <- H_n v. Exact for integer T as long as n * max|v| fits.
template <typename T>
void fwht_inplace(std::span<T> v) {
  const std::size_t n = v.size();
  if (!is_power_of_two(n))
    throw InvalidArgument("fwht: length " + std::to_string(n) + " is not a power of two");
  for (std::size_t half = 1; half < n; half <<= 1) {
    for (std::size_t base = 0; base < n; base += 2 * half) {
      for (std::size_t i = base; i < base + half; ++i) {
        const T a = v[i];
        const T b = v[i + half];
        v[i] = a + b;
        v[i + half] = a - b;
      }
    }
  }
}

template <typename T>
std::vector<T> fwht(std::span<const T> v) {
  std::vector<T> out(v.begin(), v.end());
  fwht_inplace(std::span<T>(out));
  return out;
}

template <typename T>
std::vector<T> fwht(const std::vector<T>& v) {
  return fwht(std::span<const T>(v));
}

/// H_n[i, j] for the Sylvester construction.
constexpr int sylvester_sign(std::uint32_t i, std::uint32_t j) {
  return (std::popcount(i & j) & 1) ? -1 : 1;
}

constexpr std::uint32_t reverse_bits(std::uint32_t v, unsigned bits) {
  std::uint32_t r = 0;
  for (unsigned b = 0; b < bits; ++b) r |= ((v >> b) & 1u) << (bits - 1 - b);
  return r;
}

/// Natural-order Hadamard row holding the Walsh function of sequency k:
/// bit-reverse of the Gray code of k.
constexpr std::uint32_t sequency_to_natural(std::uint32_t k, unsigned log2n) {
  return reverse_bits(k ^ (k >> 1), log2n);
}

/// k-th sequency-ordered Walsh function on 2^p points, entries in {-1, +1}.
/// Has exactly k sign changes.
inline std::vector<int> sequency_walsh_row(std::uint32_t k, unsigned p) {
  if (p >= 31) throw InvalidArgument("sequency_walsh_row: p too large");
  const std::uint32_t n = 1u << p;
  if (k >= n)
    throw InvalidArgument("sequency_walsh_row: k=" + std::to_string(k) + " out of range for 2^" +
                          std::to_string(p));
  const std::uint32_t h = sequency_to_natural(k, p);
  std::vector<int> row(n);
  for (std::uint32_t j = 0; j < n; ++j) row[j] = sylvester_sign(h, j);
  return row;
}

// ---------------------------------------------------------------------------
// Matrix types

enum class MatrixKind : std::uint8_t { pwh = 0, pc = 1 };

inline const char* to_string(MatrixKind k) { return k == MatrixKind::pwh ? "pwh" : "pc"; }

inline MatrixKind parse_matrix_kind(const std::string& s) {
  if (s == "pwh") return MatrixKind::pwh;
  if (s == "pc") return MatrixKind::pc;
  throw InvalidArgument("unknown matrix kind '" + s + "' (expected pwh or pc)");
}

/// 2D sequency indices of a PC row. kx varies along x (columns), ky along y.
struct SequencyPair {
  std::uint8_t kx = 0;
  std::uint8_t ky = 0;

  /// Dyadic scale band: 0 iff max < 8, 1 iff max < 16, 2 otherwise.
  constexpr int band() const {
    const int m = std::max(kx, ky);
    return m < 8 ? 0 : (m < 16 ? 1 : 2);
  }

  friend constexpr bool operator==(const SequencyPair&, const SequencyPair&) = default;
};

/// Where a row came from: the permuted Hadamard row index (PWH) or a sequency pair (PC).
using RowOrigin = std::variant<std::uint32_t, SequencyPair>;

/// Immutable binary {0,1} matrix with bit-packed rows.
class SensingMatrix {
 public:
  SensingMatrix(MatrixKind kind, std::uint32_t n, std::uint32_t num_rows, std::uint64_t seed,
                std::vector<std::uint64_t> words, std::vector<RowOrigin> provenance = {})
      : kind_(kind),
        n_(n),
        num_rows_(num_rows),
        seed_(seed),
        words_(std::move(words)),
        provenance_(std::move(provenance)) {
    if (n_ == 0 || n_ % 64 != 0) throw InvalidArgument("SensingMatrix: n must be a multiple of 64");
    if (num_rows_ > n_) throw InvalidArgument("SensingMatrix: num_rows exceeds n");
    if (words_.size() != std::size_t{num_rows_} * words_per_row())
      throw InvalidArgument("SensingMatrix: packed word count does not match shape");
    if (!provenance_.empty() && provenance_.size() != num_rows_)
      throw InvalidArgument("SensingMatrix: provenance size does not match num_rows");
  }

  MatrixKind kind() const { return kind_; }
  std::uint32_t n() const { return n_; }
  std::uint32_t num_rows() const { return num_rows_; }
  std::uint64_t seed() const { return seed_; }
  std::uint32_t words_per_row() const { return n_ / 64; }
  std::span<const std::uint64_t> words() const { return words_; }
  const std::vector<RowOrigin>& provenance() const { return provenance_; }

  std::span<const std::uint64_t> row_words(std::uint32_t i) const {
    check_row(i);
    return std::span(words_).subspan(std::size_t{i} * words_per_row(), words_per_row());
  }

  bool bit(std::uint32_t i, std::uint32_t j) const {
    check_row(i);
    if (j >= n_) throw InvalidArgument("SensingMatrix: column index out of range");
    return (words_[std::size_t{i} * words_per_row() + j / 64] >> (j % 64)) & 1u;
  }

  std::vector<std::uint8_t> row(std::uint32_t i) const {
    std::vector<std::uint8_t> out(n_);
    for (std::uint32_t j = 0; j < n_; ++j) out[j] = bit(i, j) ? 1 : 0;
    return out;
  }

  /// Row i mapped through entry -> 2 * entry - 1.
  std::vector<int> signed_row(std::uint32_t i) const {
    std::vector<int> out(n_);
    for (std::uint32_t j = 0; j < n_; ++j) out[j] = bit(i, j) ? 1 : -1;
    return out;
  }

  /// Dot product of signed rows a and b, via popcount of the XOR.
  std::int64_t signed_dot(std::uint32_t a, std::uint32_t b) const {
    const auto ra = row_words(a);
    const auto rb = row_words(b);
    std::int64_t differ = 0;
    for (std::size_t w = 0; w < ra.size(); ++w) differ += std::popcount(ra[w] ^ rb[w]);
    return static_cast<std::int64_t>(n_) - 2 * differ;
  }

  /// The first m rows as a new matrix (same kind, seed).
  SensingMatrix leading_rows(std::uint32_t m) const {
    if (m > num_rows_) throw InvalidArgument("leading_rows: m exceeds num_rows");
    std::vector<std::uint64_t> w(words_.begin(), words_.begin() + std::size_t{m} * words_per_row());
    std::vector<RowOrigin> p;
    if (!provenance_.empty()) p.assign(provenance_.begin(), provenance_.begin() + m);
    return SensingMatrix(kind_, n_, m, seed_, std::move(w), std::move(p));
  }

  friend bool operator==(const SensingMatrix& a, const SensingMatrix& b) {
    return a.kind_ == b.kind_ && a.n_ == b.n_ && a.num_rows_ == b.num_rows_ &&
           a.seed_ == b.seed_ && a.words_ == b.words_;
  }

 private:
  void check_row(std::uint32_t i) const {
    if (i >= num_rows_)
      throw InvalidArgument("SensingMatrix: row " + std::to_string(i) + " out of range (" +
                            std::to_string(num_rows_) + " rows)");
  }

  MatrixKind kind_;
  std::uint32_t n_;
  std::uint32_t num_rows_;
  std::uint64_t seed_;
  std::vector<std::uint64_t> words_;
  std::vector<RowOrigin> provenance_;
};

// ---------------------------------------------------------------------------
// Construction

namespace detail {

inline void require_1024(std::uint32_t n, const char* who) {
  if (n != kPixels)
    throw InvalidArgument(std::string(who) + ": unsupported size " + std::to_string(n) +
                          " (only 1024 = 32x32 is supported)");
}

inline void set_bit(std::vector<std::uint64_t>& words, std::size_t row, std::uint32_t wpr,
                    std::uint32_t j) {
  words[row * wpr + j / 64] |= std::uint64_t{1} << (j % 64);
}

}  // namespace detail

/// PC row order: band ascending, then kx + ky, then kx.
inline std::vector<SequencyPair> pc_row_order() {
  std::vector<SequencyPair> pairs;
  pairs.reserve(kPixels);
  for (std::uint8_t ky = 0; ky < kImageSide; ++ky)
    for (std::uint8_t kx = 0; kx < kImageSide; ++kx) pairs.push_back({kx, ky});
  std::sort(pairs.begin(), pairs.end(), [](const SequencyPair& a, const SequencyPair& b) {
    return std::tuple(a.band(), a.kx + a.ky, a.kx) < std::tuple(b.band(), b.kx + b.ky, b.kx);
  });
  return pairs;
}

/// Partial-Complete matrix: all 1024 separable 2D Walsh patterns on the 32x32
/// grid, pixel (x, y) = w_kx[x] * w_ky[y], binarized by (v + 1) / 2, in
/// pc_row_order(). The 64 band-0 rows (both sequencies < 8) come first and are
/// constant on every aligned 4x4 block.
inline SensingMatrix build_pc(std::uint32_t n = kPixels) {
  detail::require_1024(n, "build_pc");
  std::array<std::uint32_t, kImageSide> natural{};
  for (std::uint32_t k = 0; k < kImageSide; ++k) natural[k] = sequency_to_natural(k, 5);

  const auto order = pc_row_order();
  const std::uint32_t wpr = n / 64;
  std::vector<std::uint64_t> words(std::size_t{n} * wpr, 0);
  std::vector<RowOrigin> provenance;
  provenance.reserve(n);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto [kx, ky] = order[r];
    for (std::uint32_t y = 0; y < kImageSide; ++y) {
      const int sy = sylvester_sign(natural[ky], y);
      for (std::uint32_t x = 0; x < kImageSide; ++x)
        if (sy * sylvester_sign(natural[kx], x) > 0) detail::set_bit(words, r, wpr, y * kImageSide + x);
    }
    provenance.emplace_back(order[r]);
  }
  return SensingMatrix(MatrixKind::pc, n, n, 0, std::move(words), std::move(provenance));
}

/// PWH matrix from explicit permutations: entry (i, j) = (1 + H[row_perm[i], col_perm[j]]) / 2.
inline SensingMatrix build_pwh_from_permutations(std::span<const std::uint32_t> row_perm,
                                                 std::span<const std::uint32_t> col_perm,
                                                 std::uint64_t seed) {
  const auto n = static_cast<std::uint32_t>(row_perm.size());
  detail::require_1024(n, "build_pwh");
  if (col_perm.size() != n) throw InvalidArgument("build_pwh: permutation sizes differ");
  const std::uint32_t wpr = n / 64;
  std::vector<std::uint64_t> words(std::size_t{n} * wpr, 0);
  std::vector<RowOrigin> provenance;
  provenance.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t h = row_perm[i];
    if (h >= n) throw InvalidArgument("build_pwh: row permutation entry out of range");
    for (std::uint32_t j = 0; j < n; ++j)
      if (sylvester_sign(h, col_perm[j]) > 0) detail::set_bit(words, i, wpr, j);
    provenance.emplace_back(h);
  }
  return SensingMatrix(MatrixKind::pwh, n, n, seed, std::move(words), std::move(provenance));
}

/// Permuted Walsh-Hadamard matrix. Rng(seed) draws the row permutation first,
/// then the column permutation. Same seed, same bits.
inline SensingMatrix build_pwh(std::uint32_t n, std::uint64_t seed) {
  detail::require_1024(n, "build_pwh");
  Rng rng(seed);
  const auto rows = rng.permutation(n);
  const auto cols = rng.permutation(n);
  return build_pwh_from_permutations(rows, cols, seed);
}

inline SensingMatrix build_matrix(MatrixKind kind, std::uint64_t seed) {
  return kind == MatrixKind::pc ? build_pc(kPixels) : build_pwh(kPixels, seed);
}

using Pattern32 = std::array<std::array<std::uint8_t, kImageSide>, kImageSide>;

/// Row i as the 32x32 DMD pattern, row-major ([y][x]).
inline Pattern32 pattern(const SensingMatrix& m, std::uint32_t i) {
  if (m.n() != kPixels) throw InvalidArgument("pattern: matrix is not 32x32");
  if (i >= m.num_rows())
    throw InvalidArgument("pattern: row " + std::to_string(i) + " out of range");
  Pattern32 p{};
  for (std::uint32_t j = 0; j < kPixels; ++j) p[j / kImageSide][j % kImageSide] = m.bit(i, j);
  return p;
}

// ---------------------------------------------------------------------------
// Matrix file
//
//   "CSMX" | u32 version | u8 kind (0 = PWH, 1 = PC) | u64 seed | u32 n |
//   u32 num_rows | num_rows * n / 64 packed u64 words

inline constexpr std::uint32_t kMatrixFormatVersion = 1;

inline std::vector<std::uint8_t> serialize_matrix(const SensingMatrix& m) {
  ByteWriter w;
  w.bytes("CSMX");
  w.u32(kMatrixFormatVersion);
  w.u8(static_cast<std::uint8_t>(m.kind()));
  w.u64(m.seed());
  w.u32(m.n());
  w.u32(m.num_rows());
  w.words(m.words());
  return w.take();
}

/// 64-bit hash of the serialized matrix (equals the hash of its file).
inline std::uint64_t matrix_fingerprint(const SensingMatrix& m) { return fnv1a64(serialize_matrix(m)); }

inline SensingMatrix parse_matrix(std::span<const std::uint8_t> bytes, const std::string& name) {
  ByteReader r(bytes, name);
  r.expect_magic("CSMX");
  if (const auto v = r.u32(); v != kMatrixFormatVersion)
    r.fail("unsupported matrix format version " + std::to_string(v));
  const auto kind_byte = r.u8();
  if (kind_byte > 1) r.fail("bad matrix kind byte " + std::to_string(kind_byte));
  const auto kind = static_cast<MatrixKind>(kind_byte);
  const auto seed = r.u64();
  const auto n = r.u32();
  const auto rows = r.u32();
  if (n == 0 || n % 64 != 0 || rows > n) r.fail("bad matrix shape");
  std::vector<std::uint64_t> words(std::size_t{rows} * (n / 64));
  r.words(words);
  r.expect_end();

  // Recover provenance when the rows are what the generator would produce.
  std::vector<RowOrigin> provenance;
  if (n == kPixels) {
    const SensingMatrix ref = build_matrix(kind, seed);
    if (std::equal(words.begin(), words.end(), ref.words().begin()))
      provenance.assign(ref.provenance().begin(), ref.provenance().begin() + rows);
  }
  return SensingMatrix(kind, n, rows, seed, std::move(words), std::move(provenance));
}

inline void save_matrix(const SensingMatrix& m, const std::filesystem::path& path) {
  write_file(path, serialize_matrix(m));
}

inline SensingMatrix load_matrix(const std::filesystem::path& path) {
  return parse_matrix(read_file(path), path.string());
}

}  // namespace csmr
