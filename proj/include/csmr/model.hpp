#pragma once

// 2-layer feedforward classifier: h = tanh(W1 x + b1), p = softmax(W2 h + b2),
// trained on mean cross-entropy with Adam and a stepped learning rate.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "csmr/binary_io.hpp"
#include "csmr/error.hpp"
#include "csmr/pipeline.hpp"
#include "csmr/rng.hpp"

namespace csmr {

inline constexpr std::uint32_t kHiddenUnits = 400;
inline constexpr std::uint32_t kClasses = 10;

/// Weights and biases; W1 is H x D, W2 is C x H. Also used for gradients and
/// Adam moments, which share the shape.
struct MlpParams {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  static MlpParams zeros(std::uint32_t input_dim, std::uint32_t hidden = kHiddenUnits,
                         std::uint32_t classes = kClasses) {
    MlpParams p;
    p.w1 = Eigen::MatrixXd::Zero(hidden, input_dim);
    p.b1 = Eigen::VectorXd::Zero(hidden);
    p.w2 = Eigen::MatrixXd::Zero(classes, hidden);
    p.b2 = Eigen::VectorXd::Zero(classes);
    return p;
  }

  /// Glorot-uniform weights, U(-a, a) with a = sqrt(6 / (fan_in + fan_out));
  /// zero biases. Draw order: W1 row-major, then W2 row-major.
  static MlpParams glorot(std::uint32_t input_dim, std::uint32_t hidden, std::uint32_t classes, Rng& rng) {
    MlpParams p = zeros(input_dim, hidden, classes);
    const double a1 = std::sqrt(6.0 / (input_dim + hidden));
    for (Eigen::Index r = 0; r < p.w1.rows(); ++r)
      for (Eigen::Index c = 0; c < p.w1.cols(); ++c) p.w1(r, c) = rng.uniform(-a1, a1);
    const double a2 = std::sqrt(6.0 / (hidden + classes));
    for (Eigen::Index r = 0; r < p.w2.rows(); ++r)
      for (Eigen::Index c = 0; c < p.w2.cols(); ++c) p.w2(r, c) = rng.uniform(-a2, a2);
    return p;
  }

  std::uint32_t input_dim() const { return static_cast<std::uint32_t>(w1.cols()); }
  std::uint32_t hidden() const { return static_cast<std::uint32_t>(w1.rows()); }
  std::uint32_t classes() const { return static_cast<std::uint32_t>(w2.rows()); }

  bool same_shape(const MlpParams& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
           w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() && b2.size() == o.b2.size();
  }

  bool all_finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }

  void check_shape() const {
    if (b1.size() != w1.rows() || w2.cols() != w1.rows() || b2.size() != w2.rows())
      throw InvalidArgument("MlpParams: inconsistent layer shapes");
  }

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    return a.same_shape(b) && a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2;
  }
};

using Gradients = MlpParams;

// ---------------------------------------------------------------------------
// Forward / loss / backward

/// Column-wise activations for a batch; column b belongs to example b.
struct Activations {
  Eigen::MatrixXd hidden;  // H x B
  Eigen::MatrixXd probs;   // C x B
};

namespace detail {

inline void softmax_columns(Eigen::MatrixXd& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    auto col = z.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

}  // namespace detail

/// X is D x B, one example per column. Writes into `a`, reusing its storage.
inline void forward_batch_into(const MlpParams& p, const Eigen::MatrixXd& x, Activations& a) {
  p.check_shape();
  if (x.rows() != p.w1.cols())
    throw InvalidArgument("forward: input length " + std::to_string(x.rows()) + " != D = " +
                          std::to_string(p.w1.cols()));
  a.hidden.noalias() = p.w1 * x;
  a.hidden.colwise() += p.b1;
  if (!a.hidden.allFinite()) throw NumericError("non-finite pre-activation in hidden layer");
  // tanh(z) = 1 - 2 / (exp(2z) + 1); Eigen vectorizes exp but not tanh for doubles.
  a.hidden = (1.0 - 2.0 / ((2.0 * a.hidden.array()).exp() + 1.0)).matrix();
  a.probs.noalias() = p.w2 * a.hidden;
  a.probs.colwise() += p.b2;
  if (!a.probs.allFinite()) throw NumericError("non-finite logits in output layer");
  detail::softmax_columns(a.probs);
}

inline Activations forward_batch(const MlpParams& p, const Eigen::MatrixXd& x) {
  Activations a;
  forward_batch_into(p, x, a);
  return a;
}

inline Activations forward(const MlpParams& p, std::span<const double> x) {
  const Eigen::Map<const Eigen::MatrixXd> col(x.data(), static_cast<Eigen::Index>(x.size()), 1);
  return forward_batch(p, col);
}

inline constexpr double kProbabilityFloor = 1e-30;

/// Cross-entropy -log p[label], with p[label] floored at 1e-30.
inline double loss(std::span<const double> p, std::uint32_t label) {
  if (label >= p.size()) throw InvalidArgument("loss: label " + std::to_string(label) + " out of range");
  return -std::log(std::max(p[label], kProbabilityFloor));
}

/// Index of the largest probability; ties go to the lowest class index.
template <typename Vec>
std::uint32_t argmax(const Vec& v) {
  std::uint32_t best = 0;
  for (Eigen::Index i = 1; i < static_cast<Eigen::Index>(v.size()); ++i)
    if (v[i] > v[best]) best = static_cast<std::uint32_t>(i);
  return best;
}

struct BatchResult {
  Gradients grads;
  double mean_loss = 0.0;
  std::size_t correct = 0;  // argmax hits before the update
};

/// Scratch buffers reused across batches.
struct BatchWorkspace {
  Activations act;
  Eigen::MatrixXd delta_out;
  Eigen::MatrixXd delta_hidden;
};

/// Gradient of the mean cross-entropy over the batch. Output residual is
/// p - onehot(label); the hidden derivative is 1 - h^2.
inline void backward_into(const MlpParams& p, const Eigen::MatrixXd& x, std::span<const std::uint8_t> labels,
                          BatchWorkspace& ws, BatchResult& r) {
  const auto batch = x.cols();
  if (batch == 0) throw InvalidArgument("backward: empty batch");
  if (static_cast<std::size_t>(batch) != labels.size())
    throw InvalidArgument("backward: label count does not match batch");

  forward_batch_into(p, x, ws.act);
  const auto& a = ws.act;
  ws.delta_out = a.probs;
  double total = 0.0;
  r.correct = 0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const std::uint32_t label = labels[static_cast<std::size_t>(b)];
    if (label >= p.classes()) throw InvalidArgument("backward: label out of range");
    total += -std::log(std::max(a.probs(label, b), kProbabilityFloor));
    if (argmax(a.probs.col(b)) == label) ++r.correct;
    ws.delta_out(label, b) -= 1.0;
  }
  const double inv = 1.0 / static_cast<double>(batch);
  r.mean_loss = total * inv;
  ws.delta_out *= inv;

  r.grads.w2.noalias() = ws.delta_out * a.hidden.transpose();
  r.grads.b2 = ws.delta_out.rowwise().sum();
  ws.delta_hidden.noalias() = p.w2.transpose() * ws.delta_out;
  ws.delta_hidden.array() *= 1.0 - a.hidden.array().square();
  r.grads.w1.noalias() = ws.delta_hidden * x.transpose();
  r.grads.b1 = ws.delta_hidden.rowwise().sum();
  if (!r.grads.all_finite()) throw NumericError("non-finite gradient");
}

inline BatchResult backward(const MlpParams& p, const Eigen::MatrixXd& x, std::span<const std::uint8_t> labels) {
  BatchWorkspace ws;
  BatchResult r;
  backward_into(p, x, labels, ws, r);
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Input layer normalization applied during training. zscore trains on
/// (x - mean) / std with per-index statistics of the training inputs (padded
/// zeros included), then folds the affine map into W1 and b1 so the saved
/// network takes raw measurements.
enum class InputNorm { none, zscore };

inline InputNorm parse_input_norm(const std::string& s) {
  if (s == "none") return InputNorm::none;
  if (s == "zscore") return InputNorm::zscore;
  throw InvalidArgument("unknown input normalization '" + s + "' (expected zscore or none)");
}

inline const char* to_string(InputNorm n) { return n == InputNorm::none ? "none" : "zscore"; }

struct TrainConfig {
  double initial_lr = 5e-5;
  double lr_drop_factor = 0.9;
  std::uint32_t lr_drop_period_epochs = 4;
  std::uint32_t epochs = 100;
  std::uint32_t batch_size = 128;
  std::uint64_t seed = 0;
  std::uint32_t hidden = kHiddenUnits;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  InputNorm input_norm = InputNorm::zscore;

  void validate() const {
    if (!(initial_lr > 0)) throw InvalidArgument("TrainConfig: initial_lr must be > 0");
    if (!(lr_drop_factor > 0 && lr_drop_factor <= 1)) throw InvalidArgument("TrainConfig: lr_drop_factor must be in (0, 1]");
    if (lr_drop_period_epochs == 0) throw InvalidArgument("TrainConfig: lr_drop_period_epochs must be >= 1");
    if (epochs == 0) throw InvalidArgument("TrainConfig: epochs must be >= 1");
    if (batch_size == 0) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
    if (hidden == 0) throw InvalidArgument("TrainConfig: hidden must be >= 1");
  }
};

struct AdamState {
  Gradients m;
  Gradients v;
  std::uint64_t t = 0;

  static AdamState like(const MlpParams& p) {
    return {MlpParams::zeros(p.input_dim(), p.hidden(), p.classes()),
            MlpParams::zeros(p.input_dim(), p.hidden(), p.classes()), 0};
  }
};

namespace detail {

template <typename Block>
void adam_update(Block& param, const Block& g, Block& m, Block& v, double lr, double b1, double b2,
                 double eps, double c1, double c2) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

}  // namespace detail

/// One bias-corrected Adam step; increments state.t.
inline void adam_step(MlpParams& p, const Gradients& g, AdamState& s, double lr, const TrainConfig& cfg) {
  if (!p.same_shape(g) || !p.same_shape(s.m) || !p.same_shape(s.v))
    throw InvalidArgument("adam_step: shape mismatch");
  ++s.t;
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(s.t));
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2, e = cfg.adam_epsilon;
  detail::adam_update(p.w1, g.w1, s.m.w1, s.v.w1, lr, b1, b2, e, c1, c2);
  detail::adam_update(p.b1, g.b1, s.m.b1, s.v.b1, lr, b1, b2, e, c1, c2);
  detail::adam_update(p.w2, g.w2, s.m.w2, s.v.w2, lr, b1, b2, e, c1, c2);
  detail::adam_update(p.b2, g.b2, s.m.b2, s.v.b2, lr, b1, b2, e, c1, c2);
}

/// initial_lr * drop_factor ^ floor(epoch / drop_period), epoch 0-based.
inline double lr_at(const TrainConfig& cfg, std::uint32_t epoch) {
  return cfg.initial_lr *
         std::pow(cfg.lr_drop_factor, static_cast<double>(epoch / cfg.lr_drop_period_epochs));
}

// ---------------------------------------------------------------------------
// Training

struct InputStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_std;
};

inline constexpr double kMinInputStd = 1e-12;

/// Per-index mean and 1/std over every materialized training input, in set
/// order. Indices with std below 1e-12 keep a scale of 1.
inline InputStats input_statistics(const MultiRateSet& set) {
  const std::uint32_t dim = set.input_dim();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim), sq = Eigen::VectorXd::Zero(dim);
  std::vector<double> in(dim);
  for (std::size_t i = 0; i < set.size(); ++i) {
    set.materialize(i, std::span<double>(in));
    const Eigen::Map<const Eigen::VectorXd> v(in.data(), dim);
    sum += v;
    sq += v.cwiseProduct(v);
  }
  const double n = static_cast<double>(set.size());
  InputStats s{sum / n, Eigen::VectorXd(dim)};
  for (std::uint32_t k = 0; k < dim; ++k) {
    const double var = std::max(sq[k] / n - s.mean[k] * s.mean[k], 0.0);
    const double sd = std::sqrt(var);
    s.inv_std[k] = sd < kMinInputStd ? 1.0 : 1.0 / sd;
  }
  return s;
}

/// Rewrites params trained on normalized inputs into params on raw inputs:
/// W1 (x - mean) * inv_std + b1 = (W1 diag(inv_std)) x + (b1 - W1 diag(inv_std) mean).
inline void fold_input_stats(MlpParams& p, const InputStats& s) {
  p.w1 = p.w1 * s.inv_std.asDiagonal();
  p.b1 -= p.w1 * s.mean;
}

struct EpochStats {
  std::uint32_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;  // example-weighted over the epoch, before each update
  double accuracy = 0.0;   // running training accuracy, before each update
};

struct TrainResult {
  MlpParams params;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch Adam over the set. Epoch e visits the examples in the order of
/// Rng(mix_seed(seed, e)).permutation; initialization uses Rng(seed). The
/// returned params always act on raw inputs (see InputNorm).
inline TrainResult train(const MultiRateSet& set, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (set.empty()) throw InvalidArgument("train: empty training set");
  const std::uint32_t dim = set.input_dim();

  Rng init_rng(cfg.seed);
  TrainResult result{MlpParams::glorot(dim, cfg.hidden, kClasses, init_rng), {}};
  AdamState state = AdamState::like(result.params);

  const std::size_t n = set.size();
  Eigen::MatrixXd x(dim, cfg.batch_size);
  std::vector<std::uint8_t> labels(cfg.batch_size);
  BatchWorkspace ws;
  BatchResult r;
  const bool normalize = cfg.input_norm == InputNorm::zscore;
  const InputStats norm = normalize ? input_statistics(set) : InputStats{};

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    Rng order_rng(mix_seed(cfg.seed, epoch));
    const auto order = order_rng.permutation(n);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n - start);
      if (static_cast<std::size_t>(x.cols()) != bs) {
        x.resize(dim, static_cast<Eigen::Index>(bs));
        labels.resize(bs);
      }
      for (std::size_t b = 0; b < bs; ++b) {
        const std::size_t idx = order[start + b];
        set.materialize(idx, std::span<double>(x.col(static_cast<Eigen::Index>(b)).data(), dim));
        labels[b] = set.label(idx);
      }
      if (normalize) x = ((x.colwise() - norm.mean).array().colwise() * norm.inv_std.array()).matrix();
      backward_into(result.params, x, labels, ws, r);
      loss_sum += r.mean_loss * static_cast<double>(bs);
      correct += r.correct;
      adam_step(result.params, r.grads, state, lr, cfg);
    }
    if (x.cols() != static_cast<Eigen::Index>(cfg.batch_size)) {
      x.resize(dim, cfg.batch_size);
      labels.resize(cfg.batch_size);
    }

    EpochStats stats{epoch, lr, loss_sum / static_cast<double>(n),
                     static_cast<double>(correct) / static_cast<double>(n)};
    if (!std::isfinite(stats.mean_loss))
      throw NumericError("training diverged: mean loss of epoch " + std::to_string(epoch) + " is not finite");
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  if (normalize) fold_input_stats(result.params, norm);
  return result;
}

// ---------------------------------------------------------------------------
// Model file
//
//   "CSMM" | u32 version | u32 D | u32 H | u32 C |
//   W1 (H x D), b1, W2 (C x H), b2 as row-major f32

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::size_t kModelHeaderBytes = 4 + 4 + 3 * 4;

inline std::size_t model_file_size(std::uint32_t d, std::uint32_t h = kHiddenUnits, std::uint32_t c = kClasses) {
  return kModelHeaderBytes + (std::size_t{h} * d + h + std::size_t{c} * h + c) * 4;
}

inline std::vector<std::uint8_t> serialize_model(const MlpParams& p) {
  p.check_shape();
  ByteWriter w;
  w.bytes("CSMM");
  w.u32(kModelFormatVersion);
  w.u32(p.input_dim());
  w.u32(p.hidden());
  w.u32(p.classes());
  for (Eigen::Index r = 0; r < p.w1.rows(); ++r)
    for (Eigen::Index c = 0; c < p.w1.cols(); ++c) w.f32(static_cast<float>(p.w1(r, c)));
  for (Eigen::Index i = 0; i < p.b1.size(); ++i) w.f32(static_cast<float>(p.b1[i]));
  for (Eigen::Index r = 0; r < p.w2.rows(); ++r)
    for (Eigen::Index c = 0; c < p.w2.cols(); ++c) w.f32(static_cast<float>(p.w2(r, c)));
  for (Eigen::Index i = 0; i < p.b2.size(); ++i) w.f32(static_cast<float>(p.b2[i]));
  return w.take();
}

inline MlpParams parse_model(std::span<const std::uint8_t> bytes, const std::string& name) {
  ByteReader r(bytes, name);
  r.expect_magic("CSMM");
  if (const auto v = r.u32(); v != kModelFormatVersion)
    r.fail("unsupported model format version " + std::to_string(v));
  const auto d = r.u32(), h = r.u32(), c = r.u32();
  if (d == 0 || d > kMaxMeasurements || h == 0 || h > 1u << 16 || c == 0 || c > 1024)
    r.fail("implausible model shape");
  MlpParams p = MlpParams::zeros(d, h, c);
  for (Eigen::Index i = 0; i < p.w1.rows(); ++i)
    for (Eigen::Index j = 0; j < p.w1.cols(); ++j) p.w1(i, j) = r.f32();
  for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1[i] = r.f32();
  for (Eigen::Index i = 0; i < p.w2.rows(); ++i)
    for (Eigen::Index j = 0; j < p.w2.cols(); ++j) p.w2(i, j) = r.f32();
  for (Eigen::Index i = 0; i < p.b2.size(); ++i) p.b2[i] = r.f32();
  r.expect_end();
  if (!p.all_finite()) r.fail("non-finite parameter");
  return p;
}

inline void save_model(const MlpParams& p, const std::filesystem::path& path) { write_file(path, serialize_model(p)); }

inline MlpParams load_model(const std::filesystem::path& path) { return parse_model(read_file(path), path.string()); }

}  // namespace csmr
