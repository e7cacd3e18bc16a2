// Distributed compression model with decoder-side common information.
//
// Encoder: v_x = g_ax(x), quantized and entropy coded.
// Decoder: w = f(y) from the side image, x_hat = g_sx([v_x_hat, w]).
// Training also reconstructs the side image, y_hat = g_sy([v_y, w]) with
// v_y = g_ay(y), and optimizes
//   (R_x + lambda D_x) + alpha (R_y + lambda D_y) + beta R_w
// where rates are bits per pixel. The hyperprior variant codes v_x under
// Gaussian scales sigma = h_sx(z_x_hat), z_x = h_ax(|v_x|), and adds R_zx to
// the x group and R_zy to the side group.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdsc/bitstream.hpp"
#include "wdsc/entropy_model.hpp"
#include "wdsc/metrics.hpp"
#include "wdsc/range_coder.hpp"
#include "wdsc/transforms.hpp"

namespace wdsc {

class ModelMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  Variant variant = Variant::kFactorized;
  std::size_t channels = 8;         // N
  std::size_t common_channels = 0;  // N_w; 0 means N
  Metric metric = Metric::kMse;
  double lambda = 256;
  double alpha = 1;
  double beta = 1;
  std::uint16_t lambda_id = 0;
  std::uint64_t seed = 1;

  std::size_t n_w() const { return common_channels ? common_channels : channels; }
  // Spatial multiple that input images must satisfy.
  std::size_t size_multiple() const { return variant == Variant::kHyperprior ? 64 : 16; }

  void validate() const {
    if (channels == 0) throw std::invalid_argument("channel width must be positive");
    if (!(lambda > 0)) throw std::invalid_argument("lambda must be > 0");
    if (!(alpha >= 0) || !(beta >= 0)) throw std::invalid_argument("alpha and beta must be >= 0");
  }
};

template <class V>
struct LossTerms {
  V R_x{}, D_x{}, R_y{}, D_y{}, R_w{}, R_zx{}, R_zy{};
  bool hyperprior = false;
  bool side_branch = true;  // false when alpha = 0 skipped the y branch
};

// Weighted sum of the terms; the hyperprior rates join their groups.
template <class V, class S>
V total_loss(const LossTerms<V>& t, S lambda, S alpha, S beta) {
  V x_group = t.hyperprior ? (t.R_x + t.R_zx) + t.D_x * lambda : t.R_x + t.D_x * lambda;
  V loss = x_group;
  if (alpha != S(0) && t.side_branch) {
    V y_group = t.hyperprior ? (t.R_y + t.R_zy) + t.D_y * lambda : t.R_y + t.D_y * lambda;
    loss = loss + y_group * alpha;
  }
  if (beta != S(0)) loss = loss + t.R_w * beta;
  return loss;
}

template <class Real>
struct TrainOutputs {
  Tensor<Real> v_x, v_tilde, w, x_hat;
  Tensor<Real> v_y, y_hat;             // undefined when the side branch is skipped
  Tensor<Real> z_x, z_tilde, sigma_x;  // hyperprior only
  Tensor<Real> z_y, sigma_y;
  LossTerms<Tensor<Real>> terms;
  Tensor<Real> loss;
};

// Plain numbers for logging.
struct LossValues {
  double loss = 0, R_x = 0, D_x = 0, R_y = 0, D_y = 0, R_w = 0, R_zx = 0, R_zy = 0;
};

template <class Real>
LossValues values_of(const TrainOutputs<Real>& o) {
  auto v = [](const Tensor<Real>& t) { return t.defined() ? double(t.item()) : 0.0; };
  const auto& t = o.terms;
  return {v(o.loss), v(t.R_x), v(t.D_x), v(t.R_y), v(t.D_y), v(t.R_w), v(t.R_zx), v(t.R_zy)};
}

struct EntropyTables {
  std::vector<CdfTable> latent;  // per channel (factorized) or per scale level (hyperprior)
  std::vector<double> scales;    // hyperprior scale ladder
  std::vector<CdfTable> hyper;   // per hyper-latent channel

  bool empty() const { return latent.empty(); }
  bool operator==(const EntropyTables&) const = default;
};

enum class DecodeMode { kFull, kCommon, kPrivate };

template <class Real>
class WynerModel {
 public:
  using T = Tensor<Real>;

  WynerModel() = default;

  explicit WynerModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t n = cfg_.channels, nw = cfg_.n_w();
    g_ax_ = TransformStack<Real>(StackKind::kAnalysis, 3, n, n, rng);
    g_sx_ = TransformStack<Real>(StackKind::kSynthesis, n + nw, n, 3, rng);
    g_ay_ = TransformStack<Real>(StackKind::kAnalysis, 3, n, n, rng);
    g_sy_ = TransformStack<Real>(StackKind::kSynthesis, n + nw, n, 3, rng);
    f_ = TransformStack<Real>(StackKind::kAnalysis, 3, n, nw, rng);
    p_w_ = FactorizedDensity<Real>(nw);
    if (hyperprior()) {
      h_ax_ = TransformStack<Real>(StackKind::kHyperAnalysis, n, n, n, rng);
      h_sx_ = TransformStack<Real>(StackKind::kHyperSynthesis, n, n, n, rng);
      h_ay_ = TransformStack<Real>(StackKind::kHyperAnalysis, n, n, n, rng);
      h_sy_ = TransformStack<Real>(StackKind::kHyperSynthesis, n, n, n, rng);
      p_zx_ = FactorizedDensity<Real>(n);
      p_zy_ = FactorizedDensity<Real>(n);
    } else {
      p_vx_ = FactorizedDensity<Real>(n);
      p_vy_ = FactorizedDensity<Real>(n);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  bool hyperprior() const { return cfg_.variant == Variant::kHyperprior; }

  const TransformStack<Real>& g_ax() const { return g_ax_; }
  const TransformStack<Real>& g_sx() const { return g_sx_; }
  const TransformStack<Real>& g_ay() const { return g_ay_; }
  const TransformStack<Real>& g_sy() const { return g_sy_; }
  const TransformStack<Real>& f() const { return f_; }
  const TransformStack<Real>& h_ax() const { return h_ax_; }
  const TransformStack<Real>& h_sx() const { return h_sx_; }
  const FactorizedDensity<Real>& p_vx() const { return p_vx_; }
  const FactorizedDensity<Real>& p_vy() const { return p_vy_; }
  const FactorizedDensity<Real>& p_w() const { return p_w_; }
  const FactorizedDensity<Real>& p_zx() const { return p_zx_; }
  const FactorizedDensity<Real>& p_zy() const { return p_zy_; }

  ParameterList<Real> parameters() const {
    ParameterList<Real> out;
    g_ax_.collect(out, "g_ax");
    g_sx_.collect(out, "g_sx");
    f_.collect(out, "f");
    p_w_.collect(out, "p_w");
    if (hyperprior()) {
      h_ax_.collect(out, "h_ax");
      h_sx_.collect(out, "h_sx");
      p_zx_.collect(out, "p_zx");
    } else {
      p_vx_.collect(out, "p_vx");
    }
    const auto side = side_branch_parameters();
    out.insert(out.end(), side.begin(), side.end());
    return out;
  }

  // Parameters used only to reconstruct the side image during training.
  ParameterList<Real> side_branch_parameters() const {
    ParameterList<Real> out;
    g_ay_.collect(out, "g_ay");
    g_sy_.collect(out, "g_sy");
    if (hyperprior()) {
      h_ay_.collect(out, "h_ay");
      h_sy_.collect(out, "h_sy");
      p_zy_.collect(out, "p_zy");
    } else {
      p_vy_.collect(out, "p_vy");
    }
    return out;
  }

  void check_image(const T& x, const char* what) const {
    const std::size_t m = cfg_.size_multiple();
    if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) % m != 0 || x.dim(2) % m != 0 || x.dim(1) == 0 ||
        x.dim(2) == 0) {
      throw ShapeError(std::string(what) + " must be [3,H,W] with H and W positive multiples of " +
                       std::to_string(m) + " for the " + to_string(cfg_.variant) + " variant, got " +
                       to_string(x.shape()));
    }
  }

  T distortion(const T& a, const T& b) const {
    return cfg_.metric == Metric::kMse ? mse(a, b) : Real(1) - msssim(a, b);
  }

  T common(const T& y) const { return common_info(y, f_); }
  T latent(const T& x) const { return analyze(x, g_ax_); }
  T reconstruct(const T& v, const T& w) const { return synthesize(concat(v, w), g_sx_); }
  T hyper_latent(const T& v) const { return hyper_analyze(v, h_ax_); }
  T scales(const T& z) const { return hyper_synthesize(z, h_sx_); }

  TrainOutputs<Real> forward_train(const T& x, const T& y, Rng& rng) const {
    check_image(x, "x");
    check_image(y, "y");
    if (x.shape() != y.shape()) throw ShapeError("x and y must have the same shape");
    const Real per_pixel = Real(1) / Real(x.dim(1) * x.dim(2));
    const Real neg_log2e = Real(-1.0 / M_LN2);

    TrainOutputs<Real> o;
    auto& t = o.terms;
    t.hyperprior = hyperprior();
    o.v_x = latent(x);
    o.v_tilde = add_uniform_noise(o.v_x, rng);
    o.w = common(y);
    o.x_hat = reconstruct(o.v_tilde, o.w);
    if (hyperprior()) {
      o.z_x = hyper_latent(o.v_x);
      o.z_tilde = add_uniform_noise(o.z_x, rng);
      o.sigma_x = scales(o.z_tilde);
      t.R_x = bits_estimate(gaussian_likelihood(o.sigma_x, o.v_tilde)) * per_pixel;
      t.R_zx = bits_estimate(p_zx_.likelihood(o.z_tilde)) * per_pixel;
    } else {
      t.R_x = bits_estimate(p_vx_.likelihood(o.v_tilde)) * per_pixel;
    }
    t.R_w = sum(p_w_.log_density(o.w)) * (neg_log2e * per_pixel);
    t.D_x = distortion(x, o.x_hat);

    t.side_branch = cfg_.alpha != 0;
    if (t.side_branch) {
      o.v_y = analyze(y, g_ay_);
      o.y_hat = synthesize(concat(o.v_y, o.w), g_sy_);
      t.D_y = distortion(y, o.y_hat);
      if (hyperprior()) {
        o.z_y = hyper_analyze(o.v_y, h_ay_);
        o.sigma_y = hyper_synthesize(o.z_y, h_sy_);
        t.R_y = sum(gaussian_log_density(o.sigma_y, o.v_y)) * (neg_log2e * per_pixel);
        t.R_zy = sum(p_zy_.log_density(o.z_y)) * (neg_log2e * per_pixel);
      } else {
        t.R_y = sum(p_vy_.log_density(o.v_y)) * (neg_log2e * per_pixel);
      }
    }
    o.loss = total_loss(t, Real(cfg_.lambda), Real(cfg_.alpha), Real(cfg_.beta));
    return o;
  }

  // Rebuilds the integer coding tables from the current densities.
  void freeze_tables(const TableOptions& opts = {}) {
    EntropyTables tables;
    if (hyperprior()) {
      const auto gc = GaussianConditional::build(opts);
      tables.latent = gc.tables();
      tables.scales = gc.scales();
      tables.hyper = p_zx_.build_tables(opts);
    } else {
      tables.latent = p_vx_.build_tables(opts);
    }
    tables_ = std::move(tables);
  }

  void set_tables(EntropyTables tables) { tables_ = std::move(tables); }
  const EntropyTables& tables() const { return tables_; }
  bool has_tables() const { return !tables_.empty(); }

  std::uint64_t checkpoint_id() const { return checkpoint_id_; }
  void set_checkpoint_id(std::uint64_t id) { checkpoint_id_ = id; }

  // Loads named parameter values (shapes must match).
  template <class From>
  void assign(const std::string& name, const Shape& shape, std::span<const From> values) {
    for (auto& p : parameters()) {
      if (p.name != name) continue;
      if (p.tensor.shape() != shape) {
        throw ModelMismatch("parameter " + name + " has shape " + to_string(shape) + ", model expects " +
                            to_string(p.tensor.shape()));
      }
      auto dst = p.tensor.mutable_data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(values[i]);
      return;
    }
    throw ModelMismatch("model has no parameter named " + name);
  }

 private:
  ModelConfig cfg_;
  TransformStack<Real> g_ax_, g_sx_, g_ay_, g_sy_, f_;
  TransformStack<Real> h_ax_, h_sx_, h_ay_, h_sy_;
  FactorizedDensity<Real> p_vx_, p_vy_, p_w_, p_zx_, p_zy_;
  EntropyTables tables_;
  std::uint64_t checkpoint_id_ = 0;
};

// ---------------------------------------------------------------------------
// KL expansion of the objective, evaluated term by term on the realized
// training variables with scalar double routes only:
//   E[log q(v~x|x)] + log q(v_y|y) + log q(w|y)       (0: unit-width uniform, deterministic maps)
//   - log p(x|w,v~x) - log p(y|w,v_y)                 (lambda-weighted distortions)
//   - log p(w) - log p(v~x) - log p(v_y) [- log p(z~x) - log p(z_y)]
// with the side-image group weighted by alpha and log p(w) by beta, in bits
// per pixel.

namespace detail {

template <class Real>
double neg_log2_bins(const FactorizedDensity<Real>& d, const Tensor<Real>& v) {
  const std::size_t c = v.dim(0), m = v.size() / c;
  double bits = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < m; ++i)
      bits -= std::log2(std::max(d.bin_probability(ch, double(v[ch * m + i])), kLikelihoodFloor));
  return bits;
}

template <class Real>
double neg_log2_density(const FactorizedDensity<Real>& d, const Tensor<Real>& v) {
  const std::size_t c = v.dim(0), m = v.size() / c;
  double nats = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < m; ++i) nats -= d.log_density(ch, double(v[ch * m + i]));
  return nats / M_LN2;
}

template <class Real>
double neg_log2_gaussian_bins(const Tensor<Real>& sigma, const Tensor<Real>& v) {
  double bits = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    bits -= std::log2(std::max(gaussian_bin_probability(double(sigma[i]), double(v[i])), kLikelihoodFloor));
  return bits;
}

template <class Real>
double neg_log2_gaussian_density(const Tensor<Real>& sigma, const Tensor<Real>& v) {
  double nats = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double s = double(sigma[i]), z = double(v[i]) / s;
    nats += 0.5 * z * z + std::log(s) + 0.5 * std::log(2 * M_PI);
  }
  return nats / M_LN2;
}

template <class Real>
double squared_error_mean(const Tensor<Real>& a, const Tensor<Real>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return acc / double(a.size());
}

}  // namespace detail

template <class Real>
double kl_expansion_loss(const WynerModel<Real>& model, const Tensor<Real>& x, const Tensor<Real>& y,
                         const TrainOutputs<Real>& o) {
  const ModelConfig& cfg = model.config();
  const double pixels = double(x.dim(1) * x.dim(2));
  auto neg_log_likelihood = [&](const Tensor<Real>& a, const Tensor<Real>& b) {
    return cfg.metric == Metric::kMse ? cfg.lambda * detail::squared_error_mean(a, b)
                                      : cfg.lambda * (1 - msssim_value(a, b));
  };

  // Encoder posterior: uniform of width 1 around v_x has log density 0; the
  // v_y and w posteriors are deterministic and contribute nothing.
  const double uniform_width = 1.0;
  const double log_q = double(o.v_tilde.size()) * std::log2(1 / uniform_width);
  double x_side = log_q + neg_log_likelihood(x, o.x_hat) * pixels;
  if (model.hyperprior()) {
    x_side += detail::neg_log2_gaussian_bins(o.sigma_x, o.v_tilde);
    x_side += detail::neg_log2_bins(model.p_zx(), o.z_tilde);
  } else {
    x_side += detail::neg_log2_bins(model.p_vx(), o.v_tilde);
  }
  double total = x_side / pixels;
  if (cfg.alpha != 0) {
    double y_side = neg_log_likelihood(y, o.y_hat) * pixels;
    if (model.hyperprior()) {
      y_side += detail::neg_log2_gaussian_density(o.sigma_y, o.v_y);
      y_side += detail::neg_log2_density(model.p_zy(), o.z_y);
    } else {
      y_side += detail::neg_log2_density(model.p_vy(), o.v_y);
    }
    total += cfg.alpha * y_side / pixels;
  }
  if (cfg.beta != 0) total += cfg.beta * detail::neg_log2_density(model.p_w(), o.w) / pixels;
  return total;
}

// ---------------------------------------------------------------------------
// Coding

template <class Real>
std::vector<std::uint32_t> latent_table_index(const WynerModel<Real>& model, const Tensor<Real>& z_hat,
                                              const Shape& latent_shape) {
  if (!model.hyperprior()) return channel_table_index(latent_shape);
  const Tensor<Real> sigma = model.scales(z_hat);
  GaussianConditional gc(model.tables().scales, model.tables().latent);
  return gc.indexes(sigma);
}

template <class Real>
Bitstream compress(const WynerModel<Real>& model, const Tensor<Real>& x) {
  if (!model.has_tables()) throw ModelMismatch("model has no frozen coding tables");
  model.check_image(x, "input image");
  if (x.dim(1) > 0xFFFF || x.dim(2) > 0xFFFF) throw ShapeError("image larger than 65535 pixels per side");
  const Tensor<Real> v = model.latent(x.detach());
  const SymbolPlane v_hat = quantize(v);
  Bitstream b;
  b.header.variant = model.config().variant;
  b.header.lambda_id = model.config().lambda_id;
  b.header.image_h = static_cast<std::uint16_t>(x.dim(1));
  b.header.image_w = static_cast<std::uint16_t>(x.dim(2));
  b.header.channels = static_cast<std::uint16_t>(v.dim(0));
  b.header.checkpoint_id = model.checkpoint_id();
  const auto& tables = model.tables();
  if (model.hyperprior()) {
    const SymbolPlane z_hat = quantize(model.hyper_latent(v));
    const auto index = latent_table_index(model, dequantize<Real>(z_hat), v_hat.shape);
    b.payloads.push_back(encode_symbols(v_hat.symbols, index, tables.latent));
    b.payloads.push_back(encode_symbols(z_hat.symbols, channel_table_index(z_hat.shape), tables.hyper));
  } else {
    b.payloads.push_back(encode_symbols(v_hat.symbols, channel_table_index(v_hat.shape), tables.latent));
  }
  return b;
}

// Recovers the quantized latent v_x_hat as a tensor.
template <class Real>
Tensor<Real> decode_latent(const WynerModel<Real>& model, const Bitstream& b) {
  const auto& cfg = model.config();
  if (!model.has_tables()) throw ModelMismatch("model has no frozen coding tables");
  if (b.header.checkpoint_id != model.checkpoint_id()) {
    throw ModelMismatch("bitstream was produced by checkpoint " + std::to_string(b.header.checkpoint_id) +
                        ", this checkpoint is " + std::to_string(model.checkpoint_id()));
  }
  if (b.header.variant != cfg.variant || b.header.channels != cfg.channels) {
    throw ModelMismatch("bitstream variant/channels do not match the checkpoint");
  }
  const std::size_t h = b.header.image_h, w = b.header.image_w, m = cfg.size_multiple();
  if (h == 0 || w == 0 || h % m != 0 || w % m != 0) throw FormatError("bitstream image size is not codable");
  const Shape latent_shape{cfg.channels, h / 16, w / 16};
  const auto& tables = model.tables();
  std::vector<std::uint32_t> index;
  if (model.hyperprior()) {
    const Shape hyper_shape{cfg.channels, h / 64, w / 64};
    SymbolPlane z_hat{hyper_shape, decode_symbols(b.payloads.at(1), channel_table_index(hyper_shape), tables.hyper)};
    index = latent_table_index(model, dequantize<Real>(z_hat), latent_shape);
  } else {
    index = channel_table_index(latent_shape);
  }
  SymbolPlane v_hat{latent_shape, decode_symbols(b.payloads.at(0), index, tables.latent)};
  return dequantize<Real>(v_hat);
}

template <class Real>
Tensor<Real> decompress(const WynerModel<Real>& model, const Bitstream& b, const Tensor<Real>& side,
                        DecodeMode mode = DecodeMode::kFull) {
  model.check_image(side, "side image");
  if (side.dim(1) != b.header.image_h || side.dim(2) != b.header.image_w) {
    throw ShapeError("side image " + to_string(side.shape()) + " does not match the coded size " +
                     std::to_string(b.header.image_h) + "x" + std::to_string(b.header.image_w));
  }
  Tensor<Real> v = decode_latent(model, b);
  Tensor<Real> w = model.common(side.detach());
  if (mode == DecodeMode::kCommon) v = Tensor<Real>::zeros(v.shape());
  if (mode == DecodeMode::kPrivate) w = Tensor<Real>::zeros(w.shape());
  return clamp(model.reconstruct(v, w), Real(0), Real(1));
}

inline double bits_per_pixel(const Bitstream& b) {
  return 8.0 * double(b.payload_bytes()) / double(std::size_t(b.header.image_h) * b.header.image_w);
}

}  // namespace wdsc
