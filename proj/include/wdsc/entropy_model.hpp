// Learned probability models for latents.
//
// FactorizedDensity is a per-channel monotone cumulative c(x) built from four
// stages: an affine map with softplus-positive weights, then
// u + tanh(a) * tanh(u) (monotone because |tanh(a)| < 1), and a final sigmoid.
// It provides the noise-convolved bin probability c(v+1/2) - c(v-1/2) used for
// quantized latents and the plain density c'(x) used for continuous ones.
//
// The Gaussian conditional model codes latents under per-element scales
// predicted by the hyperprior.
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdsc/range_coder.hpp"
#include "wdsc/tensor.hpp"
#include "wdsc/transforms.hpp"

namespace wdsc {

constexpr double kLikelihoodFloor = 1e-9;
constexpr double kDefaultTailMass = 1e-9;

struct TableOptions {
  unsigned precision = kDefaultPrecision;
  double tail_mass = kDefaultTailMass;
};

inline void check_table_options(const TableOptions& o) {
  if (o.precision < 8 || o.precision > 16) throw std::invalid_argument("table precision must be in [8,16]");
  if (!(o.tail_mass > 0) || o.tail_mass > 1e-6) throw std::invalid_argument("tail mass must be in (0, 1e-6]");
}

// Shrinks [lo, hi] past outer bins worth less than one table count. Such
// bins would each be granted a full count; leaving them to the escape bins
// costs far less.
template <class Prob>
void trim_to_resolution(double& lo, double& hi, unsigned precision, Prob bin_probability) {
  const double resolution = std::ldexp(1.0, -int(precision));
  while (lo < hi && bin_probability(lo) < resolution) lo += 1;
  while (hi > lo && bin_probability(hi) < resolution) hi -= 1;
}

// -log2 of each probability, summed.
template <class Real>
Tensor<Real> bits_estimate(const Tensor<Real>& probabilities) {
  return sum(log(probabilities)) * Real(-1.0 / M_LN2);
}

template <class Real>
class FactorizedDensity {
 public:
  static constexpr std::array<std::size_t, 5> kFilters{1, 3, 3, 3, 1};
  static constexpr std::size_t kStages = kFilters.size() - 1;

  FactorizedDensity() = default;

  // init_scale sets the initial spread: c(x) = sigmoid(x / init_scale) at
  // initialization, so init_scale = 1 is the standard logistic.
  explicit FactorizedDensity(std::size_t channels, double init_scale = 10.0) : channels_(channels) {
    const double scale = std::pow(init_scale, 1.0 / double(kStages));
    for (std::size_t k = 0; k < kStages; ++k) {
      const std::size_t out = kFilters[k + 1], in = kFilters[k];
      const Real init = softplus_inverse(Real(1.0 / scale / double(out)));
      matrices_[k] = Tensor<Real>::full({channels, out, in}, init, true);
      biases_[k] = Tensor<Real>::zeros({channels, out}, true);
      if (k + 1 < kStages) factors_[k] = Tensor<Real>::zeros({channels, out}, true);
    }
  }

  std::size_t channels() const { return channels_; }

  // Bin probability p(v) = c(v + 1/2) - c(v - 1/2), floored, same shape as v.
  Tensor<Real> likelihood(const Tensor<Real>& v) const {
    const Tensor<Real> x = as_rows(v);
    const Tensor<Real> upper = logits(x + Real(0.5), nullptr);
    const Tensor<Real> lower = logits(x - Real(0.5), nullptr);
    // Evaluate on the side of the sigmoid where it is not saturated.
    std::vector<Real> sign(upper.size());
    for (std::size_t i = 0; i < sign.size(); ++i) sign[i] = (upper[i] + lower[i] > 0) ? Real(-1) : Real(1);
    const auto s = Tensor<Real>::from(upper.shape(), std::move(sign));
    const Tensor<Real> p = abs(sigmoid(s * upper) - sigmoid(s * lower));
    return reshape(clamp_min(p, Real(kLikelihoodFloor)), v.shape());
  }

  // log c'(x), natural log, same shape as x.
  Tensor<Real> log_density(const Tensor<Real>& x) const {
    Tensor<Real> dlogit;
    const Tensor<Real> l = logits(as_rows(x), &dlogit);
    // log sigmoid(l) + log sigmoid(-l) + log dl/dx
    const Tensor<Real> out = log(dlogit) - softplus(-l) - softplus(l);
    return reshape(out, x.shape());
  }

  Tensor<Real> density(const Tensor<Real>& x) const { return exp(log_density(x)); }

  // Scalar double-precision route through the same parameters.
  double logit(std::size_t channel, double x) const {
    std::vector<double> u{x};
    for (std::size_t k = 0; k < kStages; ++k) {
      const std::size_t out = kFilters[k + 1], in = kFilters[k];
      std::vector<double> next(out);
      for (std::size_t i = 0; i < out; ++i) {
        double acc = biases_[k][channel * out + i];
        for (std::size_t j = 0; j < in; ++j)
          acc += softplus_scalar(double(matrices_[k][(channel * out + i) * in + j])) * u[j];
        if (k + 1 < kStages) acc += std::tanh(double(factors_[k][channel * out + i])) * std::tanh(acc);
        next[i] = acc;
      }
      u = std::move(next);
    }
    return u[0];
  }

  double cdf(std::size_t channel, double x) const { return sigmoid_scalar(logit(channel, x)); }

  // Natural-log density at x, by forward-mode differentiation of the scalar
  // logit chain. Shares no code with the tensor route.
  double log_density(std::size_t channel, double x) const {
    std::vector<double> u{x}, du{1.0};
    for (std::size_t k = 0; k < kStages; ++k) {
      const std::size_t out = kFilters[k + 1], in = kFilters[k];
      std::vector<double> next(out), dnext(out);
      for (std::size_t i = 0; i < out; ++i) {
        double acc = biases_[k][channel * out + i], dacc = 0;
        for (std::size_t j = 0; j < in; ++j) {
          const double h = softplus_scalar(double(matrices_[k][(channel * out + i) * in + j]));
          acc += h * u[j];
          dacc += h * du[j];
        }
        if (k + 1 < kStages) {
          const double a = std::tanh(double(factors_[k][channel * out + i]));
          const double t = std::tanh(acc);
          dacc *= 1 + a * (1 - t * t);
          acc += a * t;
        }
        next[i] = acc;
        dnext[i] = dacc;
      }
      u = std::move(next);
      du = std::move(dnext);
    }
    const double l = u[0];
    // log sigmoid(l) + log sigmoid(-l)
    return std::log(du[0]) - softplus_scalar(-l) - softplus_scalar(l);
  }

  double bin_probability(std::size_t channel, double v) const {
    const double up = logit(channel, v + 0.5), lo = logit(channel, v - 0.5);
    const double s = (up + lo > 0) ? -1.0 : 1.0;
    return std::abs(sigmoid_scalar(s * up) - sigmoid_scalar(s * lo));
  }

  // x with c(x) = q, by bisection on the monotone logit.
  double quantile(std::size_t channel, double q) const {
    const double target = std::log(q) - std::log1p(-q);
    double lo = -1, hi = 1;
    for (int i = 0; logit(channel, lo) > target; ++i) {
      if (i > 60) throw std::range_error("density quantile diverged");
      lo *= 2;
    }
    for (int i = 0; logit(channel, hi) < target; ++i) {
      if (i > 60) throw std::range_error("density quantile diverged");
      hi *= 2;
    }
    for (int i = 0; i < 100; ++i) {
      const double mid = 0.5 * (lo + hi);
      (logit(channel, mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  // One table per channel covering the central 1 - tail_mass of c.
  std::vector<CdfTable> build_tables(const TableOptions& opts = {}) const {
    check_table_options(opts);
    std::vector<CdfTable> tables;
    for (std::size_t c = 0; c < channels_; ++c) {
      double lo = std::floor(quantile(c, opts.tail_mass / 2));
      double hi = std::ceil(quantile(c, 1 - opts.tail_mass / 2));
      trim_to_resolution(lo, hi, opts.precision, [&](double v) { return bin_probability(c, v); });
      const double bins = hi - lo + 3;
      if (bins > double(1u << opts.precision) || lo < -(1 << 30) || hi > (1 << 30)) {
        throw std::range_error("channel " + std::to_string(c) + " needs " + std::to_string(bins) +
                               " bins, more than a " + std::to_string(opts.precision) + "-bit table holds");
      }
      std::vector<double> pmf;
      for (double v = lo; v <= hi; v += 1) pmf.push_back(bin_probability(c, v));
      const double low_tail = cdf(c, lo - 0.5);
      const double high_tail = sigmoid_scalar(-logit(c, hi + 0.5));
      tables.push_back(make_table(static_cast<std::int32_t>(lo), pmf, low_tail, high_tail, opts.precision));
    }
    return tables;
  }

  void collect(ParameterList<Real>& out, const std::string& prefix) const {
    for (std::size_t k = 0; k < kStages; ++k) {
      out.push_back({prefix + ".matrix" + std::to_string(k), matrices_[k]});
      out.push_back({prefix + ".bias" + std::to_string(k), biases_[k]});
      if (k + 1 < kStages) out.push_back({prefix + ".factor" + std::to_string(k), factors_[k]});
    }
  }

 private:
  Tensor<Real> as_rows(const Tensor<Real>& v) const {
    if (v.rank() == 0 || v.dim(0) != channels_) {
      throw ShapeError("density over " + std::to_string(channels_) + " channels got " + to_string(v.shape()));
    }
    return reshape(v, {channels_, 1, v.size() / channels_});
  }

  // Final-stage logits for x in [C,1,M]; optionally also d(logit)/dx.
  Tensor<Real> logits(const Tensor<Real>& x, Tensor<Real>* derivative) const {
    Tensor<Real> u = x;
    Tensor<Real> d;
    if (derivative) d = Tensor<Real>::full(x.shape(), Real(1));
    for (std::size_t k = 0; k < kStages; ++k) {
      const Tensor<Real> h = softplus(matrices_[k]);
      u = add_broadcast(channel_matmul(h, u), biases_[k]);
      if (derivative) d = channel_matmul(h, d);
      if (k + 1 < kStages) {
        const Tensor<Real> a = tanh(factors_[k]);
        const Tensor<Real> t = tanh(u);
        if (derivative) d = d * (mul_broadcast(Real(1) - square(t), a) + Real(1));
        u = u + mul_broadcast(t, a);
      }
    }
    if (derivative) *derivative = d;
    return u;
  }

  std::size_t channels_ = 0;
  std::array<Tensor<Real>, kStages> matrices_;
  std::array<Tensor<Real>, kStages> biases_;
  std::array<Tensor<Real>, kStages - 1> factors_;
};

// ---------------------------------------------------------------------------
// Gaussian conditional

// Noise-convolved zero-mean Gaussian: Phi((v+1/2)/s) - Phi((v-1/2)/s),
// evaluated on the negative half for accuracy, floored.
template <class Real>
Tensor<Real> gaussian_likelihood(const Tensor<Real>& sigma, const Tensor<Real>& v) {
  const Tensor<Real> a = abs(v);
  const Tensor<Real> upper = normal_cdf((Real(0.5) - a) / sigma);
  const Tensor<Real> lower = normal_cdf((Real(-0.5) - a) / sigma);
  return clamp_min(upper - lower, Real(kLikelihoodFloor));
}

// Natural-log density of N(0, sigma^2) at v.
template <class Real>
Tensor<Real> gaussian_log_density(const Tensor<Real>& sigma, const Tensor<Real>& v) {
  const Real half_log_2pi = Real(0.5 * std::log(2 * M_PI));
  return Real(-0.5) * square(v / sigma) - log(sigma) - half_log_2pi;
}

inline double normal_cdf_scalar(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double gaussian_bin_probability(double sigma, double v) {
  const double a = std::abs(v);
  return normal_cdf_scalar((0.5 - a) / sigma) - normal_cdf_scalar((-0.5 - a) / sigma);
}

// Codes latents with a fixed ladder of scales; each element uses the table of
// the smallest ladder scale >= its predicted sigma.
class GaussianConditional {
 public:
  static constexpr double kMinScale = 0.11;
  static constexpr double kMaxScale = 256.0;
  static constexpr std::size_t kLevels = 64;

  static std::vector<double> default_scales() {
    std::vector<double> s(kLevels);
    const double lmin = std::log(kMinScale), lmax = std::log(kMaxScale);
    for (std::size_t i = 0; i < kLevels; ++i) s[i] = std::exp(lmin + (lmax - lmin) * double(i) / double(kLevels - 1));
    return s;
  }

  GaussianConditional() = default;
  GaussianConditional(std::vector<double> scales, std::vector<CdfTable> tables)
      : scales_(std::move(scales)), tables_(std::move(tables)) {}

  static GaussianConditional build(const TableOptions& opts = {}, std::vector<double> scales = default_scales()) {
    check_table_options(opts);
    std::vector<CdfTable> tables;
    for (double s : scales) {
      // smallest integer bound whose upper tail is below tail_mass / 2
      double hi = 0;
      while (normal_cdf_scalar(-(hi + 0.5) / s) > opts.tail_mass / 2) hi += 1;
      double lo = -hi;
      trim_to_resolution(lo, hi, opts.precision, [s](double v) { return gaussian_bin_probability(s, v); });
      if (hi - lo + 3 > double(1u << opts.precision)) throw std::range_error("gaussian table exceeds precision");
      std::vector<double> pmf;
      for (double v = lo; v <= hi; v += 1) pmf.push_back(gaussian_bin_probability(s, v));
      const double tail = normal_cdf_scalar(-(hi + 0.5) / s);
      tables.push_back(make_table(static_cast<std::int32_t>(lo), pmf, tail, tail, opts.precision));
    }
    return GaussianConditional(std::move(scales), std::move(tables));
  }

  const std::vector<double>& scales() const { return scales_; }
  const std::vector<CdfTable>& tables() const { return tables_; }
  bool empty() const { return tables_.empty(); }

  std::uint32_t index_for(double sigma) const {
    std::uint32_t idx = 0;
    while (idx + 1 < scales_.size() && scales_[idx] < sigma) ++idx;
    return idx;
  }

  template <class Real>
  std::vector<std::uint32_t> indexes(const Tensor<Real>& sigma) const {
    std::vector<std::uint32_t> out(sigma.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = index_for(static_cast<double>(sigma[i]));
    return out;
  }

 private:
  std::vector<double> scales_;
  std::vector<CdfTable> tables_;
};

}  // namespace wdsc
