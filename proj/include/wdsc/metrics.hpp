// Image quality metrics on [C, H, W] images with values in [0, 1].
//
// MS-SSIM is assembled from differentiable ops so that 1 - MS-SSIM can serve
// as a training distortion. It uses a 7x7 Gaussian window (std 1.5), five
// dyadic scales with 2x2 average pooling between them, and the standard
// scale exponents; negative contrast-structure terms are clipped to zero.
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdsc/ops.hpp"
#include "wdsc/tensor.hpp"

namespace wdsc {

enum class Metric { kMse, kMsSsim };

inline const char* to_string(Metric m) { return m == Metric::kMsSsim ? "msssim" : "mse"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "mse") return Metric::kMse;
  if (s == "msssim") return Metric::kMsSsim;
  throw std::invalid_argument("unknown metric '" + s + "' (expected mse or msssim)");
}

constexpr double kPsnrCap = 100.0;
constexpr double kPsnrMseFloor = 1e-10;

template <class Real>
Tensor<Real> mse(const Tensor<Real>& a, const Tensor<Real>& b) {
  return mean(square(a - b));
}

template <class Real>
double psnr(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
  }
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  const double m = acc / double(a.size());
  return m < kPsnrMseFloor ? kPsnrCap : 10.0 * std::log10(1.0 / m);
}

struct MsSsimParams {
  static constexpr std::size_t kWindow = 7;
  static constexpr double kSigma = 1.5;
  static constexpr std::size_t kScales = 5;
  static constexpr std::array<double, kScales> kWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  static constexpr double kC1 = 0.01 * 0.01;
  static constexpr double kC2 = 0.03 * 0.03;
};

// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> msssim_window() {
  const std::size_t n = MsSsimParams::kWindow;
  std::vector<double> taps(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(i) - double(n / 2);
    taps[i] = std::exp(-d * d / (2 * MsSsimParams::kSigma * MsSsimParams::kSigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

// Smallest H (or W) for which every scale still fits a window.
inline std::size_t msssim_min_size() {
  return MsSsimParams::kWindow << (MsSsimParams::kScales - 1);
}

template <class Real>
struct SsimMaps {
  Tensor<Real> ssim;  // luminance * contrast-structure, [C, H-6, W-6]
  Tensor<Real> cs;    // contrast-structure only
};

template <class Real>
SsimMaps<Real> ssim_maps(const Tensor<Real>& a, const Tensor<Real>& b) {
  std::vector<Real> taps;
  for (double t : msssim_window()) taps.push_back(static_cast<Real>(t));
  auto blur = [&](const Tensor<Real>& t) { return separable_filter_valid(t, taps); };
  const Tensor<Real> mu_a = blur(a), mu_b = blur(b);
  const Tensor<Real> var_a = blur(square(a)) - square(mu_a);
  const Tensor<Real> var_b = blur(square(b)) - square(mu_b);
  const Tensor<Real> cov = blur(a * b) - mu_a * mu_b;
  const Real c1 = Real(MsSsimParams::kC1), c2 = Real(MsSsimParams::kC2);
  const Tensor<Real> cs = (Real(2) * cov + c2) / (var_a + var_b + c2);
  const Tensor<Real> lum = (Real(2) * mu_a * mu_b + c1) / (square(mu_a) + square(mu_b) + c1);
  return {lum * cs, cs};
}

template <class Real>
Tensor<Real> msssim(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape() || a.rank() != 3) {
    throw ShapeError("msssim: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " must match and be [C,H,W]");
  }
  const std::size_t need = msssim_min_size();
  if (a.dim(1) < need || a.dim(2) < need) {
    throw ShapeError("msssim: image " + to_string(a.shape()) + " too small for " +
                     std::to_string(MsSsimParams::kScales) + " scales of a " +
                     std::to_string(MsSsimParams::kWindow) + "x" + std::to_string(MsSsimParams::kWindow) +
                     " window (need at least " + std::to_string(need) + " pixels per side)");
  }
  Tensor<Real> x = a, y = b;
  Tensor<Real> product;
  for (std::size_t s = 0; s < MsSsimParams::kScales; ++s) {
    const SsimMaps<Real> maps = ssim_maps(x, y);
    const bool last = s + 1 == MsSsimParams::kScales;
    const Tensor<Real> per_channel = mean_per_channel(last ? maps.ssim : maps.cs);
    const Tensor<Real> term = pow(per_channel, Real(MsSsimParams::kWeights[s]));
    product = product.defined() ? product * term : term;
    if (!last) {
      x = avg_pool2(x);
      y = avg_pool2(y);
    }
  }
  return mean(product);
}

template <class Real>
double msssim_value(const Tensor<Real>& a, const Tensor<Real>& b) {
  return static_cast<double>(msssim(a.detach(), b.detach()).item());
}

}  // namespace wdsc
