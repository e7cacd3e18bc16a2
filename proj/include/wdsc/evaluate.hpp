// Rate-distortion evaluation of a frozen model over stereo pairs.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "wdsc/data.hpp"
#include "wdsc/metrics.hpp"
#include "wdsc/wyner_model.hpp"

namespace wdsc {

struct RdPoint {
  double bpp = 0;
  double psnr = 0;
  double msssim = 0;  // NaN when the image is too small for five scales
  double mse = 0;
  double lambda = 0, alpha = 0, beta = 0;
  Variant variant = Variant::kFactorized;
};

enum class SideInput {
  kTrue,  // w = f(y)
  kZero,  // w = f(0): side information withheld
};

template <class Real>
RdPoint evaluate_pair(const WynerModel<Real>& model, const Tensor<Real>& x, const Tensor<Real>& y,
                      SideInput side = SideInput::kTrue) {
  const Bitstream b = compress(model, x);
  const Tensor<Real> s = side == SideInput::kTrue ? y : Tensor<Real>::zeros(y.shape());
  const Tensor<Real> x_hat = decompress(model, b, s);
  RdPoint p;
  p.bpp = bits_per_pixel(b);
  p.psnr = psnr(x, x_hat);
  p.mse = mse(x, x_hat).item();
  p.msssim = x.dim(1) >= msssim_min_size() && x.dim(2) >= msssim_min_size() ? msssim_value(x, x_hat)
                                                                           : std::numeric_limits<double>::quiet_NaN();
  const auto& cfg = model.config();
  p.lambda = cfg.lambda;
  p.alpha = cfg.alpha;
  p.beta = cfg.beta;
  p.variant = cfg.variant;
  return p;
}

template <class Real>
std::vector<RdPoint> evaluate(const WynerModel<Real>& model, const PairList& pairs, SideInput side = SideInput::kTrue) {
  std::vector<RdPoint> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(evaluate_pair(model, cast<Real>(p.left), cast<Real>(p.right), side));
  return out;
}

// Component-wise mean; MS-SSIM stays NaN if any entry is NaN.
inline RdPoint mean_point(const std::vector<RdPoint>& pts) {
  RdPoint m;
  if (pts.empty()) return m;
  for (const auto& p : pts) {
    m.bpp += p.bpp;
    m.psnr += p.psnr;
    m.msssim += p.msssim;
    m.mse += p.mse;
  }
  const double n = double(pts.size());
  m.bpp /= n;
  m.psnr /= n;
  m.msssim /= n;
  m.mse /= n;
  m.lambda = pts.front().lambda;
  m.alpha = pts.front().alpha;
  m.beta = pts.front().beta;
  m.variant = pts.front().variant;
  return m;
}

inline constexpr const char* kRdCsvHeader = "bpp,psnr,msssim,lambda,alpha,beta,variant";

inline void write_rd_csv(const std::filesystem::path& path, const std::vector<RdPoint>& pts) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << kRdCsvHeader << '\n';
  out.precision(10);
  for (const auto& p : pts)
    out << p.bpp << ',' << p.psnr << ',' << p.msssim << ',' << p.lambda << ',' << p.alpha << ',' << p.beta << ','
        << to_string(p.variant) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace wdsc
