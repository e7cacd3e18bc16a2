// Image-shaped ops on [C, H, W] tensors: strided convolutions, (inverse)
// generalized divisive normalization, quantization noise, and the fixed
// filters used by MS-SSIM.
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wdsc/random.hpp"
#include "wdsc/tensor.hpp"

namespace wdsc {

namespace detail {

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Geometry shared by a strided convolution and its adjoint. The "big" grid is
// the input of a forward conv (output of a transposed conv); the "small" grid
// is strided. A small position o touches big position o*stride - pad + k.
struct ConvGeometry {
  std::size_t small_ch, big_ch, k, stride, pad;
  std::size_t big_h, big_w, small_h, small_w;

  // Range [lo, hi) of small indices whose tap k lands inside [0, big).
  std::pair<std::size_t, std::size_t> valid(std::size_t tap, std::size_t big, std::size_t small) const {
    const long s = static_cast<long>(stride);
    const long off = static_cast<long>(tap) - static_cast<long>(pad);
    long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    long hi = (static_cast<long>(big) - 1 - off) / s + 1;
    if (static_cast<long>(big) - 1 - off < 0) hi = 0;
    hi = std::min(hi, static_cast<long>(small));
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  }

  // Flat big-grid index of small row oy, tap (ky, kx), at small column 0.
  std::ptrdiff_t row_offset(std::size_t oy, std::size_t ky, std::size_t kx) const {
    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
    return iy * static_cast<std::ptrdiff_t>(big_w) + static_cast<std::ptrdiff_t>(kx) -
           static_cast<std::ptrdiff_t>(pad);
  }
};

// Weight accessor. Forward conv stores [small_ch(out), big_ch(in), k, k];
// transposed conv stores [big_ch(out), small_ch(in), k, k].
template <bool kTransposed>
inline std::size_t weight_index(const ConvGeometry& g, std::size_t a, std::size_t b) {
  return (kTransposed ? (b * g.small_ch + a) : (a * g.big_ch + b)) * g.k * g.k;
}

// small[a] += sum_b W(a,b) (*) big[b]
template <bool kTransposed, class Real>
void conv_gather(const ConvGeometry& g, const Real* big, const Real* w, Real* small) {
  const std::size_t bplane = g.big_h * g.big_w, splane = g.small_h * g.small_w;
  for (std::size_t a = 0; a < g.small_ch; ++a)
    for (std::size_t b = 0; b < g.big_ch; ++b) {
      const Real* wab = w + weight_index<kTransposed>(g, a, b);
      const Real* in = big + b * bplane;
      Real* out = small + a * splane;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto [y0, y1] = g.valid(ky, g.big_h, g.small_h);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto [x0, x1] = g.valid(kx, g.big_w, g.small_w);
          const Real wv = wab[ky * g.k + kx];
          for (std::size_t oy = y0; oy < y1; ++oy) {
            const std::ptrdiff_t base = g.row_offset(oy, ky, kx);
            Real* orow = out + oy * g.small_w;
            for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += wv * in[base + std::ptrdiff_t(ox * g.stride)];
          }
        }
      }
    }
}

// big[b] += sum_a W(a,b) (*)^T small[a]
template <bool kTransposed, class Real>
void conv_scatter(const ConvGeometry& g, const Real* small, const Real* w, Real* big) {
  const std::size_t bplane = g.big_h * g.big_w, splane = g.small_h * g.small_w;
  for (std::size_t a = 0; a < g.small_ch; ++a)
    for (std::size_t b = 0; b < g.big_ch; ++b) {
      const Real* wab = w + weight_index<kTransposed>(g, a, b);
      const Real* in = small + a * splane;
      Real* out = big + b * bplane;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto [y0, y1] = g.valid(ky, g.big_h, g.small_h);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto [x0, x1] = g.valid(kx, g.big_w, g.small_w);
          const Real wv = wab[ky * g.k + kx];
          for (std::size_t oy = y0; oy < y1; ++oy) {
            const std::ptrdiff_t base = g.row_offset(oy, ky, kx);
            const Real* irow = in + oy * g.small_w;
            for (std::size_t ox = x0; ox < x1; ++ox) out[base + std::ptrdiff_t(ox * g.stride)] += wv * irow[ox];
          }
        }
      }
    }
}

// gW(a,b) += small[a] . shifted big[b]
template <bool kTransposed, class Real>
void conv_weight_grad(const ConvGeometry& g, const Real* small, const Real* big, Real* gw) {
  const std::size_t bplane = g.big_h * g.big_w, splane = g.small_h * g.small_w;
  for (std::size_t a = 0; a < g.small_ch; ++a)
    for (std::size_t b = 0; b < g.big_ch; ++b) {
      Real* wab = gw + weight_index<kTransposed>(g, a, b);
      const Real* sp = small + a * splane;
      const Real* bp = big + b * bplane;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto [y0, y1] = g.valid(ky, g.big_h, g.small_h);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto [x0, x1] = g.valid(kx, g.big_w, g.small_w);
          Real acc = 0;
          for (std::size_t oy = y0; oy < y1; ++oy) {
            const std::ptrdiff_t base = g.row_offset(oy, ky, kx);
            const Real* srow = sp + oy * g.small_w;
            for (std::size_t ox = x0; ox < x1; ++ox) acc += srow[ox] * bp[base + std::ptrdiff_t(ox * g.stride)];
          }
          wab[ky * g.k + kx] += acc;
        }
      }
    }
}

template <class Real>
void add_bias(Real* out, const Real* bias, std::size_t channels, std::size_t plane) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bias[c];
}

template <class Real>
void bias_grad(const Real* g, Real* gb, std::size_t channels, std::size_t plane) {
  for (std::size_t c = 0; c < channels; ++c) {
    Real acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += g[c * plane + i];
    gb[c] += acc;
  }
}

template <class Real>
void check_conv_args(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                     std::size_t stride, const char* op) {
  if (x.rank() != 3) throw ShapeError(std::string(op) + ": input must be [C,H,W], got " + to_string(x.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0) {
    throw ShapeError(std::string(op) + ": weight must be [Co,Ci,k,k] with odd k, got " + to_string(w.shape()));
  }
  if (w.dim(1) != x.dim(0)) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(0)) +
                     " channels, weight expects " + std::to_string(w.dim(1)));
  }
  const std::size_t out_ch = w.dim(0);
  if (b.rank() != 1 || b.dim(0) != out_ch) {
    throw ShapeError(std::string(op) + ": bias must be [" + std::to_string(out_ch) + "]");
  }
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be >= 1");
}

}  // namespace detail

// "Same"-padded strided convolution. weight: [C_out, C_in, k, k]; output is
// [C_out, ceil(H/stride), ceil(W/stride)].
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    std::size_t stride) {
  detail::check_conv_args(x, weight, bias, stride, "conv2d");
  const std::size_t k = weight.dim(2);
  const detail::ConvGeometry g{weight.dim(0), x.dim(0), k, stride, k / 2,
                               x.dim(1), x.dim(2), detail::ceil_div(x.dim(1), stride),
                               detail::ceil_div(x.dim(2), stride)};
  std::vector<Real> out(g.small_ch * g.small_h * g.small_w, Real(0));
  detail::add_bias(out.data(), bias.data().data(), g.small_ch, g.small_h * g.small_w);
  detail::conv_gather<false>(g, x.data().data(), weight.data().data(), out.data());
  return detail::make_result<Real>({g.small_ch, g.small_h, g.small_w}, std::move(out), "conv2d",
                                   {x, weight, bias}, [g](Node<Real>& s) {
                                     const Real* gy = s.grad.data();
                                     if (Real* gx = detail::grad_of(s, 0))
                                       detail::conv_scatter<false>(g, gy, s.inputs[1]->value.data(), gx);
                                     if (Real* gw = detail::grad_of(s, 1))
                                       detail::conv_weight_grad<false>(g, gy, s.inputs[0]->value.data(), gw);
                                     if (Real* gb = detail::grad_of(s, 2))
                                       detail::bias_grad(gy, gb, g.small_ch, g.small_h * g.small_w);
                                   });
}

// Transposed convolution, the adjoint of conv2d with the same stride and
// padding, with output padding chosen so that the output is [C_out, H*stride,
// W*stride]. weight: [C_out, C_in, k, k].
template <class Real>
Tensor<Real> conv_transpose2d(const Tensor<Real>& x, const Tensor<Real>& weight,
                              const Tensor<Real>& bias, std::size_t stride) {
  detail::check_conv_args(x, weight, bias, stride, "conv_transpose2d");
  const std::size_t k = weight.dim(2);
  const detail::ConvGeometry g{x.dim(0), weight.dim(0), k, stride, k / 2,
                               x.dim(1) * stride, x.dim(2) * stride, x.dim(1), x.dim(2)};
  std::vector<Real> out(g.big_ch * g.big_h * g.big_w, Real(0));
  detail::add_bias(out.data(), bias.data().data(), g.big_ch, g.big_h * g.big_w);
  detail::conv_scatter<true>(g, x.data().data(), weight.data().data(), out.data());
  return detail::make_result<Real>({g.big_ch, g.big_h, g.big_w}, std::move(out), "conv_transpose2d",
                                   {x, weight, bias}, [g](Node<Real>& s) {
                                     const Real* gy = s.grad.data();
                                     if (Real* gx = detail::grad_of(s, 0))
                                       detail::conv_gather<true>(g, gy, s.inputs[1]->value.data(), gx);
                                     if (Real* gw = detail::grad_of(s, 1))
                                       detail::conv_weight_grad<true>(g, s.inputs[0]->value.data(), gy, gw);
                                     if (Real* gb = detail::grad_of(s, 2))
                                       detail::bias_grad(gy, gb, g.big_ch, g.big_h * g.big_w);
                                   });
}

// Generalized divisive normalization over channels at each pixel:
//   forward: y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)
//   inverse: y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2)
// beta must be positive and gamma non-negative; callers reparameterize.
template <class Real>
Tensor<Real> gdn(const Tensor<Real>& x, const Tensor<Real>& beta, const Tensor<Real>& gamma, bool inverse) {
  if (x.rank() != 3) throw ShapeError("gdn: input must be [C,H,W], got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  if (beta.shape() != Shape{c} || gamma.shape() != Shape{c, c}) {
    throw ShapeError("gdn: beta must be [C] and gamma [C,C] for C=" + std::to_string(c));
  }
  const auto xv = x.data();
  std::vector<Real> sq(x.size());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = xv[i] * xv[i];
  // root[i] = sqrt(beta_i + sum_j gamma_ij x_j^2), per pixel
  std::vector<Real> root(x.size());
  for (std::size_t i = 0; i < c; ++i) {
    Real* r = &root[i * plane];
    std::fill(r, r + plane, beta[i]);
    for (std::size_t j = 0; j < c; ++j) {
      const Real gij = gamma[i * c + j];
      if (gij == Real(0)) continue;
      const Real* s = &sq[j * plane];
      for (std::size_t p = 0; p < plane; ++p) r[p] += gij * s[p];
    }
    for (std::size_t p = 0; p < plane; ++p) r[p] = std::sqrt(r[p]);
  }
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = inverse ? xv[i] * root[i] : xv[i] / root[i];

  return detail::make_result<Real>(
      x.shape(), std::move(out), inverse ? "igdn" : "gdn", {x, beta, gamma},
      [c, plane, inverse, root = std::move(root), sq = std::move(sq)](Node<Real>& s) {
        const auto& xv = s.inputs[0]->value;
        const auto& gm = s.inputs[2]->value;
        const Real* g = s.grad.data();
        // t_i = g_i x_i / root_i^3 (forward) or g_i x_i / root_i (inverse)
        std::vector<Real> t(xv.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
          const Real r = root[i];
          t[i] = inverse ? g[i] * xv[i] / r : g[i] * xv[i] / (r * r * r);
        }
        const Real sign = inverse ? Real(1) : Real(-1);
        if (Real* gx = detail::grad_of(s, 0)) {
          for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += inverse ? g[i] * root[i] : g[i] / root[i];
          for (std::size_t k = 0; k < c; ++k) {
            std::vector<Real> acc(plane, Real(0));
            for (std::size_t i = 0; i < c; ++i) {
              const Real gik = gm[i * c + k];
              if (gik == Real(0)) continue;
              const Real* ti = &t[i * plane];
              for (std::size_t p = 0; p < plane; ++p) acc[p] += gik * ti[p];
            }
            for (std::size_t p = 0; p < plane; ++p) gx[k * plane + p] += sign * xv[k * plane + p] * acc[p];
          }
        }
        if (Real* gb = detail::grad_of(s, 1)) {
          for (std::size_t i = 0; i < c; ++i) {
            Real acc = 0;
            for (std::size_t p = 0; p < plane; ++p) acc += t[i * plane + p];
            gb[i] += sign * Real(0.5) * acc;
          }
        }
        if (Real* gg = detail::grad_of(s, 2)) {
          for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              Real acc = 0;
              const Real* ti = &t[i * plane];
              const Real* sj = &sq[j * plane];
              for (std::size_t p = 0; p < plane; ++p) acc += ti[p] * sj[p];
              gg[i * c + j] += sign * Real(0.5) * acc;
            }
        }
      });
}

// x + u with u ~ Uniform[-0.5, 0.5) i.i.d.; the noise is a constant for
// differentiation, so gradients pass straight through.
template <class Real>
Tensor<Real> add_uniform_noise(const Tensor<Real>& x, Rng& rng) {
  std::vector<Real> noise(x.size());
  for (auto& u : noise) u = static_cast<Real>(rng.uniform() - 0.5);
  return x + Tensor<Real>::from(x.shape(), std::move(noise));
}

// Depthwise separable "valid" filtering with a 1-D kernel applied along both
// axes: [C,H,W] -> [C, H-k+1, W-k+1].
template <class Real>
Tensor<Real> separable_filter_valid(const Tensor<Real>& x, const std::vector<Real>& kernel) {
  const std::size_t k = kernel.size();
  if (x.rank() != 3 || x.dim(1) < k || x.dim(2) < k) {
    throw ShapeError("separable_filter_valid: input " + to_string(x.shape()) + " smaller than window " +
                     std::to_string(k));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  auto filter = [=](const Real* in, Real* out) {
    std::vector<Real> tmp(h * ow);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Real* src = in + ch * h * w;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          Real acc = 0;
          for (std::size_t t = 0; t < k; ++t) acc += kernel[t] * src[y * w + xo + t];
          tmp[y * ow + xo] = acc;
        }
      Real* dst = out + ch * oh * ow;
      for (std::size_t yo = 0; yo < oh; ++yo)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          Real acc = 0;
          for (std::size_t t = 0; t < k; ++t) acc += kernel[t] * tmp[(yo + t) * ow + xo];
          dst[yo * ow + xo] = acc;
        }
    }
  };
  std::vector<Real> out(c * oh * ow);
  filter(x.data().data(), out.data());
  return detail::make_result<Real>({c, oh, ow}, std::move(out), "separable_filter", {x},
                                   [=](Node<Real>& s) {
                                     Real* gx = detail::grad_of(s, 0);
                                     if (!gx) return;
                                     std::vector<Real> tmp(h * ow);
                                     for (std::size_t ch = 0; ch < c; ++ch) {
                                       const Real* g = s.grad.data() + ch * oh * ow;
                                       std::fill(tmp.begin(), tmp.end(), Real(0));
                                       for (std::size_t yo = 0; yo < oh; ++yo)
                                         for (std::size_t t = 0; t < k; ++t)
                                           for (std::size_t xo = 0; xo < ow; ++xo)
                                             tmp[(yo + t) * ow + xo] += kernel[t] * g[yo * ow + xo];
                                       Real* dst = gx + ch * h * w;
                                       for (std::size_t y = 0; y < h; ++y)
                                         for (std::size_t xo = 0; xo < ow; ++xo)
                                           for (std::size_t t = 0; t < k; ++t)
                                             dst[y * w + xo + t] += kernel[t] * tmp[y * ow + xo];
                                     }
                                   });
}

// 2x2 average pooling; odd trailing rows/columns are dropped.
template <class Real>
Tensor<Real> avg_pool2(const Tensor<Real>& x) {
  if (x.rank() != 3) throw ShapeError("avg_pool2: input must be [C,H,W]");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), oh = h / 2, ow = w / 2;
  std::vector<Real> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const std::size_t base = ch * h * w + 2 * y * w + 2 * xo;
        out[(ch * oh + y) * ow + xo] = Real(0.25) * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
      }
  return detail::make_result<Real>({c, oh, ow}, std::move(out), "avg_pool2", {x}, [=](Node<Real>& s) {
    Real* gx = detail::grad_of(s, 0);
    if (!gx) return;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          const Real g = Real(0.25) * s.grad[(ch * oh + y) * ow + xo];
          const std::size_t base = ch * h * w + 2 * y * w + 2 * xo;
          gx[base] += g;
          gx[base + 1] += g;
          gx[base + w] += g;
          gx[base + w + 1] += g;
        }
  });
}

}  // namespace wdsc
