// Analysis, synthesis and hyperprior transform stacks.
//
// Layer layouts (C = channel width, 192 at full scale):
//   analysis         conv 5x5/2 down, GDN, x3, then conv 5x5/2 down
//   synthesis        conv 5x5/2 up, IGDN, x3, then conv 5x5/2 up to 3 channels
//   hyper-analysis   conv 3x3/1, ReLU, conv 5x5/2 down, ReLU, conv 5x5/2 down
//   hyper-synthesis  conv 5x5/2 up, ReLU, conv 5x5/2 up, ReLU, conv 3x3/1
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wdsc/ops.hpp"
#include "wdsc/random.hpp"
#include "wdsc/tensor.hpp"

namespace wdsc {

enum class StackKind { kAnalysis, kSynthesis, kHyperAnalysis, kHyperSynthesis };
enum class LayerKind { kConv, kConvTransposed, kGdn, kIgdn, kRelu };

inline const char* to_string(StackKind kind) {
  switch (kind) {
    case StackKind::kAnalysis: return "analysis";
    case StackKind::kSynthesis: return "synthesis";
    case StackKind::kHyperAnalysis: return "hyper-analysis";
    case StackKind::kHyperSynthesis: return "hyper-synthesis";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind;
  std::size_t out_channels = 0;  // conv layers only
  std::size_t kernel = 0;
  std::size_t stride = 1;
};

template <class Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

template <class Real>
using ParameterList = std::vector<NamedTensor<Real>>;

constexpr double kGdnBetaFloor = 1e-6;
constexpr double kGdnGammaInit = 0.1;
// softplus cannot reach zero, so off-diagonal couplings start small instead.
constexpr double kGdnGammaOffDiagonalInit = 1e-3;
constexpr double kScaleFloor = 1e-6;

template <class Real>
class TransformStack {
 public:
  TransformStack() = default;

  TransformStack(StackKind kind, std::size_t in_channels, std::size_t width, std::size_t out_channels,
                 Rng& rng)
      : kind_(kind), in_channels_(in_channels), out_channels_(out_channels) {
    switch (kind) {
      case StackKind::kAnalysis:
        for (int i = 0; i < 4; ++i) {
          add_conv(LayerKind::kConv, i == 3 ? out_channels : width, 5, 2, rng);
          if (i < 3) add_gdn(LayerKind::kGdn);
        }
        break;
      case StackKind::kSynthesis:
        for (int i = 0; i < 4; ++i) {
          add_conv(LayerKind::kConvTransposed, i == 3 ? out_channels : width, 5, 2, rng);
          if (i < 3) add_gdn(LayerKind::kIgdn);
        }
        break;
      case StackKind::kHyperAnalysis:
        add_conv(LayerKind::kConv, width, 3, 1, rng);
        add_relu();
        add_conv(LayerKind::kConv, width, 5, 2, rng);
        add_relu();
        add_conv(LayerKind::kConv, out_channels, 5, 2, rng);
        break;
      case StackKind::kHyperSynthesis:
        add_conv(LayerKind::kConvTransposed, width, 5, 2, rng);
        add_relu();
        add_conv(LayerKind::kConvTransposed, width, 5, 2, rng);
        add_relu();
        add_conv(LayerKind::kConvTransposed, out_channels, 3, 1, rng);
        break;
    }
  }

  StackKind kind() const { return kind_; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return out_channels_; }

  std::vector<LayerSpec> layers() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l.spec);
    return out;
  }

  // Total spatial scale factor (downsampling for analysis stacks).
  std::size_t scale_factor() const {
    std::size_t f = 1;
    for (const auto& l : layers_) f *= l.spec.stride;
    return f;
  }

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    if (x.rank() != 3 || x.dim(0) != in_channels_) {
      throw ShapeError(std::string(to_string(kind_)) + " stack expects " + std::to_string(in_channels_) +
                       " input channels, got " + to_string(x.shape()));
    }
    Tensor<Real> h = x;
    for (const auto& l : layers_) {
      switch (l.spec.kind) {
        case LayerKind::kConv: h = conv2d(h, l.weight, l.bias, l.spec.stride); break;
        case LayerKind::kConvTransposed: h = conv_transpose2d(h, l.weight, l.bias, l.spec.stride); break;
        case LayerKind::kGdn:
        case LayerKind::kIgdn:
          h = gdn(h, softplus(l.beta_raw) + Real(kGdnBetaFloor), softplus(l.gamma_raw),
                  l.spec.kind == LayerKind::kIgdn);
          break;
        case LayerKind::kRelu: h = relu(h); break;
      }
    }
    return h;
  }

  void collect(ParameterList<Real>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      const std::string p = prefix + "." + std::to_string(i) + ".";
      if (l.weight.defined()) {
        out.push_back({p + "weight", l.weight});
        out.push_back({p + "bias", l.bias});
      }
      if (l.beta_raw.defined()) {
        out.push_back({p + "beta", l.beta_raw});
        out.push_back({p + "gamma", l.gamma_raw});
      }
    }
  }

 private:
  struct Layer {
    LayerSpec spec;
    Tensor<Real> weight, bias;
    Tensor<Real> beta_raw, gamma_raw;
  };

  std::size_t current_channels() const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      if (it->spec.out_channels) return it->spec.out_channels;
    return in_channels_;
  }

  // Variance scaling on fan-in, uniform. A transposed conv sees k*k/stride^2
  // taps per input channel at each output position.
  void add_conv(LayerKind kind, std::size_t out, std::size_t k, std::size_t stride, Rng& rng) {
    const std::size_t in = current_channels();
    double fan_in = static_cast<double>(in * k * k);
    if (kind == LayerKind::kConvTransposed) fan_in /= static_cast<double>(stride * stride);
    const double limit = std::sqrt(3.0 / fan_in);
    std::vector<Real> w(out * in * k * k);
    for (auto& v : w) v = static_cast<Real>(rng.uniform(-limit, limit));
    Layer l{{kind, out, k, stride}, Tensor<Real>::from({out, in, k, k}, std::move(w), true),
            Tensor<Real>::zeros({out}, true), {}, {}};
    layers_.push_back(std::move(l));
  }

  void add_gdn(LayerKind kind) {
    const std::size_t c = current_channels();
    const Real beta0 = softplus_inverse(Real(1.0 - kGdnBetaFloor));
    std::vector<Real> gamma(c * c, softplus_inverse(Real(kGdnGammaOffDiagonalInit)));
    for (std::size_t i = 0; i < c; ++i) gamma[i * c + i] = softplus_inverse(Real(kGdnGammaInit));
    Layer l{{kind, 0, 0, 1}, {}, {}, Tensor<Real>::full({c}, beta0, true),
            Tensor<Real>::from({c, c}, std::move(gamma), true)};
    layers_.push_back(std::move(l));
  }

  void add_relu() { layers_.push_back(Layer{{LayerKind::kRelu, 0, 0, 1}, {}, {}, {}, {}}); }

  StackKind kind_ = StackKind::kAnalysis;
  std::size_t in_channels_ = 0;
  std::size_t out_channels_ = 0;
  std::vector<Layer> layers_;
};

// Image -> latent. H and W must be multiples of the stack's downsampling.
template <class Real>
Tensor<Real> analyze(const Tensor<Real>& image, const TransformStack<Real>& stack) {
  const std::size_t f = stack.scale_factor();
  if (image.rank() != 3 || image.dim(1) % f != 0 || image.dim(2) % f != 0) {
    throw ShapeError("analysis input " + to_string(image.shape()) + " must have H and W divisible by " +
                     std::to_string(f) + "; pad or crop first");
  }
  return stack(image);
}

// Channel-concatenated latents -> image.
template <class Real>
Tensor<Real> synthesize(const Tensor<Real>& latents, const TransformStack<Real>& stack) {
  return stack(latents);
}

// Common information w = f(y); identical to analyze, kept separate for
// readability at call sites.
template <class Real>
Tensor<Real> common_info(const Tensor<Real>& side, const TransformStack<Real>& f) {
  return analyze(side, f);
}

// Hyper-analysis runs on latent magnitudes.
template <class Real>
Tensor<Real> hyper_analyze(const Tensor<Real>& latent, const TransformStack<Real>& stack) {
  const std::size_t f = stack.scale_factor();
  if (latent.rank() != 3 || latent.dim(1) % f != 0 || latent.dim(2) % f != 0) {
    throw ShapeError("hyper-analysis input " + to_string(latent.shape()) + " must have H and W divisible by " +
                     std::to_string(f));
  }
  return stack(abs(latent));
}

// Hyper-latent -> positive per-element standard deviations.
template <class Real>
Tensor<Real> hyper_synthesize(const Tensor<Real>& hyper, const TransformStack<Real>& stack) {
  return softplus(stack(hyper)) + Real(kScaleFloor);
}

}  // namespace wdsc
