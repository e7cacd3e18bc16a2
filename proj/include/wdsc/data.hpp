// Stereo pair datasets: a synthetic correlated-pair generator and a loader
// for folders of left/right PNGs (with optional KITTI-style preprocessing).
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "wdsc/image_io.hpp"
#include "wdsc/random.hpp"
#include "wdsc/tensor.hpp"

namespace wdsc {

template <class Real = float>
struct StereoPair {
  Tensor<Real> left, right;
  std::string name;
};

using PairList = std::vector<StereoPair<float>>;

// ---------------------------------------------------------------------------
// Synthetic pairs

struct SynthOptions {
  std::size_t channels = 3, height = 32, width = 64;
  std::size_t min_disparity = 1, max_disparity = 4;
  double noise = 0.02;
  std::size_t cell = 16;  // spacing of the coarse lattice the base is interpolated from
};

namespace detail {

// Bilinear sample of a [rows, cols] lattice at fractional coordinates.
inline double lattice_sample(const std::vector<double>& g, std::size_t cols, double r, double c) {
  const auto r0 = static_cast<std::size_t>(r), c0 = static_cast<std::size_t>(c);
  const double fr = r - double(r0), fc = c - double(c0);
  const double a = g[r0 * cols + c0], b = g[r0 * cols + c0 + 1];
  const double d = g[(r0 + 1) * cols + c0], e = g[(r0 + 1) * cols + c0 + 1];
  return (1 - fr) * ((1 - fc) * a + fc * b) + fr * ((1 - fc) * d + fc * e);
}

}  // namespace detail

// One pair: a smooth random base scene wider than the view, seen by the left
// view at offset `disparity` and by the right view at offset 0, each with its
// own Gaussian noise.
inline StereoPair<float> synth_pair(Rng& rng, const SynthOptions& o) {
  if (o.height % 16 || o.width % 16 || o.height == 0 || o.width == 0) {
    throw std::invalid_argument("synthetic image sizes must be positive multiples of 16");
  }
  if (o.min_disparity > o.max_disparity) throw std::invalid_argument("min disparity exceeds max disparity");
  const std::size_t disparity = o.min_disparity + rng.below(o.max_disparity - o.min_disparity + 1);
  const std::size_t scene_w = o.width + o.max_disparity;
  // two octaves of lattice noise per channel, mixed across channels so the
  // colours are correlated like natural images
  const std::size_t rows = o.height / o.cell + 2, cols = scene_w / o.cell + 2;
  const std::size_t rows2 = 2 * rows, cols2 = 2 * cols;
  std::vector<double> scene(o.channels * o.height * scene_w);
  std::vector<double> luma(rows * cols), luma2(rows2 * cols2);
  for (auto& v : luma) v = rng.uniform();
  for (auto& v : luma2) v = rng.uniform();
  for (std::size_t c = 0; c < o.channels; ++c) {
    std::vector<double> tint(rows * cols);
    for (auto& v : tint) v = rng.uniform();
    for (std::size_t i = 0; i < o.height; ++i)
      for (std::size_t j = 0; j < scene_w; ++j) {
        const double r = double(i) / double(o.cell), q = double(j) / double(o.cell);
        const double coarse = detail::lattice_sample(luma, cols, r, q);
        const double fine = detail::lattice_sample(luma2, cols2, 2 * r, 2 * q);
        const double colour = detail::lattice_sample(tint, cols, r, q);
        scene[(c * o.height + i) * scene_w + j] = 0.55 * coarse + 0.2 * fine + 0.25 * colour;
      }
  }
  auto render = [&](std::size_t offset) {
    std::vector<float> v(o.channels * o.height * o.width);
    for (std::size_t c = 0; c < o.channels; ++c)
      for (std::size_t i = 0; i < o.height; ++i)
        for (std::size_t j = 0; j < o.width; ++j) {
          const double s = scene[(c * o.height + i) * scene_w + j + offset] + o.noise * rng.normal();
          v[(c * o.height + i) * o.width + j] = float(std::clamp(s, 0.0, 1.0));
        }
    return Tensor<float>::from({o.channels, o.height, o.width}, std::move(v));
  };
  StereoPair<float> p;
  p.left = render(disparity);
  p.right = render(0);
  return p;
}

inline PairList synth_pairs(std::uint64_t seed, std::size_t count, const SynthOptions& o = {}) {
  Rng rng(seed);
  PairList out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(synth_pair(rng, o));
    out.back().name = "synth" + std::to_string(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct KittiGeometry {
  static constexpr std::size_t kCropH = 370, kCropW = 740;
  static constexpr std::size_t kOutH = 128, kOutW = 256;
};

template <class Real>
Tensor<Real> center_crop(const Tensor<Real>& img, std::size_t h, std::size_t w) {
  if (img.dim(1) < h || img.dim(2) < w) {
    throw ShapeError("cannot crop " + to_string(img.shape()) + " to " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t c = img.dim(0), top = (img.dim(1) - h) / 2, left = (img.dim(2) - w) / 2;
  std::vector<Real> v(c * h * w);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) v[(k * h + i) * w + j] = img[(k * img.dim(1) + top + i) * img.dim(2) + left + j];
  return Tensor<Real>::from({c, h, w}, std::move(v));
}

// Bilinear resampling with pixel-center alignment.
template <class Real>
Tensor<Real> resize_bilinear(const Tensor<Real>& img, std::size_t h, std::size_t w) {
  const std::size_t c = img.dim(0), ih = img.dim(1), iw = img.dim(2);
  const double sy = double(ih) / double(h), sx = double(iw) / double(w);
  std::vector<Real> v(c * h * w);
  for (std::size_t i = 0; i < h; ++i) {
    const double y = std::clamp((double(i) + 0.5) * sy - 0.5, 0.0, double(ih - 1));
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, ih - 1);
    const double fy = y - double(y0);
    for (std::size_t j = 0; j < w; ++j) {
      const double x = std::clamp((double(j) + 0.5) * sx - 0.5, 0.0, double(iw - 1));
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, iw - 1);
      const double fx = x - double(x0);
      for (std::size_t k = 0; k < c; ++k) {
        auto at = [&](std::size_t r, std::size_t q) { return double(img[(k * ih + r) * iw + q]); };
        const double top = (1 - fx) * at(y0, x0) + fx * at(y0, x1);
        const double bottom = (1 - fx) * at(y1, x0) + fx * at(y1, x1);
        v[(k * h + i) * w + j] = Real((1 - fy) * top + fy * bottom);
      }
    }
  }
  return Tensor<Real>::from({c, h, w}, std::move(v));
}

template <class Real>
Tensor<Real> kitti_preprocess(const Tensor<Real>& img) {
  return resize_bilinear(center_crop(img, KittiGeometry::kCropH, KittiGeometry::kCropW), KittiGeometry::kOutH,
                         KittiGeometry::kOutW);
}

// ---------------------------------------------------------------------------
// Folder loading
//
// Accepted layouts under the root directory:
//   image_2/<name>.png + image_3/<name>.png   (KITTI stereo convention)
//   left/<name>.png    + right/<name>.png
//   <name>_L.png       + <name>_R.png
// x is the left view, the side image y the right view.

struct LoadOptions {
  bool kitti = false;          // center-crop 370x740 and resize to 128x256
  std::size_t multiple = 16;   // required divisibility after preprocessing
  std::size_t limit = 0;       // 0 = all pairs
};

struct LoadResult {
  PairList pairs;
  std::vector<std::string> warnings;
  std::size_t skipped = 0;
};

namespace detail {

inline std::map<std::string, std::filesystem::path> pngs_in(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
  return out;
}

}  // namespace detail

inline LoadResult load_pairs(const std::filesystem::path& root, const LoadOptions& opts = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory " + root.string() + " does not exist");
  std::map<std::string, std::filesystem::path> left, right;
  for (auto [l, r] : {std::pair{"image_2", "image_3"}, std::pair{"left", "right"}}) {
    if (fs::is_directory(root / l) || fs::is_directory(root / r)) {
      left = detail::pngs_in(root / l);
      right = detail::pngs_in(root / r);
      break;
    }
  }
  if (left.empty() && right.empty()) {
    for (const auto& [stem, path] : detail::pngs_in(root)) {
      if (stem.size() > 2 && stem.ends_with("_L")) left[stem.substr(0, stem.size() - 2)] = path;
      else if (stem.size() > 2 && stem.ends_with("_R")) right[stem.substr(0, stem.size() - 2)] = path;
    }
  }
  LoadResult res;
  for (const auto& [name, path] : right)
    if (!left.count(name)) {
      res.warnings.push_back("right view " + path.string() + " has no left counterpart");
      ++res.skipped;
    }
  for (const auto& [name, lpath] : left) {  // std::map: sorted, deterministic
    const auto it = right.find(name);
    if (it == right.end()) {
      res.warnings.push_back("left view " + lpath.string() + " has no right counterpart");
      ++res.skipped;
      continue;
    }
    try {
      Tensor<float> l = load_image<float>(lpath), r = load_image<float>(it->second);
      if (l.shape() != r.shape()) throw ShapeError("views differ in size");
      if (opts.kitti) {
        l = kitti_preprocess(l);
        r = kitti_preprocess(r);
      }
      if (l.dim(1) % opts.multiple || l.dim(2) % opts.multiple) {
        throw ShapeError("size " + std::to_string(l.dim(1)) + "x" + std::to_string(l.dim(2)) +
                         " is not a multiple of " + std::to_string(opts.multiple));
      }
      res.pairs.push_back({std::move(l), std::move(r), name});
    } catch (const std::exception& e) {
      res.warnings.push_back("skipping pair " + name + ": " + e.what());
      ++res.skipped;
    }
    if (opts.limit && res.pairs.size() == opts.limit) break;
  }
  return res;
}

inline void save_pairs(const std::filesystem::path& root, const PairList& pairs) {
  for (const auto& p : pairs) {
    save_image(root / (p.name + "_L.png"), p.left);
    save_image(root / (p.name + "_R.png"), p.right);
  }
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
  PairList train, validation, test;
};

// Sorted-index split. The full set (2366 pairs) gives 1576 train / 790 test;
// smaller sets keep the same proportion. A validation slice is carved from
// the end of the training part.
inline Split split_pairs(PairList pairs, double validation_fraction = 0.05) {
  constexpr std::size_t kFullTrain = 1576, kFullTest = 790;
  const std::size_t n = pairs.size();
  std::size_t test = n == kFullTrain + kFullTest
                         ? kFullTest
                         : static_cast<std::size_t>(std::llround(double(n) * double(kFullTest) / double(kFullTrain + kFullTest)));
  test = std::min(test, n);
  Split s;
  s.test.assign(pairs.end() - std::ptrdiff_t(test), pairs.end());
  pairs.resize(n - test);
  const std::size_t val = pairs.size() > 1 ? std::max<std::size_t>(1, std::size_t(double(pairs.size()) * validation_fraction)) : 0;
  s.validation.assign(pairs.end() - std::ptrdiff_t(val), pairs.end());
  pairs.resize(pairs.size() - val);
  s.train = std::move(pairs);
  return s;
}

}  // namespace wdsc
